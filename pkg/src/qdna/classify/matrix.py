"""Session-by-(circuit, metric) feature matrices built from feature files."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ..features import FEATURE_FIELDS, FEATURE_FILE_SUFFIX, read_feature_file
from ..provenance import ARTIFACT_SUFFIX

DEFAULT_METRICS = ("p0", "entropy", "js_uniform", "gini", "parity_bias")


@dataclass
class FeatureMatrix:
    X: np.ndarray
    y: np.ndarray
    column_ids: list[tuple[str, str]]
    sessions: list[tuple[str, str]]

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.X)

    @property
    def circuits(self) -> list[str]:
        return list(dict.fromkeys(c for c, _ in self.column_ids))


def list_feature_files(directory) -> list[Path]:
    """Feature files (or provenance artifacts) in ``directory``, sorted by name."""
    directory = Path(directory)
    files = sorted(directory.glob(f"*{FEATURE_FILE_SUFFIX}"))
    return files or sorted(directory.glob(f"*{ARTIFACT_SUFFIX}"))


def _load(files):
    return [read_feature_file(f) for f in files]


def assemble_matrix(
    files_a: Sequence,
    files_b: Sequence,
    metrics: Sequence[str] = DEFAULT_METRICS,
    min_presence: float = 1.0,
) -> FeatureMatrix:
    """Stack both devices' sessions over the circuits common enough to both.

    A circuit is kept when it appears in at least ``min_presence`` of each
    device's sessions. Labels are the device ids found in the files.
    """
    metrics = list(metrics)
    unknown = [m for m in metrics if m not in FEATURE_FIELDS]
    if unknown:
        raise ValueError(f"unknown metrics {unknown}")
    if not files_a or not files_b:
        raise ValueError("both devices need at least one feature file")
    sessions_a, sessions_b = _load(files_a), _load(files_b)

    def present(sessions):
        counts = {}
        for _, _, feats in sessions:
            for c in feats:
                counts[c] = counts.get(c, 0) + 1
        need = math.ceil(min_presence * len(sessions) - 1e-9)
        return {c for c, k in counts.items() if k >= need}

    circuits = sorted(present(sessions_a) & present(sessions_b))
    if not circuits:
        raise ValueError("no circuits pass the presence filter for both devices")
    columns = [(c, m) for c in circuits for m in metrics]
    rows, labels, ids = [], [], []
    for device_id, session_id, feats in sessions_a + sessions_b:
        rows.append([float(getattr(feats[c], m)) if c in feats else np.nan for c, m in columns])
        labels.append(device_id)
        ids.append((device_id, session_id))
    return FeatureMatrix(np.array(rows, dtype=float), np.array(labels), columns, ids)

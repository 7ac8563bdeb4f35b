"""Statistical fingerprint of a counts table and cross-session metrics.

All logarithms are natural, so entropies and divergences are in nats. The
uniform reference always spans the full outcome space ``K = 2**n_bits``;
outcomes that were never observed still contribute ``1/K`` to TV and JS.
"""
from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .sim import CountsTable

FEATURE_FIELDS = (
    "p0",
    "p1",
    "entropy",
    "entropy_norm",
    "perplexity",
    "gini",
    "parity_bias",
    "bernoulli_var",
    "tv_uniform",
    "kl_uniform",
    "js_uniform",
    "support",
)
DEFAULT_DRIFT_METRIC = "entropy"


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class ProbDist:
    p: dict[str, float]
    K: int

    def __post_init__(self):
        widths = {len(k) for k in self.p}
        if len(widths) > 1:
            raise FeatureError(f"inconsistent outcome lengths {sorted(widths)}")
        if self.K < max(len(self.p), 1):
            raise FeatureError("K smaller than the number of listed outcomes")
        if any(v < 0 for v in self.p.values()):
            raise FeatureError("negative probability")
        total = math.fsum(self.p.values())
        if abs(total - 1.0) > 1e-9:
            raise FeatureError(f"probabilities sum to {total}")

    __hash__ = None

    @property
    def n_bits(self) -> int:
        return int(round(math.log2(self.K)))

    def vector(self) -> np.ndarray:
        """Probabilities over all K outcomes, indexed by the outcome's integer value."""
        out = np.zeros(self.K)
        for key, value in self.p.items():
            out[int(key, 2) if key else 0] = value
        return out


def distribution_from_counts(counts: CountsTable) -> ProbDist:
    if counts.shots < 1:
        raise FeatureError("shots must be >= 1")
    n = counts.n_bits
    return ProbDist({k: v / counts.shots for k, v in counts.counts.items()}, K=2**n)


@dataclass(frozen=True)
class FeatureVector:
    p0: float
    p1: float
    entropy: float
    entropy_norm: float
    perplexity: float
    gini: float
    parity_bias: float
    bernoulli_var: float
    tv_uniform: float
    kl_uniform: float
    js_uniform: float
    support: int

    def to_dict(self) -> dict:
        return {f: getattr(self, f) for f in FEATURE_FIELDS}

    @classmethod
    def from_dict(cls, data: Mapping) -> FeatureVector:
        if set(data) != set(FEATURE_FIELDS):
            raise FeatureError(f"feature keys {sorted(data)} do not match {FEATURE_FIELDS}")
        return cls(**data)

    def range_violations(self, K: int) -> list[str]:
        tol = 1e-12
        ln_k = math.log(K)
        checks = {
            "p0": 0 <= self.p0 <= 1,
            "p1": 0 <= self.p1 <= 1,
            "entropy": -tol <= self.entropy <= ln_k + tol,
            "entropy_norm": -tol <= self.entropy_norm <= 1 + tol,
            "perplexity": 1 - tol <= self.perplexity <= K * (1 + tol),
            "gini": -tol <= self.gini <= 1 - 1 / K + tol,
            "parity_bias": -1 <= self.parity_bias <= 1,
            "bernoulli_var": 0 <= self.bernoulli_var <= 0.25,
            "tv_uniform": -tol <= self.tv_uniform <= 1 - 1 / K + tol,
            "kl_uniform": -tol <= self.kl_uniform <= ln_k + tol,
            "js_uniform": -tol <= self.js_uniform <= math.log(2) + tol,
            "support": 1 <= self.support <= K,
        }
        return [name for name, ok in checks.items() if not ok]


def _plogp_ratio(p, q):
    """sum p ln(p/q) with 0 ln 0 = 0."""
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def divergences(dist: ProbDist) -> tuple[float, float, float]:
    """(TV, KL, JS) of ``dist`` against the uniform distribution on K outcomes."""
    p = dist.vector()
    u = np.full(dist.K, 1.0 / dist.K)
    tv = 0.5 * float(np.sum(np.abs(p - u)))
    kl = _plogp_ratio(p, u)
    m = 0.5 * (p + u)
    js = 0.5 * _plogp_ratio(p, m) + 0.5 * _plogp_ratio(u, m)
    return tv, kl, js


def fingerprint(dist: ProbDist) -> FeatureVector:
    p = np.array([v for v in dist.p.values() if v > 0])
    entropy = float(-np.sum(p * np.log(p))) + 0.0
    ln_k = math.log(dist.K)
    p0 = float(dist.p.get("0" * dist.n_bits, 0.0))
    even = math.fsum(v for k, v in dist.p.items() if k.count("1") % 2 == 0)
    tv, kl, js = divergences(dist)
    return FeatureVector(
        p0=p0,
        p1=1.0 - p0,
        entropy=entropy,
        entropy_norm=entropy / ln_k if dist.K > 1 else 0.0,
        perplexity=math.exp(entropy),
        gini=1.0 - float(np.sum(p * p)),
        parity_bias=2.0 * even - 1.0,
        bernoulli_var=p0 * (1.0 - p0),
        tv_uniform=tv,
        kl_uniform=kl,
        js_uniform=js,
        support=int(p.size),
    )


def counts_fingerprint(counts: CountsTable) -> FeatureVector:
    return fingerprint(distribution_from_counts(counts))


# ---------------------------------------------------------------- sessions

SessionFeatures = Mapping[str, FeatureVector]


def _metric_value(fv: FeatureVector, metric: str) -> float:
    if metric not in FEATURE_FIELDS:
        raise FeatureError(f"unknown metric {metric!r}")
    return float(getattr(fv, metric))


@dataclass(frozen=True)
class DriftReport:
    per_circuit_delta: dict[str, float]
    total: float
    metric: str

    __hash__ = None


def drift_index(curr: SessionFeatures, prev: SessionFeatures, metric: str = DEFAULT_DRIFT_METRIC) -> DriftReport:
    """Sum over shared circuits of ``|m_c(curr) - m_c(prev)|``."""
    if metric not in FEATURE_FIELDS:
        raise FeatureError(f"unknown metric {metric!r}")
    shared = sorted(set(curr) & set(prev))
    if not shared:
        raise FeatureError("sessions share no circuits")
    deltas = {c: abs(_metric_value(curr[c], metric) - _metric_value(prev[c], metric)) for c in shared}
    return DriftReport(deltas, math.fsum(deltas.values()), metric)


@dataclass(frozen=True)
class DistanceMatrix:
    sessions: list[str]
    D: np.ndarray
    metric: str

    __hash__ = None


def session_distance_matrix(
    sessions: Sequence[tuple[str, SessionFeatures]], metric: str = DEFAULT_DRIFT_METRIC
) -> DistanceMatrix:
    """Pairwise L1 distance between sessions over the circuits each pair shares.

    A pair with no shared circuit gets distance 0.
    """
    if metric not in FEATURE_FIELDS:
        raise FeatureError(f"unknown metric {metric!r}")
    if len(sessions) < 2:
        raise FeatureError("need at least 2 sessions")
    ids = [sid for sid, _ in sessions]
    feats = [f for _, f in sessions]
    n = len(sessions)
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            shared = set(feats[i]) & set(feats[j])
            D[i, j] = D[j, i] = math.fsum(
                abs(_metric_value(feats[i][c], metric) - _metric_value(feats[j][c], metric)) for c in shared
            )
    return DistanceMatrix(ids, D, metric)


def aggregate_session(features: SessionFeatures, metric: str, how: str = "mean") -> float:
    """Collapse one session to a single value of ``metric`` across its circuits."""
    values = [_metric_value(fv, metric) for fv in features.values()]
    if how == "mean":
        return float(np.mean(values))
    if how == "median":
        return float(np.median(values))
    raise FeatureError(f"unknown aggregation {how!r}")


@dataclass(frozen=True)
class CorrelationMatrix:
    metrics: list[str]
    R: np.ndarray
    constant: list[str]

    __hash__ = None


def correlation_matrix(table, metrics: Sequence[str] | None = None) -> CorrelationMatrix:
    """Pearson correlation between metric columns.

    ``table`` is a sequence of FeatureVectors or a 2-D array (rows x metrics).
    Constant columns get correlation 0 with everything, themselves included,
    and are listed in ``constant``.
    """
    rows = list(table)
    if rows and isinstance(rows[0], FeatureVector):
        metrics = list(metrics or FEATURE_FIELDS)
        X = np.array([[_metric_value(r, m) for m in metrics] for r in rows], dtype=float)
    else:
        X = np.asarray(rows, dtype=float)
        metrics = list(metrics) if metrics is not None else [f"col{i}" for i in range(X.shape[1])]
    if X.ndim != 2 or X.shape[0] < 3:
        raise FeatureError("correlation needs at least 3 rows")
    if X.shape[1] < 2:
        raise FeatureError("correlation needs at least 2 metrics")
    centred = X - X.mean(axis=0)
    scale = np.sqrt(np.sum(centred**2, axis=0))
    const = scale <= 1e-12 * np.maximum(1.0, np.abs(X).max(axis=0))
    safe = np.where(const, 1.0, scale)
    Z = centred / safe
    R = np.clip(Z.T @ Z, -1.0, 1.0)
    R[const, :] = 0.0
    R[:, const] = 0.0
    flagged = [m for m, c in zip(metrics, const) if c]
    if flagged:
        warnings.warn(f"constant columns given zero correlation: {flagged}", stacklevel=2)
    return CorrelationMatrix(metrics, R, flagged)


# ---------------------------------------------------------------- feature files

FEATURE_FILE_SUFFIX = ".features.json"


def write_feature_file(path, device_id: str, session_id: str, features: SessionFeatures) -> Path:
    path = Path(path)
    doc = {
        "device_id": device_id,
        "session_id": session_id,
        "features": {c: features[c].to_dict() for c in sorted(features)},
    }
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    return path


def read_feature_file(path) -> tuple[str, str, dict[str, FeatureVector]]:
    """Read a feature file, or the features embedded in a provenance artifact."""
    doc = json.loads(Path(path).read_text())
    if "record" in doc:
        doc = doc["record"]
    try:
        features = {c: FeatureVector.from_dict(v) for c, v in doc["features"].items()}
        return doc["device_id"], doc["session_id"], features
    except (KeyError, TypeError) as exc:
        raise FeatureError(f"{path}: not a feature file ({exc})") from exc


def feature_rows(device_id: str, session_id: str, features: SessionFeatures) -> list[dict]:
    return [
        {"device_id": device_id, "session_id": session_id, "circuit_id": c, **features[c].to_dict()}
        for c in sorted(features)
    ]


def rows_to_csv(rows: Sequence[Mapping], columns: Sequence[str] | None = None) -> str:
    if not rows and columns is None:
        return ""
    columns = list(columns or rows[0].keys())
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


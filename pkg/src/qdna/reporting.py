"""Plot-ready drift tables over one device's ordered sessions."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .features import (
    DEFAULT_DRIFT_METRIC,
    FEATURE_FIELDS,
    FeatureError,
    SessionFeatures,
    aggregate_session,
    drift_index,
    rows_to_csv,
    session_distance_matrix,
)

SERIES_COLUMNS = ("device_id", "run", "session_id", "metric", "mean", "median")
DELTA_COLUMNS = ("device_id", "pair", "prev_session", "session_id", "circuit_id", "metric", "delta")
TOTAL_COLUMNS = ("device_id", "pair", "prev_session", "session_id", "metric", "drift_total")


@dataclass
class DriftTables:
    device_id: str
    metric: str
    series: list[dict]
    deltas: list[dict]
    totals: list[dict]
    distance_csv: str

    def csv(self) -> dict[str, str]:
        """File stem -> CSV text."""
        return {
            "series": rows_to_csv(self.series, SERIES_COLUMNS),
            "deltas": rows_to_csv(self.deltas, DELTA_COLUMNS),
            "drift_totals": rows_to_csv(self.totals, TOTAL_COLUMNS),
            "distance_matrix": self.distance_csv,
        }


def drift_tables(
    device_id: str,
    sessions: Sequence[tuple[str, SessionFeatures]],
    metric: str = DEFAULT_DRIFT_METRIC,
) -> DriftTables:
    """Series, per-circuit deltas and drift totals for sessions in chain order.

    N sessions give N series rows, N - 1 drift totals, and one delta row per
    circuit shared by each consecutive pair.
    """
    if metric not in FEATURE_FIELDS:
        raise FeatureError(f"unknown metric {metric!r}")
    if len(sessions) < 2:
        raise FeatureError(f"need at least 2 sessions for {device_id!r}, have {len(sessions)}")
    series = [
        {
            "device_id": device_id,
            "run": i,
            "session_id": sid,
            "metric": metric,
            "mean": aggregate_session(feats, metric, "mean"),
            "median": aggregate_session(feats, metric, "median"),
        }
        for i, (sid, feats) in enumerate(sessions)
    ]
    deltas, totals = [], []
    for k in range(1, len(sessions)):
        (prev_id, prev), (sid, curr) = sessions[k - 1], sessions[k]
        report = drift_index(curr, prev, metric)
        base = {"device_id": device_id, "pair": k, "prev_session": prev_id, "session_id": sid, "metric": metric}
        deltas.extend({**base, "circuit_id": c, "delta": d} for c, d in report.per_circuit_delta.items())
        totals.append({**base, "drift_total": report.total})

    dm = session_distance_matrix(list(sessions), metric)
    header = ",".join(["session_id", *dm.sessions])
    lines = [header] + [",".join([sid, *(repr(float(v)) for v in row)]) for sid, row in zip(dm.sessions, dm.D)]
    return DriftTables(device_id, metric, series, deltas, totals, "\n".join(lines) + "\n")


def report_summary(tables: Sequence[DriftTables]) -> list[dict]:
    """One row per device: session count and drift total statistics."""
    rows = []
    for t in tables:
        values = [r["drift_total"] for r in t.totals]
        rows.append(
            {
                "device_id": t.device_id,
                "metric": t.metric,
                "sessions": len(t.series),
                "drift_pairs": len(values),
                "drift_total_sum": sum(values),
                "drift_total_max": max(values),
                "series_mean": sum(r["mean"] for r in t.series) / len(t.series),
            }
        )
    return rows

"""CHSH estimation and the session authenticity verdict."""
from __future__ import annotations

import math
from dataclasses import dataclass

from .sim import CountsTable

CHSH_THRESHOLD = 2.0


class AttestationError(ValueError):
    pass


def correlation_E(counts: CountsTable) -> float:
    """Parity correlation ``(N00 + N11 - N01 - N10) / shots`` of a 2-bit table."""
    if counts.shots < 1:
        raise AttestationError("counts table is empty")
    if counts.n_bits != 2:
        raise AttestationError(f"correlation needs 2-bit outcomes, got {counts.n_bits}-bit keys")
    c = counts.counts
    same = c.get("00", 0) + c.get("11", 0)
    diff = c.get("01", 0) + c.get("10", 0)
    return (same - diff) / counts.shots


def chsh_S(e_ab: float, e_ab_p: float, e_ap_b: float, e_ap_bp: float) -> float:
    """S = E(AB) + E(AB') + E(A'B) - E(A'B')."""
    for value in (e_ab, e_ab_p, e_ap_b, e_ap_bp):
        if not -1.0 <= value <= 1.0:
            raise AttestationError(f"correlation {value} outside [-1, 1]")
    return e_ab + e_ab_p + e_ap_b - e_ap_bp


def chsh_sigma(correlations, shots: int) -> float:
    """Binomial standard error of S: sqrt(sum (1 - E^2) / shots)."""
    return math.sqrt(sum((1.0 - e * e) / shots for e in correlations))


@dataclass(frozen=True)
class ChshEvidence:
    E_ab: float
    E_ab_p: float
    E_ap_b: float
    E_ap_bp: float
    S: float
    shots_per_setting: int
    passed: bool
    threshold: float = CHSH_THRESHOLD

    @property
    def correlations(self) -> tuple[float, float, float, float]:
        return (self.E_ab, self.E_ab_p, self.E_ap_b, self.E_ap_bp)

    @property
    def sigma_S(self) -> float:
        return chsh_sigma(self.correlations, self.shots_per_setting)

    def problems(self) -> list[str]:
        """Recompute S and the verdict from the stored correlations."""
        out = []
        if any(not -1.0 <= e <= 1.0 for e in self.correlations):
            out.append("correlation value outside [-1, 1]")
        recomputed = self.E_ab + self.E_ab_p + self.E_ap_b - self.E_ap_bp
        if recomputed != self.S:
            out.append(f"stored S={self.S!r} but correlations give {recomputed!r}")
        if abs(self.S) > 4.0:
            out.append(f"|S|={abs(self.S)} exceeds the algebraic bound 4")
        if self.passed != (self.S >= self.threshold):
            out.append(f"pass flag {self.passed} inconsistent with S={self.S!r} >= {self.threshold!r}")
        if self.shots_per_setting < 1:
            out.append("shots_per_setting must be positive")
        return out

    def to_dict(self) -> dict:
        return {
            "E_ab": self.E_ab,
            "E_ab_p": self.E_ab_p,
            "E_ap_b": self.E_ap_b,
            "E_ap_bp": self.E_ap_bp,
            "S": self.S,
            "shots_per_setting": self.shots_per_setting,
            "pass": self.passed,
            "threshold": self.threshold,
        }

    @classmethod
    def from_dict(cls, data: dict) -> ChshEvidence:
        return cls(
            E_ab=data["E_ab"],
            E_ab_p=data["E_ab_p"],
            E_ap_b=data["E_ap_b"],
            E_ap_bp=data["E_ap_bp"],
            S=data["S"],
            shots_per_setting=data["shots_per_setting"],
            passed=data["pass"],
            threshold=data["threshold"],
        )


def attest_session(chsh_counts, threshold: float = CHSH_THRESHOLD) -> ChshEvidence:
    """Evidence from the four setting tables, ordered (ab, ab', a'b, a'b').

    The verdict is advisory: a failing S is recorded, never raised.
    """
    tables = list(chsh_counts)
    if len(tables) != 4:
        raise AttestationError(f"need 4 setting tables, got {len(tables)}")
    shots = {t.shots for t in tables}
    if len(shots) != 1:
        raise AttestationError(f"settings ran with different shot counts {sorted(shots)}")
    e = [correlation_E(t) for t in tables]
    s = chsh_S(*e)
    return ChshEvidence(*e, S=s, shots_per_setting=shots.pop(), passed=s >= threshold, threshold=float(threshold))

"""One probing session: execute the suite, attest, fingerprint, seal."""
from __future__ import annotations

from dataclasses import dataclass

from . import __version__
from .attest import ChshEvidence, attest_session
from .circuits import build_chsh_settings, build_suite, derive_circuit_seed
from .features import FeatureVector, counts_fingerprint
from .provenance import CircuitEntry, ProvenanceArtifact, SessionRecord, seal, utc_now
from .sim import CountsTable, DeviceProfile, execute_circuit

DEFAULT_SHOTS = 1024


def execution_seed(master_seed: int, device_id: str, session_id: str) -> int:
    """Shot-noise seed of one session; the circuits themselves depend only on ``master_seed``."""
    return derive_circuit_seed(master_seed, f"session/{device_id}/{session_id}")


@dataclass
class SessionResult:
    circuits: list
    counts: dict[str, CountsTable]
    features: dict[str, FeatureVector]
    chsh: ChshEvidence


def probe_device(profile: DeviceProfile, master_seed: int, session_id: str, shots: int = DEFAULT_SHOTS) -> SessionResult:
    """Run the 12 probe circuits and the 4 CHSH settings against ``profile``."""
    suite = build_suite(profile.n_qubits, master_seed)
    settings = build_chsh_settings(next(c for c in suite if c.circuit_id == "chsh_bell"))
    seed = execution_seed(master_seed, profile.device_id, session_id)
    counts = {c.circuit_id: execute_circuit(c, profile, shots, seed) for c in suite + settings}
    features = {c.circuit_id: counts_fingerprint(counts[c.circuit_id]) for c in suite}
    chsh = attest_session([counts[c.circuit_id] for c in settings])
    return SessionResult(suite + settings, counts, features, chsh)


def build_record(
    profile: DeviceProfile,
    master_seed: int,
    session_id: str,
    result: SessionResult,
    shots: int,
    timestamp: str | None = None,
    interval_label: str | None = None,
) -> SessionRecord:
    suite = [c for c in result.circuits if c.circuit_id in result.features]
    meta = {
        "processor": profile.device_id,
        "backend": "qdna.sim trajectory simulator",
        "version": __version__,
        "n_qubits": profile.n_qubits,
        "calibration": {
            "readout_eps0": list(profile.readout_eps0),
            "readout_eps1": list(profile.readout_eps1),
            "overrotation": dict(profile.overrotation),
            "depol_1q": profile.depol_1q,
            "depol_2q": profile.depol_2q,
            "detune_sigma": profile.detune_sigma,
            "t2_markov": profile.t2_markov,
            "crosstalk": list(profile.crosstalk),
        },
    }
    if interval_label:
        meta["interval"] = interval_label
    return SessionRecord(
        device_id=profile.device_id,
        session_id=session_id,
        timestamp_utc=timestamp or utc_now(),
        master_seed=master_seed,
        shots=shots,
        circuits=tuple(CircuitEntry(c.circuit_id, c.seed, c.gate_count) for c in suite),
        features=dict(result.features),
        counts_digest={cid: t.digest() for cid, t in sorted(result.counts.items())},
        chsh=result.chsh,
        calibration_meta=meta,
    )


def run_session(
    profile: DeviceProfile,
    master_seed: int,
    session_id: str,
    *,
    hmac_key: bytes,
    signing_key,
    prev_hash: bytes | None,
    shots: int = DEFAULT_SHOTS,
    timestamp: str | None = None,
    interval_label: str | None = None,
) -> tuple[ProvenanceArtifact, SessionResult]:
    result = probe_device(profile, master_seed, session_id, shots)
    record = build_record(profile, master_seed, session_id, result, shots, timestamp, interval_label)
    return seal(record, prev_hash, hmac_key, signing_key), result

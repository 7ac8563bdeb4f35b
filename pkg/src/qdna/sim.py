"""Statevector simulator with stochastic-trajectory noise.

Each shot is one trajectory: a single stochastic unitary realisation of the
circuit followed by one projective sample and a readout-confusion step.
All shots of a circuit are simulated together as a ``(shots, 2, ..., 2)``
array; the random numbers of shot ``s`` are row ``s`` of a Philox counter
block keyed by ``(seed, circuit_id)``, so every shot can also be replayed on
its own (see :func:`shot_stream`).

Qubit 0 is the most significant bit of the amplitude index and the leftmost
character of an outcome string.
"""
from __future__ import annotations

import configparser
import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.special import ndtri

from .circuits import Gate, NamedCircuit, as_seed

NORM_TOL = 1e-9
OVERROTATION_KINDS = ("h", "x", "rx", "ry", "rz", "cnot")
FIXTURES = ("sim_torino", "sim_brisbane")


class ProfileError(ValueError):
    pass


class SimulationError(ValueError):
    pass


def _floats(values, n, name):
    values = tuple(float(v) for v in values)
    if len(values) == 1 and n > 1:
        values = values * n
    if len(values) != n:
        raise ProfileError(f"{name} needs {n} per-qubit values, got {len(values)}")
    return values


def _check_prob(value, name):
    if not (0.0 <= value <= 1.0):
        raise ProfileError(f"{name}={value} is not a probability")


@dataclass(frozen=True)
class DeviceProfile:
    """Noise model standing in for one device.

    ``t2_markov`` is the per-idle-unit Markovian phase-flip probability, so it
    is limited to [0, 0.5]; an idle of ``t`` units flips the phase with
    probability ``(1 - (1 - 2 p)^t) / 2``. ``crosstalk[j]`` is the fraction of
    a neighbour's drive angle leaked onto qubit ``j`` as an RX rotation.
    """

    device_id: str
    n_qubits: int
    readout_eps0: tuple[float, ...]
    readout_eps1: tuple[float, ...]
    overrotation: dict[str, float] = field(default_factory=dict)
    depol_1q: float = 0.0
    depol_2q: float = 0.0
    detune_sigma: float = 0.0
    t2_markov: float = 0.0
    crosstalk: tuple[float, ...] = ()

    def __post_init__(self):
        n = self.n_qubits
        if isinstance(n, bool) or not isinstance(n, int) or not 1 <= n <= 5:
            raise ProfileError(f"n_qubits={n!r} outside 1..5")
        if not self.device_id:
            raise ProfileError("device_id must be non-empty")
        set_ = object.__setattr__
        set_(self, "readout_eps0", _floats(self.readout_eps0, n, "readout_eps0"))
        set_(self, "readout_eps1", _floats(self.readout_eps1, n, "readout_eps1"))
        set_(self, "crosstalk", _floats(self.crosstalk or (0.0,), n, "crosstalk"))
        over = {k: 1.0 for k in OVERROTATION_KINDS}
        for key, value in dict(self.overrotation).items():
            key = key.lower()
            if key not in over:
                raise ProfileError(f"unknown overrotation gate kind {key!r}")
            over[key] = float(value)
        set_(self, "overrotation", over)
        for q in range(n):
            _check_prob(self.readout_eps0[q], f"readout_eps0[{q}]")
            _check_prob(self.readout_eps1[q], f"readout_eps1[{q}]")
            _check_prob(self.crosstalk[q], f"crosstalk[{q}]")
        for name in ("depol_1q", "depol_2q"):
            _check_prob(float(getattr(self, name)), name)
            set_(self, name, float(getattr(self, name)))
        set_(self, "t2_markov", float(self.t2_markov))
        if not 0.0 <= self.t2_markov <= 0.5:
            raise ProfileError(f"t2_markov={self.t2_markov} must lie in [0, 0.5]")
        set_(self, "detune_sigma", float(self.detune_sigma))
        if not (self.detune_sigma >= 0.0 and math.isfinite(self.detune_sigma)):
            raise ProfileError("detune_sigma must be finite and >= 0")
        for key, value in over.items():
            if not (value > 0.0 and math.isfinite(value)):
                raise ProfileError(f"overrotation[{key}]={value} must be > 0")

    __hash__ = None

    @classmethod
    def noiseless(cls, device_id: str = "ideal", n_qubits: int = 2) -> DeviceProfile:
        return cls(device_id, n_qubits, (0.0,) * n_qubits, (0.0,) * n_qubits)

    def evolve(self, **changes) -> DeviceProfile:
        return replace(self, **changes)


def _csv(values):
    return ", ".join(repr(float(v)) for v in values)


def dump_profile(profile: DeviceProfile) -> str:
    """Render a profile in the INI layout read by :func:`load_profile`."""
    cfg = configparser.ConfigParser()
    cfg["device"] = {"device_id": profile.device_id, "n_qubits": str(profile.n_qubits)}
    cfg["readout"] = {"eps0": _csv(profile.readout_eps0), "eps1": _csv(profile.readout_eps1)}
    cfg["overrotation"] = {k: repr(v) for k, v in profile.overrotation.items()}
    cfg["noise"] = {
        "depol_1q": repr(profile.depol_1q),
        "depol_2q": repr(profile.depol_2q),
        "detune_sigma": repr(profile.detune_sigma),
        "t2_markov": repr(profile.t2_markov),
        "crosstalk": _csv(profile.crosstalk),
    }
    lines = []
    for section in cfg.sections():
        lines.append(f"[{section}]")
        lines.extend(f"{k} = {v}" for k, v in cfg[section].items())
        lines.append("")
    return "\n".join(lines)


def parse_profile(text: str) -> DeviceProfile:
    cfg = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cfg.read_string(text)
        dev, noise = cfg["device"], cfg["noise"]
        split = lambda s: [v for v in s.replace(",", " ").split() if v]  # noqa: E731
        return DeviceProfile(
            device_id=dev["device_id"].strip(),
            n_qubits=dev.getint("n_qubits"),
            readout_eps0=split(cfg["readout"]["eps0"]),
            readout_eps1=split(cfg["readout"]["eps1"]),
            overrotation={k: float(v) for k, v in cfg["overrotation"].items()}
            if cfg.has_section("overrotation")
            else {},
            depol_1q=noise.getfloat("depol_1q", 0.0),
            depol_2q=noise.getfloat("depol_2q", 0.0),
            detune_sigma=noise.getfloat("detune_sigma", 0.0),
            t2_markov=noise.getfloat("t2_markov", 0.0),
            crosstalk=split(noise.get("crosstalk", "0")),
        )
    except (configparser.Error, KeyError, ValueError) as exc:
        if isinstance(exc, ProfileError):
            raise
        raise ProfileError(f"malformed profile: {exc}") from exc


def load_profile(source: str | Path) -> DeviceProfile:
    """Load a profile from an INI file, or by fixture name (``sim_torino``, ``sim_brisbane``)."""
    if str(source) in FIXTURES:
        text = resources.files("qdna.profiles").joinpath(f"{source}.ini").read_text()
    else:
        text = Path(source).read_text()
    return parse_profile(text)


def fixture_profile(name: str) -> DeviceProfile:
    if name not in FIXTURES:
        raise ProfileError(f"no fixture profile {name!r}; choose from {FIXTURES}")
    return load_profile(name)


# ---------------------------------------------------------------- states


@dataclass(frozen=True)
class CountsTable:
    counts: dict[str, int]
    shots: int

    def __post_init__(self):
        counts = {str(k): int(v) for k, v in sorted(self.counts.items())}
        widths = {len(k) for k in counts}
        if len(widths) > 1:
            raise SimulationError(f"inconsistent outcome lengths {sorted(widths)}")
        if any(set(k) - {"0", "1"} for k in counts):
            raise SimulationError("outcome keys must be bitstrings")
        if any(v < 0 for v in counts.values()):
            raise SimulationError("counts must be non-negative")
        if sum(counts.values()) != self.shots:
            raise SimulationError(f"counts sum {sum(counts.values())} != shots {self.shots}")
        object.__setattr__(self, "counts", counts)

    __hash__ = None

    @property
    def n_bits(self) -> int:
        return len(next(iter(self.counts))) if self.counts else 0

    def to_dict(self) -> dict:
        return {"counts": dict(self.counts), "shots": self.shots}

    def digest(self) -> str:
        """SHA-256 hex of the canonical counts encoding."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


class QuantumState:
    """Normalised pure state on ``n_qubits``."""

    def __init__(self, amplitudes, n_qubits: int | None = None):
        amps = np.asarray(amplitudes, dtype=complex).reshape(-1)
        n = n_qubits if n_qubits is not None else int(round(math.log2(max(amps.size, 1))))
        if amps.size != 2**n:
            raise SimulationError(f"{amps.size} amplitudes do not describe {n} qubits")
        norm = float(np.vdot(amps, amps).real)
        if abs(norm - 1.0) > NORM_TOL:
            raise SimulationError(f"state norm {norm} is not 1")
        self.amplitudes = amps
        self.n_qubits = n

    @classmethod
    def zero(cls, n_qubits: int) -> QuantumState:
        amps = np.zeros(2**n_qubits, dtype=complex)
        amps[0] = 1.0
        return cls(amps, n_qubits)

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def __repr__(self):
        return f"QuantumState(n_qubits={self.n_qubits})"


# ---------------------------------------------------------------- kernels

_I2 = np.eye(2, dtype=complex)
_PX = np.array([[0, 1], [1, 0]], dtype=complex)
_PY = np.array([[0, -1j], [1j, 0]], dtype=complex)
_PZ = np.array([[1, 0], [0, -1]], dtype=complex)
_H = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)
PAULI_1Q = np.stack([_I2, _PX, _PY, _PZ])
PAULI_2Q = np.stack([np.kron(a, b) for a in PAULI_1Q for b in PAULI_1Q])


def _power(op, f):
    """``op**f`` for an involutory ``op`` (eigenvalues +-1); exact at f=1."""
    plus, minus = (_I2 + op) / 2, (_I2 - op) / 2
    return plus + np.exp(1j * math.pi * f) * minus


def rx(theta):
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, -1j * s], [-1j * s, c]], dtype=complex)


def ry(theta):
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


def rz(theta):
    return np.array([[np.exp(-0.5j * theta), 0], [0, np.exp(0.5j * theta)]], dtype=complex)


def _controlled(u):
    m = np.eye(4, dtype=complex)
    m[2:, 2:] = u
    return m


def gate_unitary(gate: Gate, overrotation: dict[str, float] | None = None):
    """Unitary for ``gate`` with its angle scaled by the overrotation factor.

    Returns ``(matrix, drive_angle)``; ``drive_angle`` is the applied angle of
    a driven single-qubit gate (used for crosstalk) or ``None``.
    """
    f = 1.0 if overrotation is None else overrotation.get(gate.kind.lower(), 1.0)
    kind = gate.kind
    if kind == "ID":
        return _I2, None
    if kind == "H":
        return (_H if f == 1.0 else _power(_H, f)), math.pi * f
    if kind == "X":
        return (_PX if f == 1.0 else _power(_PX, f)), math.pi * f
    if kind == "CNOT":
        return _controlled(_PX if f == 1.0 else _power(_PX, f)), None
    theta = gate.angle * f
    if kind == "RX":
        return rx(theta), theta
    if kind == "RY":
        return ry(theta), theta
    if kind == "RZ":
        return rz(theta), None
    raise SimulationError(f"{kind} has no unitary")


def _apply(states, matrix, qubits):
    """Apply a (possibly per-shot) matrix to ``qubits`` of a ``(S, 2, ..., 2)`` batch."""
    k = len(qubits)
    axes = [q + 1 for q in qubits]
    moved = np.moveaxis(states, axes, list(range(1, k + 1)))
    shape = moved.shape
    flat = moved.reshape(shape[0], 2**k, -1)
    out = np.matmul(matrix, flat).reshape(shape)
    return np.moveaxis(out, list(range(1, k + 1)), axes)


def apply_gate(state: QuantumState, gate: Gate) -> QuantumState:
    """Ideal (noise-free) application of ``gate``; IDLE is the identity."""
    if not isinstance(state, QuantumState):
        state = QuantumState(state)
    n = state.n_qubits
    if max(gate.targets) >= n:
        raise SimulationError(f"{gate.kind} targets {gate.targets} outside {n} qubits")
    if gate.kind == "IDLE":
        return QuantumState(state.amplitudes.copy(), n)
    matrix, _ = gate_unitary(gate)
    batch = state.amplitudes.reshape((1,) + (2,) * n)
    out = _apply(batch, matrix, gate.targets).reshape(-1)
    return QuantumState(out, n)


# ---------------------------------------------------------------- trajectories


def trajectory_width(circuit: NamedCircuit) -> int:
    """Uniform draws consumed by one trajectory, padded to whole Philox blocks."""
    used = circuit.n_qubits  # quasi-static detuning, one per qubit
    for g in circuit.gates:
        used += len(g.targets) if g.kind == "IDLE" else 2
    used += 1 + len(circuit.measured)  # outcome sample + readout flips
    return -(-used // 4) * 4


def _stream_key(seed: int, circuit_id: str) -> int:
    digest = hashlib.sha256(f"qdna-shots\x1f{as_seed(seed)}\x1f{circuit_id}".encode()).digest()
    return int.from_bytes(digest[:16], "big")


def shot_stream(seed: int, circuit: NamedCircuit, shot_index: int) -> np.random.Generator:
    """Generator positioned at the substream of one shot."""
    bitgen = np.random.Philox(key=_stream_key(seed, circuit.circuit_id))
    bitgen.advance(shot_index * trajectory_width(circuit) // 4)
    return np.random.Generator(bitgen)


def _check_fit(circuit: NamedCircuit, profile: DeviceProfile):
    if circuit.n_qubits > profile.n_qubits:
        raise SimulationError(
            f"circuit {circuit.circuit_id} needs {circuit.n_qubits} qubits, "
            f"profile {profile.device_id} has {profile.n_qubits}"
        )


def _simulate(circuit: NamedCircuit, profile: DeviceProfile, uniforms: np.ndarray) -> np.ndarray:
    """Run ``len(uniforms)`` trajectories; returns measured bits, shape (S, n_measured)."""
    n = circuit.n_qubits
    shots = uniforms.shape[0]
    cursor = 0

    def take(k=1):
        nonlocal cursor
        block = uniforms[:, cursor : cursor + k]
        cursor += k
        return block

    states = np.zeros((shots,) + (2,) * n, dtype=complex)
    states[(slice(None),) + (0,) * n] = 1.0
    detuning = profile.detune_sigma * ndtri(take(n)) if n else np.zeros((shots, 0))
    p_markov = profile.t2_markov
    kappa = profile.crosstalk

    for gate in circuit.gates:
        if gate.kind == "IDLE":
            t = gate.duration
            flip_p = 0.5 * (1.0 - (1.0 - 2.0 * p_markov) ** t)
            draws = take(len(gate.targets))
            for i, q in enumerate(gate.targets):
                phase = detuning[:, q] * t
                flip = np.where(draws[:, i] < flip_p, -1.0, 1.0)
                diag = np.zeros((shots, 2, 2), dtype=complex)
                diag[:, 0, 0] = np.exp(-0.5j * phase)
                diag[:, 1, 1] = flip * np.exp(0.5j * phase)
                states = _apply(states, diag, (q,))
            continue

        matrix, drive = gate_unitary(gate, profile.overrotation)
        states = _apply(states, matrix, gate.targets)
        if drive is not None:
            q = gate.targets[0]
            for j in (q - 1, q + 1):
                if 0 <= j < n and kappa[j] > 0.0:
                    states = _apply(states, rx(kappa[j] * drive), (j,))
        hit, which = take(2).T
        if len(gate.targets) == 1:
            idx = np.where(hit < profile.depol_1q, 1 + np.minimum((which * 3).astype(int), 2), 0)
            if idx.any():
                states = _apply(states, PAULI_1Q[idx], gate.targets)
        else:
            idx = np.where(hit < profile.depol_2q, 1 + np.minimum((which * 15).astype(int), 14), 0)
            if idx.any():
                states = _apply(states, PAULI_2Q[idx], gate.targets)

    flat = states.reshape(shots, -1)
    probs = np.abs(flat) ** 2
    norms = probs.sum(axis=1)
    if np.any(np.abs(norms - 1.0) > NORM_TOL):
        raise SimulationError("trajectory lost normalisation")
    cdf = np.cumsum(probs / norms[:, None], axis=1)
    outcome = np.minimum((cdf < take(1)).sum(axis=1), 2**n - 1)
    shifts = np.array([n - 1 - q for q in circuit.measured])
    bits = (outcome[:, None] >> shifts) & 1
    flips = take(len(circuit.measured))
    eps0 = np.array([profile.readout_eps0[q] for q in circuit.measured])
    eps1 = np.array([profile.readout_eps1[q] for q in circuit.measured])
    flip = np.where(bits == 0, flips < eps0, flips < eps1)
    return bits ^ flip.astype(bits.dtype)


def _bitstrings(bits: np.ndarray) -> list[str]:
    return ["".join("1" if b else "0" for b in row) for row in bits]


def run_trajectory(circuit: NamedCircuit, profile: DeviceProfile, stream: np.random.Generator) -> str:
    """One noisy shot of ``circuit``; draws ``trajectory_width`` uniforms from ``stream``."""
    _check_fit(circuit, profile)
    uniforms = stream.random((1, trajectory_width(circuit)))
    return _bitstrings(_simulate(circuit, profile, uniforms))[0]


def execute_circuit(circuit: NamedCircuit, profile: DeviceProfile, shots: int, seed: int) -> CountsTable:
    """Run ``shots`` trajectories; bit-identical for identical arguments."""
    if isinstance(shots, bool) or not isinstance(shots, int) or shots < 1:
        raise SimulationError(f"shots must be a positive integer, got {shots!r}")
    _check_fit(circuit, profile)
    bitgen = np.random.Philox(key=_stream_key(seed, circuit.circuit_id))
    uniforms = np.random.Generator(bitgen).random((shots, trajectory_width(circuit)))
    bits = _simulate(circuit, profile, uniforms)
    weights = 1 << np.arange(bits.shape[1] - 1, -1, -1)
    codes, freq = np.unique(bits @ weights, return_counts=True)
    width = bits.shape[1]
    counts = {format(int(c), f"0{width}b"): int(k) for c, k in zip(codes, freq)}
    return CountsTable(counts, shots)

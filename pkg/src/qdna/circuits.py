"""Seeded probe-circuit suite.

Every circuit is regenerated bit-for-bit from ``(circuit_id, seed, n_qubits)``,
so a session record only needs the master seed to reproduce the probes.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

GATE_KINDS = ("H", "X", "ID", "RX", "RY", "RZ", "CNOT", "IDLE")
ROTATIONS = ("RX", "RY", "RZ")

SUITE_IDS = (
    "baseline_readout",
    "random_1q_a",
    "random_1q_b",
    "ramsey",
    "spin_echo",
    "pm",
    "interleaved_x",
    "interleaved_h",
    "interleaved_id",
    "entangler_chain",
    "crosstalk_probe",
    "chsh_bell",
)

# (tag, circuit_id, angle on qubit 0, angle on qubit 1)
CHSH_SETTINGS = (
    ("ab", "chsh_ab", 0.0, math.pi / 4),
    ("ab'", "chsh_abp", 0.0, -math.pi / 4),
    ("a'b", "chsh_apb", math.pi / 2, math.pi / 4),
    ("a'b'", "chsh_apbp", math.pi / 2, -math.pi / 4),
)
CHSH_IDS = tuple(s[1] for s in CHSH_SETTINGS)
VOCABULARY = SUITE_IDS + CHSH_IDS

RANDOM_DEPTH_RANGE = (8, 16)
INTERLEAVE_REPS = 16
IDLE_UNITS = 8
# Ramsey/echo phase window; echo only out-populates Ramsey in |0> when cos(phi) > 0.
RAMSEY_PHASE_RANGE = (-math.pi / 4, math.pi / 4)
CROSSTALK_PULSES = 8
CROSSTALK_ANGLE_RANGE = (math.pi / 2, math.pi)

SEED_MAX = 2**64 - 1


class CircuitError(ValueError):
    pass


def as_seed(value) -> int:
    """Validate a 64-bit unsigned seed."""
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise CircuitError(f"seed must be an integer, got {type(value).__name__}")
    value = int(value)
    if not 0 <= value <= SEED_MAX:
        raise CircuitError(f"seed {value} outside the 64-bit unsigned range")
    return value


@dataclass(frozen=True)
class Gate:
    kind: str
    targets: tuple[int, ...]
    angle: float | None = None
    duration: int | None = None

    def __post_init__(self):
        if self.kind not in GATE_KINDS:
            raise CircuitError(f"unknown gate kind {self.kind!r}")
        targets = tuple(int(t) for t in self.targets)
        object.__setattr__(self, "targets", targets)
        if not targets or any(t < 0 for t in targets):
            raise CircuitError(f"{self.kind} needs non-negative targets")
        if len(set(targets)) != len(targets):
            raise CircuitError(f"{self.kind} has repeated targets {targets}")
        if self.kind == "CNOT":
            if len(targets) != 2:
                raise CircuitError("CNOT takes exactly (control, target)")
        elif self.kind != "IDLE" and len(targets) != 1:
            raise CircuitError(f"{self.kind} acts on a single qubit")
        if self.kind in ROTATIONS:
            if self.angle is None or not math.isfinite(self.angle):
                raise CircuitError(f"{self.kind} needs a finite angle")
            object.__setattr__(self, "angle", float(self.angle))
        elif self.angle is not None:
            raise CircuitError(f"{self.kind} takes no angle")
        if self.kind == "IDLE":
            if self.duration is None or int(self.duration) < 0:
                raise CircuitError("IDLE needs a non-negative integer duration")
            object.__setattr__(self, "duration", int(self.duration))
        elif self.duration is not None:
            raise CircuitError(f"{self.kind} takes no duration")

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "targets": list(self.targets)}
        if self.angle is not None:
            out["angle"] = self.angle
        if self.duration is not None:
            out["duration"] = self.duration
        return out


@dataclass(frozen=True)
class NamedCircuit:
    circuit_id: str
    gates: tuple[Gate, ...]
    n_qubits: int
    seed: int
    measured: tuple[int, ...] = field(default=())
    setting: str | None = None

    def __post_init__(self):
        if self.circuit_id not in VOCABULARY:
            raise CircuitError(f"circuit id {self.circuit_id!r} not in the suite vocabulary")
        if not 1 <= self.n_qubits <= 5:
            raise CircuitError(f"n_qubits={self.n_qubits} outside 1..5")
        object.__setattr__(self, "seed", as_seed(self.seed))
        object.__setattr__(self, "gates", tuple(self.gates))
        measured = tuple(self.measured) or tuple(range(self.n_qubits))
        object.__setattr__(self, "measured", measured)
        for g in self.gates:
            if max(g.targets) >= self.n_qubits:
                raise CircuitError(f"{g.kind} targets {g.targets} outside {self.n_qubits} qubits")
        if max(measured) >= self.n_qubits or len(set(measured)) != len(measured):
            raise CircuitError(f"bad measured qubits {measured}")

    @property
    def gate_count(self) -> int:
        return len(self.gates)

    def with_gates(self, extra, *, circuit_id=None, setting=None) -> NamedCircuit:
        return NamedCircuit(
            circuit_id=circuit_id or self.circuit_id,
            gates=self.gates + tuple(extra),
            n_qubits=self.n_qubits,
            seed=self.seed,
            measured=self.measured,
            setting=setting,
        )


def derive_circuit_seed(master: int, circuit_id: str) -> int:
    """Hash ``(master, circuit_id)`` into a 64-bit seed."""
    master = as_seed(master)
    digest = hashlib.sha256(f"qdna-seed\x1f{master}\x1f{circuit_id}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def _all(kind, n, **kw):
    return [Gate(kind, (q,), **kw) for q in range(n)]


def _baseline_readout(n, rng):
    return []


def _random_1q(n, rng):
    depth = int(rng.integers(RANDOM_DEPTH_RANGE[0], RANDOM_DEPTH_RANGE[1] + 1))
    gates = []
    for _ in range(depth):
        for q in range(n):
            kind = ROTATIONS[int(rng.integers(3))]
            gates.append(Gate(kind, (q,), angle=float(rng.uniform(0.0, 2 * math.pi))))
    return gates


def _ramsey(n, rng):
    phi = float(rng.uniform(*RAMSEY_PHASE_RANGE))
    return (
        _all("H", n)
        + [Gate("IDLE", tuple(range(n)), duration=IDLE_UNITS)]
        + _all("RZ", n, angle=phi)
        + _all("H", n)
    )


def _spin_echo(n, rng):
    phi = float(rng.uniform(*RAMSEY_PHASE_RANGE))
    half = Gate("IDLE", tuple(range(n)), duration=IDLE_UNITS // 2)
    return _all("H", n) + [half] + _all("X", n) + [half] + _all("RZ", n, angle=phi) + _all("H", n)


def _pm(n, rng):
    return _all("H", n)


def _interleaved(kind):
    def build(n, rng):
        return [g for _ in range(INTERLEAVE_REPS) for g in _all(kind, n)]

    return build


def _entangler_chain(n, rng):
    order = rng.permutation(n - 1)
    return _all("H", n) + [Gate("CNOT", (int(i), int(i) + 1)) for i in order]


def _crosstalk_probe(n, rng):
    gates = []
    for _ in range(CROSSTALK_PULSES):
        gates.append(Gate("RX", (0,), angle=float(rng.uniform(*CROSSTALK_ANGLE_RANGE))))
        if n > 1:
            gates.append(Gate("IDLE", tuple(range(1, n)), duration=1))
    return gates


_BUILDERS = {
    "baseline_readout": _baseline_readout,
    "random_1q_a": _random_1q,
    "random_1q_b": _random_1q,
    "ramsey": _ramsey,
    "spin_echo": _spin_echo,
    "pm": _pm,
    "interleaved_x": _interleaved("X"),
    "interleaved_h": _interleaved("H"),
    "interleaved_id": _interleaved("ID"),
    "entangler_chain": _entangler_chain,
    "crosstalk_probe": _crosstalk_probe,
}


def bell_circuit(seed: int = 0, *, entangled: bool = True) -> NamedCircuit:
    """2-qubit |Phi+> preparation; ``entangled=False`` drops the CNOT (local control)."""
    gates = [Gate("H", (0,))]
    if entangled:
        gates.append(Gate("CNOT", (0, 1)))
    return NamedCircuit("chsh_bell", tuple(gates), n_qubits=2, seed=seed, measured=(0, 1))


def build_circuit(circuit_id: str, n_qubits: int, seed: int) -> NamedCircuit:
    """Regenerate one suite circuit from its id and seed."""
    if circuit_id == "chsh_bell":
        return bell_circuit(seed)
    try:
        builder = _BUILDERS[circuit_id]
    except KeyError:
        raise CircuitError(f"{circuit_id!r} is not a suite circuit") from None
    gates = builder(n_qubits, _rng(as_seed(seed)))
    return NamedCircuit(circuit_id, tuple(gates), n_qubits=n_qubits, seed=seed)


def build_suite(n_qubits: int, master: int) -> list[NamedCircuit]:
    """The 12 probe circuits for an ``n_qubits`` register, seeded from ``master``."""
    if isinstance(n_qubits, bool) or not isinstance(n_qubits, int) or not 2 <= n_qubits <= 5:
        raise CircuitError(f"suite needs 2..5 qubits, got {n_qubits!r}")
    return [build_circuit(cid, n_qubits, derive_circuit_seed(master, cid)) for cid in SUITE_IDS]


def build_chsh_settings(
    base: NamedCircuit, angles: tuple[float, float, float, float] | None = None
) -> list[NamedCircuit]:
    """Append the four CHSH measurement-basis rotations to a Bell preparation.

    ``angles`` is ``(A, A', B, B')``, the measurement axes in the X-Z plane;
    the default is the |Phi+> optimum ``(0, pi/2, pi/4, -pi/4)``. Measuring
    along axis ``t`` is done with ``RY(-t)`` followed by a Z measurement, so
    the noiseless correlation is ``cos(tA - tB)``.
    """
    if base.n_qubits != 2:
        raise CircuitError(f"CHSH settings need a 2-qubit base circuit, got {base.n_qubits}")
    if angles is None:
        settings = CHSH_SETTINGS
    else:
        a, ap, b, bp = angles
        settings = (
            ("ab", "chsh_ab", a, b),
            ("ab'", "chsh_abp", a, bp),
            ("a'b", "chsh_apb", ap, b),
            ("a'b'", "chsh_apbp", ap, bp),
        )
    out = []
    for tag, cid, theta_a, theta_b in settings:
        rot = (Gate("RY", (0,), angle=-theta_a), Gate("RY", (1,), angle=-theta_b))
        out.append(base.with_gates(rot, circuit_id=cid, setting=tag))
    return out


def suite_manifest(circuits) -> str:
    """Tab-separated ``circuit_id, seed, gate_count`` listing, one circuit per line."""
    return "".join(f"{c.circuit_id}\t{c.seed}\t{c.gate_count}\n" for c in circuits)

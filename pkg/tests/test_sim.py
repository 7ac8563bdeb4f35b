import math
from functools import reduce

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from qdna.circuits import Gate, NamedCircuit, bell_circuit, build_circuit
from qdna.sim import (
    CountsTable,
    DeviceProfile,
    ProfileError,
    QuantumState,
    SimulationError,
    _simulate,
    apply_gate,
    dump_profile,
    execute_circuit,
    fixture_profile,
    load_profile,
    parse_profile,
    run_trajectory,
    shot_stream,
    trajectory_width,
)

I2 = np.eye(2)
H = np.array([[1, 1], [1, -1]]) / math.sqrt(2)
X = np.array([[0, 1], [1, 0]])


def kron_all(mats):
    return reduce(np.kron, mats)


def full_1q(u, q, n):
    return kron_all([u if i == q else I2 for i in range(n)])


def full_cnot(c, t, n):
    """Dense CNOT built from projectors, qubit 0 = most significant bit."""
    p0, p1 = np.diag([1, 0]), np.diag([0, 1])
    a = kron_all([p0 if i == c else I2 for i in range(n)])
    b = kron_all([p1 if i == c else (X if i == t else I2) for i in range(n)])
    return a + b


def test_apply_gate_examples():
    plus = apply_gate(QuantumState.zero(1), Gate("H", (0,)))
    np.testing.assert_allclose(plus.amplitudes, [1 / math.sqrt(2)] * 2, atol=1e-12)
    one = apply_gate(QuantumState.zero(1), Gate("X", (0,)))
    np.testing.assert_allclose(one.amplitudes, [0, 1], atol=1e-12)
    ket10 = QuantumState([0, 0, 1, 0])
    np.testing.assert_allclose(apply_gate(ket10, Gate("CNOT", (0, 1))).amplitudes, [0, 0, 0, 1], atol=1e-12)


def test_apply_gate_errors():
    with pytest.raises(SimulationError):
        apply_gate(QuantumState.zero(2), Gate("H", (2,)))
    with pytest.raises(SimulationError):
        QuantumState([1, 1])


gate_st = st.one_of(
    st.builds(lambda k, q: Gate(k, (q,)), st.sampled_from(["H", "X", "ID"]), st.integers(0, 2)),
    st.builds(
        lambda k, q, a: Gate(k, (q,), angle=a),
        st.sampled_from(["RX", "RY", "RZ"]),
        st.integers(0, 2),
        st.floats(-7, 7, allow_nan=False),
    ),
    st.builds(lambda c, d: Gate("CNOT", (c, (c + d) % 3)), st.integers(0, 2), st.integers(1, 2)),
)


def dense(gate, n):
    q = gate.targets[0]
    if gate.kind == "CNOT":
        return full_cnot(gate.targets[0], gate.targets[1], n)
    theta = gate.angle
    u = {
        "H": H,
        "X": X,
        "ID": I2,
        "RX": None if theta is None else np.cos(theta / 2) * I2 - 1j * np.sin(theta / 2) * X,
        "RY": None if theta is None else np.array([[np.cos(theta / 2), -np.sin(theta / 2)], [np.sin(theta / 2), np.cos(theta / 2)]]),
        "RZ": None if theta is None else np.diag([np.exp(-0.5j * theta), np.exp(0.5j * theta)]),
    }[gate.kind]
    return full_1q(u, q, n)


@settings(max_examples=60, deadline=None)
@given(st.lists(gate_st, min_size=1, max_size=12))
def test_apply_gate_matches_dense_kronecker_oracle(gates):
    n = 3
    state = QuantumState.zero(n)
    vec = np.zeros(8, dtype=complex)
    vec[0] = 1
    for g in gates:
        state = apply_gate(state, g)
        vec = dense(g, n) @ vec
    np.testing.assert_allclose(state.amplitudes, vec, atol=1e-12)
    assert abs(np.sum(state.probabilities()) - 1) < 1e-9


def test_trajectory_examples():
    ideal = DeviceProfile.noiseless(n_qubits=3)
    empty = NamedCircuit("baseline_readout", (), 3, 0)
    rng = np.random.default_rng(0)
    assert run_trajectory(empty, ideal, rng) == "000"
    forced = ideal.evolve(readout_eps0=(1.0,) * 3)
    assert run_trajectory(empty, forced, rng) == "111"
    for s in range(50):
        assert run_trajectory(bell_circuit(), ideal, shot_stream(1, bell_circuit(), s)) in {"00", "11"}


def test_shot_stream_replays_batched_shots():
    prof = fixture_profile("sim_torino")
    circ = build_circuit("random_1q_a", 3, 17)
    batch = execute_circuit(circ, prof, 64, 5)
    singles = {}
    for s in range(64):
        out = run_trajectory(circ, prof, shot_stream(5, circ, s))
        singles[out] = singles.get(out, 0) + 1
    assert singles == batch.counts


def test_execute_examples():
    ideal = DeviceProfile.noiseless(n_qubits=2)
    assert execute_circuit(build_circuit("baseline_readout", 2, 0), ideal, 1024, 3).counts == {"00": 1024}
    assert execute_circuit(build_circuit("interleaved_id", 2, 0), ideal, 500, 3).counts == {"00": 500}
    pm1 = NamedCircuit("pm", (Gate("H", (0,)),), 1, 0)
    c = execute_circuit(pm1, DeviceProfile.noiseless(n_qubits=1), 10000, 21)
    assert abs(c.counts["0"] / 10000 - 0.5) <= 3 * math.sqrt(0.25 / 10000)


def test_execute_is_deterministic():
    prof = fixture_profile("sim_brisbane")
    circ = build_circuit("spin_echo", 3, 8)
    assert execute_circuit(circ, prof, 300, 4) == execute_circuit(circ, prof, 300, 4)
    assert execute_circuit(circ, prof, 300, 4) != execute_circuit(circ, prof, 300, 5)


def test_execute_rejects_bad_input():
    prof = DeviceProfile.noiseless(n_qubits=2)
    with pytest.raises(SimulationError):
        execute_circuit(build_circuit("pm", 3, 0), prof, 10, 0)
    with pytest.raises(SimulationError):
        execute_circuit(build_circuit("pm", 2, 0), prof, 0, 0)


@pytest.mark.parametrize("cid", ["random_1q_a", "entangler_chain", "crosstalk_probe", "pm"])
def test_noiseless_distribution_matches_statevector(cid):
    n, shots = 3, 10000
    circ = build_circuit(cid, n, 12)
    state = QuantumState.zero(n)
    for g in circ.gates:
        state = apply_gate(state, g)
    probs = state.probabilities()
    counts = execute_circuit(circ, DeviceProfile.noiseless(n_qubits=n), shots, 2)
    observed = np.array([counts.counts.get(format(i, "03b"), 0) for i in range(8)])
    # 32 outcome checks across the parametrisation: 4 sigma keeps the family-wise
    # false alarm rate near 3 sigma's single-test rate
    for got, p in zip(observed / shots, probs):
        assert abs(got - p) <= 4 * math.sqrt(p * (1 - p) / shots) + 1e-12
    assert np.all(observed[probs < 1e-12] == 0)
    support = probs > 1e-12
    expected = shots * probs[support] / probs[support].sum()
    assert chisquare(observed[support], expected).pvalue > 1e-3


def test_readout_flip_rates():
    prof = DeviceProfile("d", 2, (0.2, 0.0), (0.0, 0.3))
    zero = execute_circuit(build_circuit("baseline_readout", 2, 0), prof, 20000, 1)
    p_flip0 = (zero.counts.get("10", 0) + zero.counts.get("11", 0)) / 20000
    assert abs(p_flip0 - 0.2) < 3 * math.sqrt(0.16 / 20000)
    assert zero.counts.get("01", 0) == 0
    ones = execute_circuit(build_circuit("interleaved_x", 2, 0).with_gates([Gate("X", (0,)), Gate("X", (1,))]), prof, 20000, 1)
    p_flip1 = (ones.counts.get("10", 0) + ones.counts.get("00", 0)) / 20000
    assert abs(p_flip1 - 0.3) < 3 * math.sqrt(0.21 / 20000)


def test_overrotation_scales_angle():
    # X^f on |0>: P(1) = sin^2(pi f / 2)
    f = 0.9
    prof = DeviceProfile("d", 1, (0.0,), (0.0,), overrotation={"x": f})
    circ = NamedCircuit("interleaved_x", (Gate("X", (0,)),), 1, 0)
    counts = execute_circuit(circ, prof, 20000, 3)
    p1 = math.sin(math.pi * f / 2) ** 2
    assert abs(counts.counts.get("1", 0) / 20000 - p1) < 3 * math.sqrt(p1 * (1 - p1) / 20000)


def test_crosstalk_leaks_onto_neighbour():
    # RX(theta) on q0 leaks RX(kappa theta) on q1: P(q1=1) = sin^2(kappa theta / 2)
    kappa, theta = 0.2, math.pi
    prof = DeviceProfile("d", 3, (0.0,), (0.0,), crosstalk=(0.0, kappa, 0.0))
    circ = NamedCircuit("crosstalk_probe", (Gate("RX", (0,), angle=theta),), 3, 0)
    counts = execute_circuit(circ, prof, 20000, 9)
    p1 = sum(v for k, v in counts.counts.items() if k[1] == "1") / 20000
    want = math.sin(kappa * theta / 2) ** 2
    assert abs(p1 - want) < 3 * math.sqrt(want * (1 - want) / 20000)
    assert all(k[2] == "0" for k in counts.counts)


def test_markov_dephasing_flip_probability():
    # H IDLE(t) H: a Z flip maps |0> to |1>, so P(1) = (1 - (1 - 2p)^t) / 2
    p, t = 0.05, 6
    prof = DeviceProfile("d", 1, (0.0,), (0.0,), t2_markov=p)
    circ = NamedCircuit("ramsey", (Gate("H", (0,)), Gate("IDLE", (0,), duration=t), Gate("H", (0,))), 1, 0)
    counts = execute_circuit(circ, prof, 20000, 2)
    want = (1 - (1 - 2 * p) ** t) / 2
    assert abs(counts.counts.get("1", 0) / 20000 - want) < 3 * math.sqrt(want * (1 - want) / 20000)


def test_single_qubit_depolarising_rate():
    # After ID with depol p, a uniform non-identity Pauli: X or Y flips |0>, so P(1) = 2p/3
    p = 0.3
    prof = DeviceProfile("d", 1, (0.0,), (0.0,), depol_1q=p)
    circ = NamedCircuit("interleaved_id", (Gate("ID", (0,)),), 1, 0)
    counts = execute_circuit(circ, prof, 30000, 2)
    want = 2 * p / 3
    assert abs(counts.counts.get("1", 0) / 30000 - want) < 3 * math.sqrt(want * (1 - want) / 30000)


def test_trajectory_width_counts_draws():
    circ = build_circuit("ramsey", 2, 0)
    # 2 detunings + 4 gates * 2 + IDLE on 2 qubits + RZ*2 * 2 + outcome + 2 readout = 2+12+2+1+2
    assert trajectory_width(circ) == 20
    assert trajectory_width(circ) % 4 == 0


def test_uniform_block_drives_simulation():
    circ = bell_circuit()
    u = np.full((3, trajectory_width(circ)), 0.99)
    bits = _simulate(circ, DeviceProfile.noiseless(), u)
    assert bits.tolist() == [[1, 1]] * 3


def test_profile_validation_and_roundtrip(tmp_path):
    prof = fixture_profile("sim_torino")
    text = dump_profile(prof)
    assert parse_profile(text) == prof
    path = tmp_path / "p.ini"
    path.write_text(text)
    assert load_profile(path) == prof
    assert fixture_profile("sim_brisbane") != prof
    for bad in [
        dict(readout_eps0=(1.5,)),
        dict(overrotation={"x": 0.0}),
        dict(overrotation={"swap": 1.0}),
        dict(detune_sigma=-1.0),
        dict(t2_markov=0.7),
        dict(crosstalk=(0.1, 0.2, 0.3)),
        dict(n_qubits=6),
    ]:
        with pytest.raises(ProfileError):
            DeviceProfile(**{**dict(device_id="d", n_qubits=2, readout_eps0=(0.0,), readout_eps1=(0.0,)), **bad})
    with pytest.raises(ProfileError):
        parse_profile("[device]\nn_qubits = 2\n")
    with pytest.raises(ProfileError):
        fixture_profile("nope")


def test_profile_inline_comments():
    text = dump_profile(fixture_profile("sim_torino")).replace("n_qubits = 3", "n_qubits = 3  ; two to five")
    assert parse_profile(text + "\n# trailing\n") == fixture_profile("sim_torino")


def test_counts_table_invariants():
    with pytest.raises(SimulationError):
        CountsTable({"0": 3, "1": 1}, 5)
    with pytest.raises(SimulationError):
        CountsTable({"0": 3, "10": 1}, 4)
    with pytest.raises(SimulationError):
        CountsTable({"2": 4}, 4)
    t = CountsTable({"1": 1, "0": 3}, 4)
    assert list(t.counts) == ["0", "1"]
    assert t.digest() == CountsTable({"0": 3, "1": 1}, 4).digest()

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qdna.attest import AttestationError, ChshEvidence, attest_session, chsh_S, chsh_sigma, correlation_E
from qdna.circuits import bell_circuit, build_chsh_settings
from qdna.sim import CountsTable, DeviceProfile, execute_circuit, fixture_profile

R2 = 1 / math.sqrt(2)


def test_correlation_examples():
    assert correlation_E(CountsTable({"00": 1024}, 1024)) == 1.0
    assert correlation_E(CountsTable({"01": 512, "10": 512}, 1024)) == -1.0
    assert correlation_E(CountsTable({"00": 250, "11": 250, "01": 250, "10": 250}, 1000)) == 0.0
    with pytest.raises(AttestationError):
        correlation_E(CountsTable({"000": 4}, 4))


def test_chsh_examples():
    assert chsh_S(1, 1, 1, -1) == 4.0
    assert chsh_S(R2, R2, R2, -R2) == pytest.approx(2 * math.sqrt(2), abs=1e-15)
    assert chsh_S(0, 0, 0, 0) == 0.0
    with pytest.raises(AttestationError):
        chsh_S(1.2, 0, 0, 0)


@given(st.lists(st.floats(-1, 1), min_size=4, max_size=4))
def test_s_bounded_by_four(es):
    assert abs(chsh_S(*es)) <= 4.0


@given(st.dictionaries(st.sampled_from(["00", "01", "10", "11"]), st.integers(0, 500), min_size=1))
def test_correlation_is_order_independent(counts):
    shots = sum(counts.values())
    if shots == 0:
        return
    table = CountsTable(counts, shots)
    shuffled = CountsTable(dict(reversed(list(counts.items()))), shots)
    assert correlation_E(table) == correlation_E(shuffled)
    assert -1.0 <= correlation_E(table) <= 1.0


def test_sigma_binomial_propagation():
    # independent oracle: sum of per-setting binomial variances of E = 2p - 1
    es, shots = (0.7, 0.7, 0.7, -0.7), 1000
    var = sum(4 * ((1 + e) / 2) * ((1 - e) / 2) / shots for e in es)
    assert chsh_sigma(es, shots) == pytest.approx(math.sqrt(var), rel=1e-12)


def test_default_settings_follow_cos_oracle():
    ideal = DeviceProfile.noiseless()
    want = [R2, R2, R2, -R2]
    for circ, e in zip(build_chsh_settings(bell_circuit()), want):
        got = correlation_E(execute_circuit(circ, ideal, 10000, 3))
        assert abs(got - e) <= 3 * math.sqrt((1 - e * e) / 10000)


def _session(base, profile, shots, seed):
    return attest_session([execute_circuit(c, profile, shots, seed) for c in build_chsh_settings(base)])


def test_noiseless_bell_passes_and_product_state_fails():
    ev = _session(bell_circuit(), DeviceProfile.noiseless(), 10000, 1)
    assert 2.75 <= ev.S <= 2.85 and ev.passed
    local = _session(bell_circuit(entangled=False), DeviceProfile.noiseless(), 10000, 1)
    assert local.S <= 2 + 3 * local.sigma_S and not local.passed


def test_heavy_depolarising_breaks_violation():
    noisy = DeviceProfile.noiseless().evolve(depol_2q=0.5)
    ev = _session(bell_circuit(), noisy, 4096, 2)
    # a 2q Pauli error scrambles E to -E/15 on average: E' = E (1 - p 16/15)
    assert ev.S < 2 and not ev.passed
    assert ev.S == pytest.approx(2 * math.sqrt(2) * (1 - 0.5 * 16 / 15), abs=4 * ev.sigma_S)


def test_mean_s_non_increasing_in_depolarisation():
    means = []
    for p in (0.0, 0.05, 0.1, 0.2):
        prof = DeviceProfile.noiseless().evolve(depol_2q=p)
        means.append(np.mean([_session(bell_circuit(), prof, 1024, s).S for s in range(10)]))
    assert all(a >= b for a, b in zip(means, means[1:]))


def test_fixture_profiles_pass_chsh():
    for name in ("sim_torino", "sim_brisbane"):
        base = bell_circuit()
        assert _session(base, fixture_profile(name), 1024, 0).passed


def test_mismatched_shots_rejected():
    tables = [CountsTable({"00": 10}, 10)] * 3 + [CountsTable({"00": 11}, 11)]
    with pytest.raises(AttestationError):
        attest_session(tables)
    with pytest.raises(AttestationError):
        attest_session(tables[:3])


def test_evidence_recheck():
    ev = attest_session([CountsTable({"00": 9, "01": 1}, 10)] * 3 + [CountsTable({"01": 9, "00": 1}, 10)])
    assert ev.problems() == [] and ev.S == pytest.approx(3.2) and ev.passed
    assert ChshEvidence.from_dict(ev.to_dict()) == ev
    forged = ChshEvidence(*ev.correlations, S=ev.S + 0.5, shots_per_setting=10, passed=True)
    assert forged.problems()
    flipped = ChshEvidence(*ev.correlations, S=ev.S, shots_per_setting=10, passed=False)
    assert flipped.problems()

from __future__ import annotations

import contextlib
import time

import pytest

from qdna.provenance import FIXED_CLOCK_ENV, generate_hmac_key, generate_signing_key
from qdna.session import run_session
from qdna.sim import fixture_profile

FIXED_TIME = "2025-03-01T08:00:00Z"


@pytest.fixture(scope="session")
def signing_key():
    return generate_signing_key()


@pytest.fixture(scope="session")
def other_signing_key():
    return generate_signing_key()


@pytest.fixture(scope="session")
def hmac_key():
    return bytes(range(32))


@pytest.fixture(scope="session")
def torino():
    return fixture_profile("sim_torino")


@pytest.fixture(scope="session")
def brisbane():
    return fixture_profile("sim_brisbane")


@pytest.fixture(scope="session")
def sealed_chain(torino, hmac_key, signing_key):
    """Three chained sealed artifacts of the torino fixture, 256 shots each."""
    out, prev = [], None
    for i in range(3):
        art, _ = run_session(
            torino, 11, f"s{i:03d}", hmac_key=hmac_key, signing_key=signing_key, prev_hash=prev, shots=256, timestamp=FIXED_TIME
        )
        out.append(art)
        prev = art.record_hash
    return out


@pytest.fixture
def fixed_clock(monkeypatch):
    monkeypatch.setenv(FIXED_CLOCK_ENV, FIXED_TIME)
    return FIXED_TIME


@pytest.fixture
def fresh_hmac_key():
    return generate_hmac_key()


CRITERIA = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """``with criterion(n, label):`` records one acceptance line, pass or fail."""
    log = request.config.stash.setdefault(CRITERIA, [])

    @contextlib.contextmanager
    def record(number, label):
        start = time.perf_counter()
        try:
            yield
        except BaseException as exc:
            log.append((number, "FAIL", f"{label} ({type(exc).__name__})", time.perf_counter() - start))
            raise
        log.append((number, "PASS", label, time.perf_counter() - start))

    return record


def pytest_terminal_summary(terminalreporter, config):
    log = config.stash.get(CRITERIA, [])
    if not log:
        return
    terminalreporter.section("acceptance criteria")
    for number, status, label, secs in sorted(log):
        terminalreporter.write_line(f"{status} criterion {number}: {label} [{secs:.1f}s]")

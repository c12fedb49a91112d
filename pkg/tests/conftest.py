import sys

import numpy as np
import pytest

from enccluster.dmcfe import scheme


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def bls_pp3():
    pp = scheme.setup(256, 3, rng_seed=1)
    return pp, scheme.keygen_all(pp, seed=2)


@pytest.fixture(scope="session")
def bn64_pp2():
    """Small insecure BN group: fast enough for pure-Python pairing tests."""
    pp = scheme.setup(64, 2, rng_seed=1)
    return pp, scheme.keygen_all(pp, seed=2)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)

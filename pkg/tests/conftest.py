import numpy as np
import pytest

from hls import euclidean_baseline


@pytest.fixture(scope="session")
def baseline2():
    """Converged flat extremal pair for n=2, alpha=1, p=3/2 on the unit disk."""
    res = euclidean_baseline(2, 1.0, 1.5, 1.0, 40)
    assert res.converged
    return res


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[key])

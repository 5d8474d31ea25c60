import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mfld import toys

settings.register_profile("mfld", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("mfld")


@pytest.fixture(params=list(toys.TOYS))
def toy(request):
    return toys.make_toy(request.param)


@pytest.fixture
def regression():
    return toys.make_toy("regression")


@pytest.fixture
def classification():
    return toys.make_toy("classification")


@pytest.fixture
def linear():
    return toys.make_toy("linear")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Criterion number -> one-line verdict, printed at the end of the session."""
    return request.config.stash.setdefault(ACCEPTANCE, {})


def pytest_terminal_summary(terminalreporter, config):
    log = config.stash.get(ACCEPTANCE, {})
    if not log:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(log):
        terminalreporter.write_line(log[key])

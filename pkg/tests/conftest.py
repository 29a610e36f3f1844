import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from nclln import RateEvaluator, flip_chain, iid_model
from nclln.sums import Observable

settings.register_profile("nclln", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("nclln")


@pytest.fixture(scope="session")
def fair_coin():
    model = iid_model([0.5, 0.5])
    return RateEvaluator().fit(model, Observable.from_state_values([1, -1], model.stationary))


@pytest.fixture(scope="session")
def flip01():
    model = flip_chain(0.1)
    return RateEvaluator().fit(model, Observable.from_state_values([1, -1], model.stationary))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)

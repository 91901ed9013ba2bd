import pytest
from hypothesis import HealthCheck, settings

from tdmargin.netmodel import load_feeder, load_scenario, load_transmission

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def ieee9():
    return load_transmission("ieee9.json")


@pytest.fixture(scope="session")
def ieee4_bal():
    return load_feeder("ieee4_balanced.json")


@pytest.fixture(scope="session")
def scenario_94():
    return load_scenario("scenario_ieee9_4bus.json")

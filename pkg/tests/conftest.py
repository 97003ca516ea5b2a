import pytest

from qcoexist.link_model import LinkParams
from qcoexist.scenario import load_scenario, reference_scenario_path


@pytest.fixture(scope="session")
def reference():
    return load_scenario(reference_scenario_path())


@pytest.fixture
def dark_link():
    # operating point of the deployed link, no classical light
    return LinkParams(mu=0.009, eta_idler_ref=0.03, eta_signal_ref=0.001,
                      n_dark_idler=1.8e-7, n_dark_signal=3.8e-7)

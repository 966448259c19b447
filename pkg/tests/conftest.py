import warnings

import pytest
from hypothesis import HealthCheck, settings

from hyperribbon import DatasetSpec, synthesize_dataset
from hyperribbon.dynamics import StepSizeWarning

settings.register_profile(
    "repo", deadline=None, max_examples=40, derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repo")


@pytest.fixture(autouse=True)
def _quiet_step_size():
    # alpha = 1/lambda_1 is used on purpose in many fixtures
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", StepSizeWarning)
        yield


@pytest.fixture(scope="session")
def sloppy_spec():
    return DatasetSpec(n=50, d=100, c=0.2, sigma_star_sq=2.0, sigma_w_sq=0.1, seed=1)


@pytest.fixture(scope="session")
def sloppy(sloppy_spec):
    return synthesize_dataset(sloppy_spec)


@pytest.fixture(scope="session")
def small():
    return synthesize_dataset(DatasetSpec(n=10, d=20, c=0.3, sigma_star_sq=1.0, sigma_w_sq=0.5, seed=3))

import numpy as np
import pytest

from deeplcc.controller import ControllerParams
from deeplcc.data import collect_dataset, partition
from deeplcc.linear_model import LinearizationCoeffs, build_model, discretize
from deeplcc.vehicle import PlatoonConfig

NOMINAL_COEFFS = LinearizationCoeffs(0.3 * np.pi, 1.5, 0.9)


@pytest.fixture(scope="session")
def platoon():
    return PlatoonConfig.heterogeneous(8, (3, 6), seed=0)


@pytest.fixture(scope="session")
def dataset(platoon):
    return collect_dataset(platoon, 15.0, 2000, seed=0)


@pytest.fixture(scope="session")
def blocks(dataset):
    pr = ControllerParams()
    return partition(dataset, pr.Tini, pr.N)


@pytest.fixture(scope="session")
def small_lti():
    """n=4, S={2} platoon with identical HDVs, discretised at 0.05 s."""
    model = build_model(4, (2,), {i: NOMINAL_COEFFS for i in (1, 3, 4)})
    return model, discretize(model, 0.05)

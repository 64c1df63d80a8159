import numpy as np
import pytest

from dichotomy_lab.gallery import (
    analytic_certificate,
    analytic_projections,
    make_gallery_process,
    preset,
)
from dichotomy_lab.process import DiscreteProcess


@pytest.fixture(scope="session")
def params():
    return preset("paper-default")


@pytest.fixture(scope="session")
def gallery(params):
    return make_gallery_process(params)


@pytest.fixture(scope="session")
def gallery_Q(params):
    return analytic_projections(params)


@pytest.fixture(scope="session")
def gallery_C(params):
    return analytic_certificate(params)


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture(scope="session")
def saddle():
    """Autonomous diag(1/2, 2) on indices -60..60."""
    return DiscreteProcess.autonomous(np.diag([0.5, 2.0]), -60, 60)

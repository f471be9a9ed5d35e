import numpy as np
import pytest

from fluxmeas.spectral import DeltaBarrierWell, QuarticDoubleWell, build_basis

MU, LAM = 9.6, 4.382


@pytest.fixture(scope="session")
def box500():
    return build_basis(DeltaBarrierWell(1.0, 500.0, 1.0), n_states=32, n_points=2049)


@pytest.fixture(scope="session")
def box0():
    return build_basis(DeltaBarrierWell(1.0, 0.0, 1.0), n_states=16, n_points=1025)


@pytest.fixture(scope="session")
def small_box():
    return build_basis(DeltaBarrierWell(1.0, 50.0, 1.0), n_states=12, n_points=513)


@pytest.fixture(scope="session")
def quartic_slow():
    """Quartic well at kappa = 1/8: six levels below the barrier top."""
    return build_basis(QuarticDoubleWell(MU, LAM, 0.125), n_states=32, n_points=2049)


@pytest.fixture(scope="session")
def quartic_fast():
    return build_basis(QuarticDoubleWell(MU, LAM, 1.0), n_states=24, n_points=1025)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)

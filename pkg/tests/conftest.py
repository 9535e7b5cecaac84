import numpy as np
import pytest

import field
import ground_state as gs_mod
import params as params_mod
import riesz
from field import GridSpec

# Быстрый одномерный режим: N=1, θ=1/2, p=2, γ=1 → β=2, α=4, κ=1/ε
N1, THETA1, P1, GAMMA1 = 1, 0.5, 2.0, 1.0
PROFILE_1D = GridSpec(1, 512, 16.0)
FLOW_1D = gs_mod.FlowSettings(dtau=0.1, tol=1e-10)


@pytest.fixture(scope="session")
def ground_1d():
    return gs_mod.normalized_gradient_flow(1.0, PROFILE_1D, P1, THETA1, FLOW_1D)


@pytest.fixture(scope="session")
def riesz_1d():
    return riesz.build(PROFILE_1D, THETA1)


def params_1d(eps: float, omega: float = 1.0, v=(0.0,)) -> params_mod.ModelParams:
    return params_mod.ModelParams.from_inputs(N1, THETA1, P1, GAMMA1, eps, omega=omega, v=v)


def scaled_grid(eps: float, profile: GridSpec = PROFILE_1D) -> GridSpec:
    """Физическая сетка, узлы которой точно совпадают с узлами профиля после x = ε^β y."""
    return GridSpec(profile.dim, profile.n, profile.L * eps ** 2.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_field(grid: GridSpec, rng: np.random.Generator, complex_: bool = False) -> field.ScalarField:
    values = rng.normal(size=grid.shape)
    if complex_:
        values = values + 1j * rng.normal(size=grid.shape)
    return field.ScalarField(grid, values)

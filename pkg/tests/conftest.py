import numpy as np
import pytest

import itoreg as ir


@pytest.fixture(scope="session")
def small_grid() -> ir.TimeGrid:
    return ir.TimeGrid(1.0, 2**8, 0.25)


@pytest.fixture(scope="session")
def medium_grid() -> ir.TimeGrid:
    return ir.TimeGrid(1.0, 2**12, 0.125)


@pytest.fixture(scope="session")
def w_small(small_grid) -> ir.SamplePath:
    return ir.simulate_brownian(small_grid, 101)


@pytest.fixture(scope="session")
def w_medium(medium_grid) -> ir.SamplePath:
    return ir.simulate_brownian(medium_grid, 202)


@pytest.fixture(scope="session")
def bundle_medium(medium_grid) -> ir.PathBundle:
    """X = W + t^2 on the medium grid."""
    return ir.simulate_weak_dirichlet(
        medium_grid, ir.BrownianMotion(), ir.FiniteVariation(profile=lambda t: t**2), 303
    )


def nonincreasing(values, slack=0.0) -> bool:
    v = list(values)
    return all(v[i + 1] <= v[i] + slack for i in range(len(v) - 1))


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(9)

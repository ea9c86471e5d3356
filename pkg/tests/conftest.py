import numpy as np
import pytest

import decent_opt as do


@pytest.fixture(scope="session")
def hand_problem():
    """Two scalar agents with unit curvature and local minimizers {0, 2}.

    x* = 1, zeta^2 = 1, L = mu = 1, f* = 0.5; everything about it is hand
    checkable.
    """
    return do.QuadraticProblem(a=np.ones((2, 1, 1)), x_local_star=[[0.0], [2.0]],
                               sigma=0.0, hetero_c=1.0)


@pytest.fixture(scope="session")
def w2():
    """[[0.75, 0.25], [0.25, 0.75]] -- the lazy two-agent averaging matrix."""
    return do.lazy_transform(do.build_complete(2))


@pytest.fixture(scope="session")
def ring32():
    return do.build_ring(32)


@pytest.fixture(scope="session")
def fig1_problem():
    """The headline configuration: 32 agents, d=10, p=20, eps-variance 0.05."""
    return do.gen_quadratic(n=32, d=10, p=20, c=4.0, sigma=np.sqrt(0.05), seed=42)

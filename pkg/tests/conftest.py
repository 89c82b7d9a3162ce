import numpy as np
import pytest

from src import estimators, quadrature, simulator
from src.dislocation_laws import binary_beta, binary_uniform, dyadic, ternary_uniform_discrete
from src.measures import pi_from_law
from src.testfunctions import TestFunction


@pytest.fixture(scope="session")
def uniform_law():
    return binary_uniform()


@pytest.fixture(scope="session")
def uniform_pi(uniform_law):
    return pi_from_law(uniform_law)


@pytest.fixture(scope="session")
def beta22_law():
    return binary_beta(2.0, 2.0)


@pytest.fixture(scope="session")
def dyadic_law():
    return dyadic()


@pytest.fixture(scope="session")
def ternary_law():
    return ternary_uniform_discrete()


@pytest.fixture
def hinge():
    """g(a) = (a - 1/2)_+ : supported on [gamma0, 1], ||g'|| = 1."""
    return TestFunction(
        name="hinge",
        func=lambda a: np.clip(np.asarray(a, dtype=float) - 0.5, 0.0, None),
        sup_norm=0.5,
        support=(0.0, 1.0),
        derivative=lambda a: (np.asarray(a, dtype=float) > 0.5).astype(float),
        derivative_sup=1.0,
        breakpoints=(0.5,),
    )


@pytest.fixture(autouse=True)
def _module_defaults(monkeypatch):
    # CLI tests call configure(); keep every test on the built-in defaults
    for name in ("EPSABS", "EPSREL", "LIMIT", "TAIL_TOL", "SAMPLER_PANELS"):
        monkeypatch.setattr(quadrature, name, getattr(quadrature, name))
    for name in ("MAX_FRAGMENTS", "MACHINE_FLOOR", "GAMMA0"):
        monkeypatch.setattr(simulator, name, getattr(simulator, name))
    for name in ("MU_DELTA", "DEFAULT_N", "DEFAULT_GAMMA_RULE", "DEFAULT_KERNEL_GAMMA_RULE"):
        monkeypatch.setattr(estimators, name, getattr(estimators, name))

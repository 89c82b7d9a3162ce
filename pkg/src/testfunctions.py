# src/testfunctions.py

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Optional, Tuple

import numpy as np
from numpy.polynomial import Legendre

from .errors import IllConditionedError, InvalidParameterError, SupportOverflowError
from .quadrature import gauss_legendre_panels, integrate_1d


logger = logging.getLogger(__name__)

Func = Callable[[np.ndarray], np.ndarray]

# slope of the cubic ramp 3t^2 - 2t^3 at t = 1/2
RAMP_SLOPE = 1.5
MAX_KERNEL_ORDER = 10
KERNEL_TOL = 1e-10
SUP_MARGIN = 1.001


# -------------------------------------------------------
# TYPE
# -------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TestFunction:
    """
    Evaluable g on [0, 1], zero outside its support, with the metadata the
    error bounds are stated in: sup norm, derivative sup norm, support width.
    """

    __test__ = False  # not a pytest class

    name: str
    func: Func
    sup_norm: float
    support: Tuple[float, float] = (0.0, 1.0)
    derivative: Optional[Func] = None
    derivative_sup: Optional[float] = None
    breakpoints: Tuple[float, ...] = ()
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def support_width(self) -> float:
        return float(self.support[1] - self.support[0])

    def _inside(self, a: np.ndarray) -> np.ndarray:
        lo, hi = self.support
        return (a >= max(lo, 0.0)) & (a <= min(hi, 1.0))

    def __call__(self, a) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        inside = self._inside(a)
        safe = np.where(inside, a, 0.5 * (self.support[0] + self.support[1]))
        return np.where(inside, np.asarray(self.func(safe), dtype=float), 0.0)

    def deriv(self, a) -> np.ndarray:
        if self.derivative is None:
            raise InvalidParameterError(f"test function '{self.name}' carries no derivative")
        a = np.asarray(a, dtype=float)
        inside = self._inside(a)
        safe = np.where(inside, a, 0.5 * (self.support[0] + self.support[1]))
        return np.where(inside, np.asarray(self.derivative(safe), dtype=float), 0.0)

    def grid_sup(self, n: int = 10_001) -> float:
        grid = np.linspace(0.0, 1.0, n)
        return float(np.max(np.abs(self(grid))))


def _dense_grid(lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    """Linear grid plus a log-spaced cluster at the left end (where log(1/a) terms live)."""
    lin = np.linspace(lo, hi, 20_001)
    left = lo + np.logspace(-12, 0, 2_001) * (hi - lo)
    return np.unique(np.concatenate([lin, left[left <= hi]]))


def _grid_sup(f: Func, lo: float = 0.0, hi: float = 1.0) -> float:
    grid = _dense_grid(lo, hi)
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = np.abs(np.asarray(f(grid), dtype=float))
    return float(np.nanmax(vals)) * SUP_MARGIN


def _check_gamma(gamma: float, upper: float = 1.0) -> float:
    gamma = float(gamma)
    if not (0.0 < gamma < upper):
        raise InvalidParameterError(f"invalid gamma {gamma!r}: expected 0 < gamma < {upper:g}")
    return gamma


# -------------------------------------------------------
# CUTOFFS  f_gamma, g_gamma = -a f_gamma'(a)
# -------------------------------------------------------

def _ramp(t):
    return 3.0 * t**2 - 2.0 * t**3


def _ramp_d(t):
    return 6.0 * t - 6.0 * t**2


def _ramp_dd(t):
    return 6.0 - 12.0 * t


def make_cutoff(gamma: float) -> Tuple[TestFunction, TestFunction]:
    """
    f_gamma = 1 on [0, 1-gamma], cubic ramp down to f_gamma(1) = 0, ||f'|| = 1.5/gamma.
    Returns (f_gamma, g_gamma) with g_gamma(a) = -a f_gamma'(a), supported in [1-gamma, 1].
    """
    gamma = _check_gamma(gamma)
    knee = 1.0 - gamma

    def t_of(a):
        return np.clip((1.0 - np.asarray(a, dtype=float)) / gamma, 0.0, 1.0)

    def f(a):
        return _ramp(t_of(a))

    def f_prime(a):
        return -_ramp_d(t_of(a)) / gamma

    def g(a):
        return -np.asarray(a, dtype=float) * f_prime(a)

    def g_prime(a):
        a = np.asarray(a, dtype=float)
        t = t_of(a)
        return _ramp_d(t) / gamma - a * _ramp_dd(t) / gamma**2

    f_fn = TestFunction(
        name=f"f_cutoff({gamma:g})",
        func=f,
        sup_norm=1.0,
        derivative=f_prime,
        derivative_sup=RAMP_SLOPE / gamma,
        breakpoints=(knee,),
        metadata={"gamma": gamma, "ramp_constant": RAMP_SLOPE},
    )
    g_fn = TestFunction(
        name=f"cutoff({gamma:g})",
        func=g,
        sup_norm=RAMP_SLOPE / gamma,
        support=(knee, 1.0),
        derivative=g_prime,
        derivative_sup=RAMP_SLOPE / gamma + 6.0 / gamma**2,
        breakpoints=(knee,),
        metadata={"gamma": gamma, "ramp_constant": RAMP_SLOPE},
    )
    return f_fn, g_fn


# -------------------------------------------------------
# MOMENT TEST FUNCTIONS
# -------------------------------------------------------

def make_moment_testfn(k: int, gamma: float) -> TestFunction:
    """
    g~(a) = -a h'(a) for h(a) = f_gamma(1-a) log(1/a)^k, i.e.

        g~(a) = a f_gamma'(1-a) L^k + k f_gamma(1-a) L^(k-1),   L = log(1/a).

    On [gamma, 1] only k L^(k-1) survives; on [0, gamma] the ramp t = a/gamma enters.
    """
    if int(k) != k or k < 1:
        raise InvalidParameterError(f"moment order must be a positive integer, got {k!r}")
    k = int(k)
    gamma = _check_gamma(gamma, 0.5)

    def parts(a):
        a = np.asarray(a, dtype=float)
        safe = np.where(a > 0.0, a, 1.0)
        L = -np.log(safe)
        t = np.clip(a / gamma, 0.0, 1.0)
        return a, safe, L, t

    def power(L, p):
        return np.ones_like(L) if p == 0 else L**p

    def g(a):
        a, safe, L, t = parts(a)
        ramp_term = -t * _ramp_d(t) * power(L, k)
        main_term = k * _ramp(t) * power(L, k - 1)
        return np.where(a > 0.0, ramp_term + main_term, 0.0)

    def g_prime(a):
        a, safe, L, t = parts(a)
        on_ramp = a < gamma
        d = np.where(
            on_ramp,
            (-(_ramp_d(t) + t * _ramp_dd(t)) * power(L, k) + 2.0 * k * _ramp_d(t) * power(L, k - 1)) / gamma,
            0.0,
        )
        if k >= 2:
            d = d - k * (k - 1) * _ramp(t) * power(L, k - 2) / safe
        return np.where(a > 0.0, d, 0.0)

    def ramp_part(a):
        a, safe, L, t = parts(a)
        return np.where(a > 0.0, -t * _ramp_d(t) * power(L, k), 0.0)

    ramp_sup = _grid_sup(ramp_part, 0.0, gamma)
    plateau_sup = k * math.log(1.0 / gamma) ** (k - 1)

    return TestFunction(
        name=f"moment({k},{gamma:g})",
        func=g,
        sup_norm=_grid_sup(g),
        support=(0.0, 1.0),
        derivative=g_prime,
        derivative_sup=_grid_sup(g_prime),
        breakpoints=(gamma,),
        metadata={
            "k": k,
            "gamma": gamma,
            # C~_gamma part (supported on [0, gamma]) + C' part k f_gamma(1-a) L^(k-1)
            "ramp_width": gamma,
            "ramp_sup": ramp_sup,
            "plateau_sup": plateau_sup,
        },
    )


# -------------------------------------------------------
# VANISHING-MOMENT KERNELS  phi = p * B
# -------------------------------------------------------

def _bump(x):
    x = np.asarray(x, dtype=float)
    inside = (x > 0.0) & (x < 1.0)
    safe = np.where(inside, x, 0.5)
    return np.where(inside, np.exp(-1.0 / (safe * (1.0 - safe))), 0.0)


def _bump_d(x):
    x = np.asarray(x, dtype=float)
    inside = (x > 0.0) & (x < 1.0)
    safe = np.where(inside, x, 0.5)
    q = safe * (1.0 - safe)
    return np.where(inside, _bump(safe) * (1.0 - 2.0 * safe) / q**2, 0.0)


def make_kernel(N: int) -> TestFunction:
    """
    Smooth kernel on (0, 1) with int phi = 1 and int a^k phi = 0 for k = 1..N.

    p is expanded in shifted Legendre polynomials P~_j(x) = P_j(2x - 1); since any
    polynomial q of degree <= N then satisfies int q phi = q(0), the system is
    sum_j c_j int P~_k P~_j B = P~_k(0) = (-1)^k.
    """
    if int(N) != N or N < 0:
        raise InvalidParameterError(f"kernel order must be a non-negative integer, got {N!r}")
    N = int(N)
    if N > MAX_KERNEL_ORDER:
        raise IllConditionedError(f"kernel order {N} above {MAX_KERNEL_ORDER}")

    # composite Gauss-Legendre: B is flat at both ends, so 40 x 20 nodes reach round-off
    nodes, weights = gauss_legendre_panels(np.linspace(0.0, 1.0, 41), order=20)
    x, w = nodes.ravel(), weights.ravel() * _bump(nodes.ravel())
    vander = np.column_stack([Legendre.basis(j, domain=[0.0, 1.0])(x) for j in range(N + 1)])
    gram = vander.T @ (w[:, None] * vander)
    rhs = np.array([(-1.0) ** k for k in range(N + 1)])
    coef = np.linalg.solve(gram, rhs)
    logger.debug("[QUAD] kernel N=%d gram condition %.3e", N, np.linalg.cond(gram))

    poly = Legendre(coef, domain=[0.0, 1.0])
    dpoly = poly.deriv()

    def phi(x):
        x = np.asarray(x, dtype=float)
        return poly(x) * _bump(x)

    def phi_prime(x):
        x = np.asarray(x, dtype=float)
        return dpoly(x) * _bump(x) + poly(x) * _bump_d(x)

    residuals = kernel_moments(phi, N)
    residuals[0] -= 1.0
    worst = float(np.max(np.abs(residuals)))
    if worst > KERNEL_TOL:
        logger.warning("[QUAD] kernel N=%d moment residual %.2e above %.0e", N, worst, KERNEL_TOL)

    return TestFunction(
        name=f"kernel({N})",
        func=phi,
        sup_norm=_grid_sup(phi),
        support=(0.0, 1.0),
        derivative=phi_prime,
        derivative_sup=_grid_sup(phi_prime),
        metadata={"order": N, "coefficients": coef.tolist(), "moment_residual": worst},
    )


def kernel_moments(phi: Func, N: int) -> np.ndarray:
    """int_0^1 a^k phi(a) da for k = 0..N."""
    return np.array(
        [integrate_1d(lambda x, k=k: np.asarray(x, dtype=float) ** k * phi(x), 0.0, 1.0)[0]
         for k in range(N + 1)]
    )


def localize_kernel(phi: TestFunction, a: float, gamma: float) -> Tuple[TestFunction, TestFunction]:
    """
    phi_{gamma,a}(x) = phi((x - a)/gamma)/gamma, supported in (a, a + gamma), and the
    estimator integrand x -> -x phi_{gamma,a}'(x).
    """
    a = float(a)
    gamma = float(gamma)
    if gamma <= 0.0:
        raise InvalidParameterError(f"invalid gamma {gamma!r}")
    if not (0.0 < a < 1.0) or gamma >= min(a, 1.0 - a):
        raise SupportOverflowError(
            f"kernel at a={a:g} with width {gamma:g} needs 0 < gamma < min(a, 1-a)"
        )
    if phi.derivative is None:
        raise InvalidParameterError(f"kernel '{phi.name}' carries no derivative")

    def local(x):
        return phi.func((np.asarray(x, dtype=float) - a) / gamma) / gamma

    def local_prime(x):
        return phi.derivative((np.asarray(x, dtype=float) - a) / gamma) / gamma**2

    def integrand(x):
        return -np.asarray(x, dtype=float) * local_prime(x)

    meta = {"a": a, "gamma": gamma, "base": phi.name}
    local_fn = TestFunction(
        name=f"{phi.name}@{a:g}/{gamma:g}",
        func=local,
        sup_norm=phi.sup_norm / gamma,
        support=(a, a + gamma),
        derivative=local_prime,
        derivative_sup=(phi.derivative_sup or 0.0) / gamma**2,
        metadata=meta,
    )
    integrand_fn = TestFunction(
        name=f"-x*d{phi.name}@{a:g}/{gamma:g}",
        func=integrand,
        sup_norm=(a + gamma) * (phi.derivative_sup or 0.0) / gamma**2,
        support=(a, a + gamma),
        metadata=meta,
    )
    return local_fn, integrand_fn


def kernel_grid(phi: TestFunction, n: int = 1001) -> np.ndarray:
    """Columns (a, phi(a), phi'(a)) on a uniform grid of [0, 1]."""
    a = np.linspace(0.0, 1.0, n)
    return np.column_stack([a, phi(a), phi.deriv(a)])


# -------------------------------------------------------
# NAMED TEST FUNCTIONS (CLI --fn)
# -------------------------------------------------------

def _constant_one() -> TestFunction:
    return TestFunction(
        name="one",
        func=lambda a: np.ones_like(np.asarray(a, dtype=float)),
        sup_norm=1.0,
        derivative=lambda a: np.zeros_like(np.asarray(a, dtype=float)),
        derivative_sup=0.0,
    )


def _identity() -> TestFunction:
    return TestFunction(
        name="identity",
        func=lambda a: np.asarray(a, dtype=float),
        sup_norm=1.0,
        derivative=lambda a: np.ones_like(np.asarray(a, dtype=float)),
        derivative_sup=1.0,
    )


def _square() -> TestFunction:
    return TestFunction(
        name="square",
        func=lambda a: np.asarray(a, dtype=float) ** 2,
        sup_norm=1.0,
        derivative=lambda a: 2.0 * np.asarray(a, dtype=float),
        derivative_sup=2.0,
    )


def _sine() -> TestFunction:
    return TestFunction(
        name="sine",
        func=lambda a: np.sin(math.pi * np.asarray(a, dtype=float)) / math.pi,
        sup_norm=1.0 / math.pi,
        derivative=lambda a: np.cos(math.pi * np.asarray(a, dtype=float)),
        derivative_sup=1.0,
    )


NAMED_FUNCTIONS: Dict[str, Callable[[], TestFunction]] = {
    "one": _constant_one,
    "identity": _identity,
    "square": _square,
    "sine": _sine,
}


def get_testfn(key: str) -> TestFunction:
    """'one', 'identity', 'square', 'sine' or 'cutoff:<gamma>' (the g_gamma of make_cutoff)."""
    key = key.strip()
    if key.startswith("cutoff:"):
        try:
            gamma = float(key.split(":", 1)[1])
        except ValueError:
            raise InvalidParameterError(f"bad cutoff spec '{key}'") from None
        return make_cutoff(gamma)[1]
    if key in NAMED_FUNCTIONS:
        return NAMED_FUNCTIONS[key]()
    raise InvalidParameterError(
        f"unknown test function '{key}' (known: {', '.join(NAMED_FUNCTIONS)}, cutoff:<gamma>)"
    )

# src/measures.py
#
# Deterministic transforms between the dislocation law, the tagged-fragment
# step density pi and its logarithmic twin beta, plus the quadrature values
# (moments, limit measure) used as ground truth by every estimator check.

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Tuple, Union

import numpy as np

from . import quadrature
from .dislocation_laws import BinaryDislocationLaw, DiscreteDislocationLaw, DislocationLaw
from .errors import (
    DivergentMomentError,
    DomainError,
    InvalidDensityError,
    InvalidParameterError,
    ZeroMeanError,
)
from .quadrature import InverseCdf, PanelTail, integrate_1d


logger = logging.getLogger(__name__)

LOG2 = math.log(2.0)
PI_MASS_TOL = 1e-8
MOMENT_TAIL_TOL = 1e-9
ZERO_MEAN = 1e-12
CUTOFF_CAP = 200.0

Func = Callable[[np.ndarray], np.ndarray]


# -------------------------------------------------------
# TYPES
# -------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LevyDensity:
    """Step density pi of the tagged fragment's log-size walk, on [0, inf)."""

    name: str
    pi: Func
    kappa1: float
    kappa2: float
    quadrature_cutoff: float
    smoothness: float = 1.0
    breakpoints: Tuple[float, ...] = ()
    law: Optional[DislocationLaw] = field(default=None, repr=False)

    spread_out = True

    def density(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        val = np.asarray(self.pi(np.clip(x, 0.0, None)), dtype=float)
        return np.where(x >= 0.0, val, 0.0)

    __call__ = density

    def mass(self) -> float:
        val, _ = integrate_1d(self.density, 0.0, self.quadrature_cutoff, self.breakpoints)
        return val

    @cached_property
    def _tail(self) -> PanelTail:
        return PanelTail(self.density, 0.0, self.quadrature_cutoff, self.breakpoints)

    def tail(self, x) -> np.ndarray:
        """pi(x, +inf), truncated at the quadrature cutoff."""
        return self._tail(x)

    @cached_property
    def _inverse(self) -> InverseCdf:
        return InverseCdf(self.density, 0.0, self.quadrature_cutoff, self.breakpoints)

    def sample(self, u: np.ndarray) -> np.ndarray:
        """Steps distributed as pi, from uniforms u (tabulated inverse CDF)."""
        return self._inverse(u)

    def verify(self) -> "LevyDensity":
        """Normalisation is enforced; declared class orders are only spot-checked (warnings)."""
        total = self.mass()
        if not np.isfinite(total) or abs(total - 1.0) > PI_MASS_TOL:
            raise InvalidDensityError(f"pi '{self.name}' integrates to {total!r}, expected 1")

        c = self.quadrature_cutoff
        beyond, _ = integrate_1d(self.density, c, 2.0 * c + 1.0)
        if beyond > MOMENT_TAIL_TOL:
            logger.warning("[QUAD] pi '%s' keeps mass %.2e beyond cutoff %.3g", self.name, beyond, c)

        if np.isfinite(self.kappa1) and self.kappa1 > 0:
            last_knot = max(self.breakpoints, default=0.0)
            x1, x2 = last_knot + 0.5 * (c - last_knot), c
            p1, p2 = self.density(np.array([x1, x2]))
            if p1 > 0 and p2 > 0:
                observed = (math.log(p1) - math.log(p2)) / (x2 - x1)
                if observed < 0.9 * self.kappa1:
                    logger.warning(
                        "[QUAD] pi '%s': declared kappa1=%.3g but tail decays at rate %.3g",
                        self.name, self.kappa1, observed,
                    )
        if np.isfinite(self.kappa2):
            near = np.array([1e-6, 1e-4])
            scaled = near ** (1.0 - self.kappa2) * self.density(near)
            if scaled[1] > 0 and scaled[0] > 100.0 * scaled[1]:
                logger.warning(
                    "[QUAD] pi '%s': x^(1-kappa2) pi(x) grows at the origin (kappa2=%.3g)",
                    self.name, self.kappa2,
                )
        return self


@dataclass(frozen=True, eq=False)
class DiscreteLevyMeasure:
    """Finitely supported pi, as induced by a discrete dislocation law. Lattice: no renewal limit."""

    name: str
    atoms: np.ndarray
    weights: np.ndarray
    law: Optional[DislocationLaw] = field(default=None, repr=False)

    spread_out = False
    kappa1 = math.inf
    kappa2 = math.inf
    smoothness = 0.0
    breakpoints: Tuple[float, ...] = ()

    @property
    def quadrature_cutoff(self) -> float:
        return float(np.max(self.atoms))

    def mass(self) -> float:
        return float(np.sum(self.weights))

    def tail(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return np.sum(np.where(self.atoms[None, :] > x[:, None], self.weights[None, :], 0.0), axis=1)

    def sample(self, u: np.ndarray) -> np.ndarray:
        cum = np.cumsum(self.weights)
        idx = np.minimum(np.searchsorted(cum, np.asarray(u, dtype=float), side="right"), len(cum) - 1)
        return self.atoms[idx]

    def verify(self) -> "DiscreteLevyMeasure":
        if abs(self.mass() - 1.0) > PI_MASS_TOL:
            raise InvalidDensityError(f"pi '{self.name}' has mass {self.mass()!r}")
        return self


LevyMeasure = Union[LevyDensity, DiscreteLevyMeasure]


@dataclass(frozen=True, eq=False)
class BetaDensity:
    """beta(a) = a^{-1} pi(-log a) on (0, 1). `raw` is evaluated without domain checks."""

    name: str
    raw: Func
    lower: float
    smoothness: float = 1.0
    kappa1: float = math.inf
    kappa2: float = 1.0
    breakpoints: Tuple[float, ...] = ()

    def __call__(self, a) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        if np.any((a <= 0.0) | (a >= 1.0)):
            raise DomainError("beta is defined on the open interval (0, 1)")
        return np.asarray(self.raw(a), dtype=float)

    def mass(self) -> float:
        val, _ = integrate_1d(self.raw, self.lower, 1.0, self.breakpoints)
        return val

    def verify(self, grid_size: int = 1000) -> "BetaDensity":
        total = self.mass()
        if abs(total - 1.0) > PI_MASS_TOL:
            raise InvalidDensityError(f"beta '{self.name}' integrates to {total!r}, expected 1")
        grid = np.linspace(0.0, 1.0, grid_size + 2)[1:-1]
        if np.any(self.raw(grid) < 0.0):
            raise InvalidDensityError(f"beta '{self.name}' takes negative values")
        return self


# -------------------------------------------------------
# TRANSFORMS
# -------------------------------------------------------

def _choose_cutoff(pi: Func, offset: float, kappa1: float) -> float:
    """Smallest offset + j * log(1e14)/kappa1 past which pi is below the tail tolerance."""
    rate = kappa1 if np.isfinite(kappa1) and kappa1 > 0 else 2.0
    step = math.log(1e14) / rate
    cutoff = min(offset + step, CUTOFF_CAP)
    while cutoff < CUTOFF_CAP:
        val = float(np.asarray(pi(np.array([cutoff])))[0])
        if val * max(cutoff, 1.0) <= quadrature.TAIL_TOL:
            break
        cutoff = min(cutoff + step, CUTOFF_CAP)
    return cutoff


def pi_from_rho(law: BinaryDislocationLaw) -> LevyDensity:
    """
    pi(x) = e^{-2x} rho(e^{-x})      for x in [0, log 2]
            e^{-2x} rho(1 - e^{-x})  for x > log 2
    """
    if not isinstance(law, BinaryDislocationLaw):
        raise InvalidParameterError("pi_from_rho needs a binary dislocation law")
    rho = law.density

    def pi(x):
        x = np.asarray(x, dtype=float)
        e = np.exp(-x)
        return np.exp(-2.0 * x) * np.where(x <= LOG2, rho(e), rho(1.0 - e))

    knots = {LOG2}
    for b in law.breakpoints:
        knots.add(-math.log(b))
        knots.add(-math.log(1.0 - b))
    cutoff = _choose_cutoff(pi, LOG2, law.kappa1)
    density = LevyDensity(
        name=law.name,
        pi=pi,
        kappa1=law.kappa1,
        kappa2=law.kappa2,
        quadrature_cutoff=cutoff,
        smoothness=law.smoothness,
        breakpoints=tuple(sorted(k for k in knots if 0.0 < k < cutoff)),
        law=law,
    )
    return density.verify()


def pi_from_discrete(law: DiscreteDislocationLaw) -> DiscreteLevyMeasure:
    xs, ws = law.tagged_atoms()
    return DiscreteLevyMeasure(name=law.name, atoms=xs, weights=ws, law=law).verify()


def pi_from_law(law: DislocationLaw) -> LevyMeasure:
    if isinstance(law, BinaryDislocationLaw):
        return pi_from_rho(law)
    if isinstance(law, DiscreteDislocationLaw):
        return pi_from_discrete(law)
    raise InvalidParameterError(f"unsupported law type {type(law).__name__}")


def beta_from_pi(pi: LevyDensity) -> BetaDensity:
    if not isinstance(pi, LevyDensity):
        raise InvalidParameterError("beta is only defined for absolutely continuous pi")

    def raw(a):
        a = np.asarray(a, dtype=float)
        return pi.density(-np.log(a)) / a

    return BetaDensity(
        name=pi.name,
        raw=raw,
        lower=math.exp(-pi.quadrature_cutoff),
        smoothness=pi.smoothness,
        kappa1=pi.kappa1,
        kappa2=pi.kappa2,
        breakpoints=tuple(sorted(math.exp(-x) for x in pi.breakpoints)),
    )


def pi_from_beta(beta: BetaDensity) -> LevyDensity:
    def pi(x):
        e = np.exp(-np.asarray(x, dtype=float))
        return e * beta.raw(e)

    return LevyDensity(
        name=beta.name,
        pi=pi,
        kappa1=beta.kappa1,
        kappa2=beta.kappa2,
        quadrature_cutoff=-math.log(beta.lower),
        smoothness=beta.smoothness,
        breakpoints=tuple(sorted(-math.log(a) for a in beta.breakpoints)),
    )


# -------------------------------------------------------
# GROUND-TRUTH FUNCTIONALS
# -------------------------------------------------------

def _check_order(k: int) -> int:
    if int(k) != k or k < 1:
        raise InvalidParameterError(f"moment order must be a positive integer, got {k!r}")
    return int(k)


def moment_mk(pi: LevyMeasure, k: int) -> float:
    """m_k(pi) = int_0^inf x^k pi(x) dx."""
    k = _check_order(k)
    if isinstance(pi, DiscreteLevyMeasure):
        return float(np.sum(pi.weights * pi.atoms**k))

    def f(x):
        x = np.asarray(x, dtype=float)
        return x**k * pi.density(x)

    c = pi.quadrature_cutoff
    val, err = integrate_1d(f, 0.0, c, pi.breakpoints)
    tail, _ = integrate_1d(f, c, 4.0 * c + 1.0)
    if not np.isfinite(val) or not np.isfinite(tail) or tail > MOMENT_TAIL_TOL:
        raise DivergentMomentError(
            f"m_{k}({pi.name}): tail beyond cutoff {c:.3g} is {tail!r}"
        )
    if err > MOMENT_TAIL_TOL:
        logger.warning("[QUAD] m_%d(%s) quadrature error estimate %.2e", k, pi.name, err)
    return val


def moment_mk_beta(beta: BetaDensity, k: int) -> float:
    """m_k through the log scale: int_0^1 log(1/a)^k beta(a) da."""
    k = _check_order(k)

    def f(a):
        a = np.asarray(a, dtype=float)
        return (-np.log(a)) ** k * beta.raw(a)

    val, _ = integrate_1d(f, beta.lower, 1.0, beta.breakpoints)
    return val


def limit_measure(pi: LevyMeasure, g) -> float:
    """
    E(g) = (1/m_1) int_0^inf g(e^{-x}) pi(x, +inf) dx, the limit of the empirical
    measure E_eps(g) as eps -> 0.
    """
    if not pi.spread_out:
        raise InvalidParameterError(
            f"pi '{pi.name}' is lattice; the empirical measure has no limit to compare against"
        )
    m1 = moment_mk(pi, 1)
    if m1 < ZERO_MEAN:
        raise ZeroMeanError(f"m_1({pi.name}) = {m1!r}")

    knots = set(pi.breakpoints)
    for b in tuple(getattr(g, "breakpoints", ())) + tuple(getattr(g, "support", ())):
        if 0.0 < b < 1.0:
            knots.add(-math.log(b))

    def f(x):
        x = np.asarray(x, dtype=float)
        return g(np.exp(-x)) * pi.tail(x)

    val, err = integrate_1d(f, 0.0, pi.quadrature_cutoff, knots)
    if err > 1e-8:
        logger.warning("[QUAD] limit measure of %s: error estimate %.2e", pi.name, err)
    return val / m1

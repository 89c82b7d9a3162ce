# src/quadrature.py
#
# Quadrature and tabulation helpers shared by the law, measure and oracle
# modules: adaptive QUADPACK integration with breakpoints, Gauss-Legendre
# panel sums, and tabulated inverse CDFs for arbitrary densities.

from __future__ import annotations

import logging
from typing import Callable, Iterable, Optional, Tuple

import numpy as np
from scipy import integrate
from scipy.interpolate import PchipInterpolator

from .errors import InvalidDensityError, SamplerError


logger = logging.getLogger(__name__)

EPSABS = 1e-12
EPSREL = 1e-11
LIMIT = 400
TAIL_TOL = 1e-12
SAMPLER_PANELS = 512

Func = Callable[[np.ndarray], np.ndarray]


def scalar(f: Func) -> Callable[[float], float]:
    """Wrap a vectorised density so QUADPACK can call it point by point."""

    def _f(x: float) -> float:
        return float(np.asarray(f(np.array([x], dtype=float)), dtype=float)[0])

    return _f


def integrate_1d(
    f: Func,
    lo: float,
    hi: float,
    points: Optional[Iterable[float]] = None,
    epsabs: Optional[float] = None,
    epsrel: Optional[float] = None,
    limit: Optional[int] = None,
) -> Tuple[float, float]:
    """
    Adaptive Gauss-Kronrod integral of a vectorised function on [lo, hi].
    Interior breakpoints are forwarded to QUADPACK; returns (value, abserr).
    """
    if hi <= lo:
        return 0.0, 0.0
    epsabs = EPSABS if epsabs is None else epsabs
    epsrel = EPSREL if epsrel is None else epsrel
    limit = LIMIT if limit is None else limit
    inner = sorted({float(p) for p in (points or ()) if lo < p < hi})
    g = scalar(f)
    if not inner:
        val, err = integrate.quad(g, lo, hi, epsabs=epsabs, epsrel=epsrel, limit=limit)
        return float(val), float(err)
    # QUADPACK's `points` option is limited; integrate panel by panel instead
    edges = [lo] + inner + [hi]
    total, total_err = 0.0, 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        val, err = integrate.quad(g, a, b, epsabs=epsabs, epsrel=epsrel, limit=limit)
        total += val
        total_err += err
    return float(total), float(total_err)


def gauss_legendre_panels(edges: np.ndarray, order: int = 10) -> Tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of a composite Gauss-Legendre rule, shape (n_panels, order)."""
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.asarray(edges, dtype=float)
    a, b = edges[:-1, None], edges[1:, None]
    half = 0.5 * (b - a)
    nodes = a + half * (x[None, :] + 1.0)
    weights = half * w[None, :]
    return nodes, weights


def panel_masses(pdf: Func, edges: np.ndarray, order: int = 10) -> np.ndarray:
    nodes, weights = gauss_legendre_panels(edges, order)
    vals = np.asarray(pdf(nodes.ravel()), dtype=float).reshape(nodes.shape)
    return np.sum(vals * weights, axis=1)


def adaptive_edges(
    pdf: Func,
    lo: float,
    hi: float,
    breakpoints: Iterable[float] = (),
    n_start: int = 512,
    tol: float = 1e-10,
    max_rounds: int = 12,
) -> np.ndarray:
    """
    Panel edges on [lo, hi] refined until the 5-point and 10-point Gauss-Legendre
    masses of every panel agree within tol / n_panels.
    """
    knots = sorted({lo, hi} | {float(b) for b in breakpoints if lo < b < hi})
    edges = np.unique(
        np.concatenate(
            [np.linspace(a, b, max(2, int(n_start * (b - a) / (hi - lo)) + 1))
             for a, b in zip(knots[:-1], knots[1:])]
        )
    )
    for _ in range(max_rounds):
        coarse = panel_masses(pdf, edges, order=5)
        fine = panel_masses(pdf, edges, order=10)
        bad = np.abs(fine - coarse) > tol / max(len(edges) - 1, 1)
        if not np.any(bad):
            return edges
        mids = 0.5 * (edges[:-1][bad] + edges[1:][bad])
        edges = np.unique(np.concatenate([edges, mids]))
    logger.warning("[QUAD] adaptive grid did not settle after %d rounds (%d panels)", max_rounds, len(edges) - 1)
    return edges


class InverseCdf:
    """
    Tabulated inverse CDF of a density on [lo, hi].

    The CDF is accumulated panel by panel with Gauss-Legendre sums on an
    adaptive grid and inverted with a monotone cubic (PCHIP) interpolant.
    """

    def __init__(
        self,
        pdf: Func,
        lo: float,
        hi: float,
        breakpoints: Iterable[float] = (),
        mass_tol: float = 1e-8,
        n_start: Optional[int] = None,
    ):
        edges = adaptive_edges(pdf, lo, hi, breakpoints, n_start=n_start or SAMPLER_PANELS)
        masses = panel_masses(pdf, edges)
        if np.any(masses < -1e-14):
            raise SamplerError("negative density mass while tabulating the CDF")
        masses = np.clip(masses, 0.0, None)
        cdf = np.concatenate([[0.0], np.cumsum(masses)])
        total = float(cdf[-1])
        if not np.isfinite(total) or total <= 0.0:
            raise SamplerError(f"density has no mass on [{lo}, {hi}]")
        if abs(total - 1.0) > mass_tol:
            logger.info("[QUAD] tabulated mass %.3e on [%g, %g]; renormalising", total, lo, hi)
        cdf = cdf / total
        if np.any(np.diff(cdf) < 0.0):
            raise SamplerError("inverse-CDF table is not monotone")
        keep = np.concatenate([[True], np.diff(cdf) > 0.0])
        self.lo = float(lo)
        self.hi = float(hi)
        self.total_mass = total
        self.grid = edges[keep]
        self.cdf = cdf[keep]
        if self.cdf.size < 2:
            raise SamplerError("degenerate CDF table")
        self._inverse = PchipInterpolator(self.cdf, self.grid, extrapolate=False)

    def __call__(self, u: np.ndarray) -> np.ndarray:
        u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
        out = self._inverse(u)
        return np.clip(out, self.lo, self.hi)

    def cdf_at(self, x: np.ndarray) -> np.ndarray:
        return np.interp(x, self.grid, self.cdf)


class PanelTail:
    """
    Upper tail x -> int_x^hi pdf of a density on [lo, hi].

    Panel masses are summed from the right once; inside a panel the partial
    mass is a 10-point Gauss-Legendre sum on [x, right edge].
    """

    def __init__(self, pdf: Func, lo: float, hi: float, breakpoints: Iterable[float] = ()):
        self.pdf = pdf
        self.lo = float(lo)
        self.hi = float(hi)
        self.edges = adaptive_edges(pdf, lo, hi, breakpoints, n_start=SAMPLER_PANELS)
        masses = panel_masses(pdf, self.edges)
        self.tail_at_edges = np.concatenate([np.cumsum(masses[::-1])[::-1], [0.0]])
        self._nodes, self._weights = np.polynomial.legendre.leggauss(10)

    @property
    def total(self) -> float:
        return float(self.tail_at_edges[0])

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.where(x < self.lo, self.total, 0.0)
        inside = (x >= self.lo) & (x < self.hi)
        if np.any(inside):
            xi = x[inside]
            j = np.clip(np.searchsorted(self.edges, xi, side="right") - 1, 0, len(self.edges) - 2)
            right = self.edges[j + 1]
            half = 0.5 * (right - xi)
            nodes = xi[:, None] + half[:, None] * (self._nodes[None, :] + 1.0)
            vals = np.asarray(self.pdf(nodes.ravel()), dtype=float).reshape(nodes.shape)
            partial = half * np.sum(vals * self._weights[None, :], axis=1)
            out[inside] = self.tail_at_edges[j + 1] + partial
        return out


def check_normalised(f: Func, lo: float, hi: float, tol: float, what: str, points=()) -> float:
    mass, _ = integrate_1d(f, lo, hi, points=points)
    if not np.isfinite(mass) or abs(mass - 1.0) > tol:
        raise InvalidDensityError(f"{what} integrates to {mass!r}, expected 1 within {tol:g}")
    return mass


def configure(section: dict) -> None:
    """Apply the `quadrature` section of config/config.yaml to the module defaults."""
    global EPSABS, EPSREL, LIMIT, TAIL_TOL, SAMPLER_PANELS
    section = section or {}
    EPSABS = float(section.get("epsabs", EPSABS))
    EPSREL = float(section.get("epsrel", EPSREL))
    LIMIT = int(section.get("limit", LIMIT))
    TAIL_TOL = float(section.get("tail_tol", TAIL_TOL))
    SAMPLER_PANELS = int(section.get("sampler_panels", SAMPLER_PANELS))

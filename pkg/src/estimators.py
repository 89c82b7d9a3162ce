# src/estimators.py

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy import optimize, stats

from .errors import (
    DegenerateDenominatorError,
    DegenerateFitError,
    InvalidParameterError,
)
from .models import ObservationSet, PathObservation
from .testfunctions import TestFunction, localize_kernel, make_cutoff, make_kernel, make_moment_testfn


logger = logging.getLogger(__name__)

DENOMINATOR_GUARD = 1e-12
GAMMA_CLIP = 0.99

# defaults from the `estimators` section of config/config.yaml
MU_DELTA = 0.01
DEFAULT_N = 2
DEFAULT_GAMMA_RULE = "moment"
DEFAULT_KERNEL_GAMMA_RULE = "kernel"


def configure(section: Optional[dict]) -> None:
    global MU_DELTA, DEFAULT_N, DEFAULT_GAMMA_RULE, DEFAULT_KERNEL_GAMMA_RULE
    section = section or {}
    MU_DELTA = float(section.get("mu_delta", MU_DELTA))
    DEFAULT_N = int(section.get("N", DEFAULT_N))
    DEFAULT_GAMMA_RULE = str(GammaRule.parse(section.get("gamma_rule", DEFAULT_GAMMA_RULE)))
    DEFAULT_KERNEL_GAMMA_RULE = str(GammaRule.parse(section.get("kernel_gamma_rule", DEFAULT_KERNEL_GAMMA_RULE)))


# -------------------------------------------------------
# CONFIG
# -------------------------------------------------------

@dataclass(frozen=True)
class GammaRule:
    """
    eps -> gamma_eps.

    moment: gamma = c * eps^(mu / ((mu+1)(2 kappa2 + 1)))
    kernel: gamma = c * eps^(mu / ((mu+1)(2 s + 3)))
    power:  gamma = c * eps^exponent
    """

    kind: str = "moment"
    scale: float = 1.0
    exponent: Optional[float] = None

    KINDS = ("moment", "kernel", "power")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise InvalidParameterError(f"unknown gamma rule '{self.kind}' (known: {', '.join(self.KINDS)})")
        if self.kind == "power" and (self.exponent is None or self.exponent <= 0):
            raise InvalidParameterError("power gamma rule needs a positive exponent")
        if self.scale <= 0:
            raise InvalidParameterError("gamma rule scale must be positive")

    @classmethod
    def parse(cls, text: Union[str, "GammaRule"]) -> "GammaRule":
        """'moment', 'kernel', 'power:<p>' or 'power:<p>:<c>'."""
        if isinstance(text, GammaRule):
            return text
        parts = [p.strip() for p in str(text).split(":")]
        try:
            if parts[0] == "power":
                scale = float(parts[2]) if len(parts) > 2 else 1.0
                return cls("power", scale=scale, exponent=float(parts[1]))
            scale = float(parts[1]) if len(parts) > 1 else 1.0
            return cls(parts[0], scale=scale)
        except (IndexError, ValueError):
            raise InvalidParameterError(f"bad gamma rule '{text}'") from None

    def __str__(self) -> str:
        if self.kind == "power":
            return f"power:{self.exponent:g}:{self.scale:g}"
        return self.kind if self.scale == 1.0 else f"{self.kind}:{self.scale:g}"

    def exponent_for(self, cfg: "EstimatorConfig") -> float:
        if self.kind == "power":
            return float(self.exponent)
        mu = cfg.mu_for(self.kind)
        if self.kind == "moment":
            return mu / ((mu + 1.0) * (2.0 * cfg.kappa2 + 1.0))
        return mu / ((mu + 1.0) * (2.0 * cfg.s + 3.0))

    def gamma(self, epsilon: float, cfg: "EstimatorConfig") -> float:
        g = self.scale * float(epsilon) ** self.exponent_for(cfg)
        if not (0.0 < g < 1.0):
            raise InvalidParameterError(f"gamma rule {self} gives gamma={g!r} at eps={epsilon:g}")
        return g


@dataclass(frozen=True)
class EstimatorConfig:
    """Declared class orders and tuning of the moment and density estimators."""

    mu: Optional[float] = None
    kappa1: float = math.inf
    kappa2: float = 1.0
    s: float = 1.0
    N: int = 2
    gamma0: float = 0.5
    gamma_rule: GammaRule = field(default_factory=GammaRule)
    kernel_gamma_rule: GammaRule = field(default_factory=lambda: GammaRule("kernel"))
    mu_delta: float = field(default_factory=lambda: MU_DELTA)

    def __post_init__(self):
        object.__setattr__(self, "gamma_rule", GammaRule.parse(self.gamma_rule))
        object.__setattr__(self, "kernel_gamma_rule", GammaRule.parse(self.kernel_gamma_rule))
        if not (0.0 < self.gamma0 < 1.0):
            raise InvalidParameterError(f"gamma0 must lie in (0, 1), got {self.gamma0!r}")
        if int(self.N) != self.N or self.N < 0:
            raise InvalidParameterError(f"kernel order must be a non-negative integer, got {self.N!r}")
        if self.mu is not None and self.mu <= 0:
            raise InvalidParameterError(f"mu must be positive, got {self.mu!r}")
        # hypotheses of the rate statements: warn only
        if not self.kappa1 > max(1.0, self.kappa2):
            logger.warning("[ESTIMATE] kappa1=%g <= max(1, kappa2=%g): moment rates not guaranteed",
                           self.kappa1, self.kappa2)
        if not (self.kappa1 > 1.0 and self.kappa2 > 1.0):
            logger.debug("[ESTIMATE] kappa1=%g, kappa2=%g: density rate assumes both > 1",
                         self.kappa1, self.kappa2)
        if not self.N > self.s:
            logger.warning("[ESTIMATE] kernel order N=%d should exceed smoothness s=%g", self.N, self.s)
        if self.mu is not None and not (1.0 <= self.mu < self.kappa1):
            logger.warning("[ESTIMATE] mu=%g outside [1, kappa1=%g)", self.mu, self.kappa1)

    @classmethod
    def for_measure(cls, pi, **overrides) -> "EstimatorConfig":
        """Declared metadata of a Levy density, with an infinite smoothness capped below N."""
        n = int(overrides.get("N", cls.N))
        smooth = getattr(pi, "smoothness", 1.0)
        s = min(smooth, max(n - 0.5, 0.5)) if smooth > 0 else 0.5
        base = dict(kappa1=pi.kappa1, kappa2=pi.kappa2, s=s)
        base.update(overrides)
        return cls(**base)

    def with_rules(self, gamma_rule=None, kernel_gamma_rule=None) -> "EstimatorConfig":
        return replace(
            self,
            gamma_rule=self.gamma_rule if gamma_rule is None else GammaRule.parse(gamma_rule),
            kernel_gamma_rule=(
                self.kernel_gamma_rule if kernel_gamma_rule is None else GammaRule.parse(kernel_gamma_rule)
            ),
        )

    def mu_for(self, kind: str) -> float:
        if self.mu is not None:
            return float(self.mu)
        if kind == "kernel":
            mu = min(1.0, 0.5 * self.kappa1 - self.mu_delta)
        else:
            mu = min(self.kappa1 - self.mu_delta, 1.0)
        if mu <= 0.0:
            raise InvalidParameterError(f"no admissible mu for kappa1={self.kappa1:g}")
        return mu

    def as_dict(self) -> dict:
        return {
            "mu": self.mu,
            "kappa1": self.kappa1,
            "kappa2": self.kappa2,
            "s": self.s,
            "N": self.N,
            "gamma0": self.gamma0,
            "gamma_rule": str(self.gamma_rule),
            "kernel_gamma_rule": str(self.kernel_gamma_rule),
            "mu_delta": self.mu_delta,
        }


@lru_cache(maxsize=16)
def kernel_of_order(N: int) -> TestFunction:
    return make_kernel(N)


# -------------------------------------------------------
# EMPIRICAL MEASURES
# -------------------------------------------------------

def empirical_measure(obs: ObservationSet, g) -> float:
    """
    E_eps(g)        = sum_u xi_u g(xi_u / eps)                        (sigma = 0)
    E_{eps,sigma}(g) = sum_u xi_u^(sigma) g(xi_u^(sigma) / eps) 1{xi_u^(sigma) >= t_eps}
    """
    if obs.sigma > 0.0:
        w = obs.noisy_size[~obs.truncated]
    else:
        w = obs.true_size
    if w.size == 0:
        return 0.0
    return float(np.sum(w * np.asarray(g(w / obs.epsilon), dtype=float)))


def _denominator(obs: ObservationSet, gamma: float) -> float:
    _, g_gamma = make_cutoff(gamma)
    den = empirical_measure(obs, g_gamma)
    if not abs(den) >= DENOMINATOR_GUARD:
        raise DegenerateDenominatorError(
            f"E(g_gamma) = {den!r} at eps={obs.epsilon:g}, gamma={gamma:g}"
        )
    return den


def estimate_m1(obs: ObservationSet, cfg: Optional[EstimatorConfig] = None) -> float:
    """m1_hat = 1 / E_{eps,sigma}(g_gamma)."""
    cfg = cfg or EstimatorConfig()
    gamma = cfg.gamma_rule.gamma(obs.epsilon, cfg)
    return 1.0 / _denominator(obs, gamma)


def estimate_mk(obs: ObservationSet, k: int, cfg: Optional[EstimatorConfig] = None) -> float:
    """mk_hat = E_{eps,sigma}(g~_gamma) / E_{eps,sigma}(g_gamma)."""
    cfg = cfg or EstimatorConfig()
    gamma = cfg.gamma_rule.gamma(obs.epsilon, cfg)
    num = empirical_measure(obs, make_moment_testfn(k, gamma))
    return num / _denominator(obs, gamma)


def kernel_width(a: float, epsilon: float, cfg: EstimatorConfig) -> float:
    """gamma from the kernel rule, clipped so the support (a, a + gamma) stays inside (0, 1)."""
    gamma = cfg.kernel_gamma_rule.gamma(epsilon, cfg)
    limit = GAMMA_CLIP * min(a, 1.0 - a)
    if gamma > limit:
        logger.debug("[ESTIMATE] kernel width %.3g clipped to %.3g at a=%g", gamma, limit, a)
        gamma = limit
    return gamma


def estimate_beta(obs: ObservationSet, a: float, cfg: Optional[EstimatorConfig] = None) -> float:
    """beta_hat(a) = m1_hat * E_{eps,sigma}(-x phi'_{gamma,a}(x))."""
    cfg = cfg or EstimatorConfig()
    a = float(a)
    if not (0.0 < a < 1.0):
        raise InvalidParameterError(f"a must lie in (0, 1), got {a!r}")
    gamma = kernel_width(a, obs.epsilon, cfg)
    _, integrand = localize_kernel(kernel_of_order(int(cfg.N)), a, gamma)
    return estimate_m1(obs, cfg) * empirical_measure(obs, integrand)


# -------------------------------------------------------
# SELF-SIMILARITY INDEX
# -------------------------------------------------------

def estimate_alpha_tagged(T_eps: float, epsilon: float) -> float:
    """
    alpha_hat = log(T_eps) / log(1/eps).

    T_eps grows like eps^(-alpha) (eps^alpha T_eps is tight), so this is the
    sign for which T_eps = eps^(-alpha) returns alpha exactly.
    """
    T_eps = float(T_eps)
    epsilon = float(epsilon)
    if not (T_eps > 0.0 and np.isfinite(T_eps)):
        raise InvalidParameterError(f"tagged time must be positive, got {T_eps!r}")
    if not (0.0 < epsilon < 1.0):
        raise InvalidParameterError(f"epsilon must lie in (0, 1), got {epsilon!r}")
    return math.log(T_eps) / math.log(1.0 / epsilon)


def _as_pairs(pairs) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(pairs, PathObservation):
        return np.asarray(pairs.sizes, dtype=float), np.asarray(pairs.lifetime, dtype=float)
    arr = np.asarray(pairs, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise InvalidParameterError("pairs must be a sequence of (size, lifetime)")
    return arr[:, 0], arr[:, 1]


def alpha_loglik(pairs, alpha: float, censored: Optional[Sequence[bool]] = None) -> float:
    """
    sum_i [alpha log xi_i - xi_i^alpha zeta_i] for lifetimes exponential with rate xi^alpha;
    censored lifetimes contribute the survival term -xi^alpha zeta only.
    """
    xi, zeta = _as_pairs(pairs)
    if censored is None and isinstance(pairs, PathObservation):
        censored = pairs.censored
    cens = np.zeros(xi.shape, dtype=bool) if censored is None else np.asarray(censored, dtype=bool)
    if cens.shape != xi.shape:
        raise InvalidParameterError("censored flags do not match the pairs")
    if np.any((xi <= 0.0) | (xi > 1.0)):
        raise InvalidParameterError("sizes must lie in (0, 1]")
    if np.any(zeta[~cens] <= 0.0) or np.any(zeta[cens] < 0.0):
        raise InvalidParameterError("lifetimes must be positive")
    alpha = float(alpha)
    log_xi = np.log(xi)
    return float(np.sum(np.where(cens, 0.0, alpha * log_xi)) - np.sum(np.exp(alpha * log_xi) * zeta))


def estimate_alpha_mle(
    pairs,
    censored: Optional[Sequence[bool]] = None,
    bounds: Tuple[float, float] = (0.0, 10.0),
) -> float:
    """Maximiser of alpha_loglik (strictly concave unless every size equals 1)."""
    xi, _ = _as_pairs(pairs)
    if censored is None and isinstance(pairs, PathObservation):
        censored = pairs.censored
    if xi.size == 0 or np.all(xi == 1.0):
        raise DegenerateFitError("alpha is not identifiable without fragments smaller than 1")
    res = optimize.minimize_scalar(
        lambda a: -alpha_loglik(pairs, a, censored),
        bounds=bounds,
        method="bounded",
        options={"xatol": 1e-8},
    )
    if not res.success:
        raise DegenerateFitError(f"alpha likelihood maximisation failed: {res.message}")
    alpha = float(res.x)
    if min(abs(alpha - bounds[0]), abs(alpha - bounds[1])) < 1e-6:
        logger.warning("[ESTIMATE] alpha MLE %.4g sits on the search bound %s", alpha, bounds)
    return alpha


# -------------------------------------------------------
# DENSITY OF THE LARGEST FRAGMENT (binary laws)
# -------------------------------------------------------

def estimate_rho_kde(
    source: Union[PathObservation, Sequence[float]],
    grid: Sequence[float],
    bandwidth: Optional[float] = None,
) -> np.ndarray:
    """
    Gaussian KDE of rho from the largest rescaled offspring of every observed split,
    reflected at 1/2 and 1 so no mass leaks out of [1/2, 1].
    """
    if isinstance(source, PathObservation):
        if any(len(o) != 2 for o in source.offspring):
            raise InvalidParameterError("rho estimation needs a binary law (two children per split)")
        sample = np.array([float(np.max(o)) for o in source.offspring])
    else:
        sample = np.asarray(source, dtype=float)
    if sample.size < 2 or np.std(sample) == 0.0:
        raise DegenerateFitError(f"need a non-degenerate sample of splits, got {sample.size}")
    if np.any((sample < 0.5) | (sample > 1.0)):
        raise InvalidParameterError("largest relative fragments must lie in [1/2, 1]")

    grid = np.asarray(grid, dtype=float)
    base = stats.gaussian_kde(sample)
    h = float(bandwidth) if bandwidth is not None else float(base.factor * np.std(sample, ddof=1))
    augmented = np.concatenate([sample, 1.0 - sample, 2.0 - sample])
    kde = stats.gaussian_kde(augmented, bw_method=h / np.std(augmented, ddof=1))
    inside = (grid >= 0.5) & (grid <= 1.0)
    return np.where(inside, 3.0 * kde(grid), 0.0)

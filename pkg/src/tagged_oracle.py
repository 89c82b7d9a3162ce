# src/tagged_oracle.py
#
# The tagged fragment as an independent oracle: its log-size is a compound
# Poisson subordinator with unit jump rate and step law pi, so first-passage
# quantities can be simulated without building any tree.

from __future__ import annotations

import logging
import math
from typing import Optional, Sequence, Tuple

import numpy as np

from . import streams
from .dislocation_laws import BinaryDislocationLaw, DislocationLaw
from .errors import AssumptionViolatedError, InvalidParameterError
from .measures import LevyMeasure, moment_mk, pi_from_law, pi_from_rho
from .models import OracleReport, SubordinatorPath, TwoPointReport
from .quadrature import integrate_1d
from .simulator import simulate_forest
from .testfunctions import TestFunction


logger = logging.getLogger(__name__)

FOREST_CHUNK = 10_000
MAX_STEPS = 100_000
R_K_TOL = 1e-12


def _path_rng(seed: int) -> np.random.Generator:
    # entropy [seed, 1] keeps paths independent of the trees grown from `seed`
    return np.random.default_rng([int(seed), 1])


def _check_eta(eta: float) -> float:
    eta = float(eta)
    if not (0.0 < eta < 1.0):
        raise InvalidParameterError(f"eta must lie in (0, 1), got {eta!r}")
    return eta


# -------------------------------------------------------
# FIRST PASSAGE
# -------------------------------------------------------

def sample_first_passage(pi: LevyMeasure, eta: float, seed: int = 0) -> SubordinatorPath:
    """
    One path of zeta(t) with unit-rate exponential waits and pi-distributed jumps,
    stopped at T_eta = inf{t : zeta(t) > -log eta}.
    """
    level = -math.log(_check_eta(eta))
    rng = _path_rng(seed)
    steps: list = []
    waits: list = []
    total = 0.0
    while total <= level:
        if len(steps) >= MAX_STEPS:
            raise InvalidParameterError(f"no first passage after {MAX_STEPS} jumps (pi '{pi.name}')")
        step = float(pi.sample(rng.random(1))[0])
        steps.append(step)
        waits.append(float(rng.exponential(1.0)))
        total += step
    times = np.cumsum(waits)
    return SubordinatorPath(
        eta=eta,
        jump_times=times,
        jump_sizes=np.array(steps),
        first_passage_time=float(times[-1]),
        overshoot=total - level,
    )


def sample_first_passages(
    pi: LevyMeasure, eta: float, n: int, seed: int = 0
) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorised version over n paths: returns (T_eta, chi(T_eta))."""
    level = -math.log(_check_eta(eta))
    rng = _path_rng(seed)
    n = int(n)
    total = np.zeros(n)
    times = np.zeros(n)
    active = np.arange(n)
    rounds = 0
    while active.size:
        rounds += 1
        if rounds > MAX_STEPS:
            raise InvalidParameterError(f"no first passage after {MAX_STEPS} jumps (pi '{pi.name}')")
        total[active] += pi.sample(rng.random(active.size))
        times[active] += rng.exponential(1.0, active.size)
        active = active[total[active] <= level]
    return times, np.exp(-total)


def sample_tagged_times(
    pi: LevyMeasure, epsilon: float, alpha: float, n: int, seed: int = 0
) -> np.ndarray:
    """
    First time the tagged fragment is < epsilon when a fragment of size x splits
    at rate x^alpha: waits are Exp(1) / chi^alpha, jumps of -log chi follow pi.
    """
    level = -math.log(_check_eta(epsilon))
    if alpha < 0:
        raise InvalidParameterError(f"alpha must be >= 0, got {alpha!r}")
    rng = _path_rng(seed)
    n = int(n)
    log_chi = np.zeros(n)
    times = np.zeros(n)
    active = np.arange(n)
    while active.size:
        times[active] += rng.exponential(1.0, active.size) * np.exp(alpha * log_chi[active])
        log_chi[active] += pi.sample(rng.random(active.size))
        active = active[log_chi[active] <= level]
    return times


# -------------------------------------------------------
# REPRESENTATION CHECK
# -------------------------------------------------------

def _mean_se(values: np.ndarray) -> Tuple[float, float]:
    return float(np.mean(values)), float(np.std(values, ddof=1) / math.sqrt(values.size))


def oracle_check_lemma(
    law: DislocationLaw,
    eta: float,
    f: TestFunction,
    reps: int,
    seed: int = 0,
) -> OracleReport:
    """
    Left side: mean over `reps` trees of sum_{v in U_eta} xi_v f(xi_v).
    Right side: mean over `reps` first-passage paths of f(chi(T_eta)).
    """
    eta = _check_eta(eta)
    reps = int(reps)
    if reps < 2:
        raise InvalidParameterError("oracle check needs at least 2 replicates")

    seeds = streams.replicate_seeds(seed, reps)
    left = np.empty(reps)
    for start in range(0, reps, FOREST_CHUNK):
        chunk = seeds[start:start + FOREST_CHUNK]
        owner, sizes = simulate_forest(law, eta, chunk)
        left[start:start + len(chunk)] = np.bincount(
            owner, weights=sizes * f(sizes), minlength=len(chunk)
        )

    pi = pi_from_law(law)
    _, chi = sample_first_passages(pi, eta, reps, seed)
    right = np.asarray(f(chi), dtype=float)

    lm, ls = _mean_se(left)
    rm, rs = _mean_se(right)
    spread = math.hypot(ls, rs)
    scale = max(1.0, abs(lm), abs(rm))
    if spread <= 1e-15 * scale:
        exact = abs(lm - rm) <= 1e-12 * scale
        z = 0.0 if exact else math.inf
    else:
        exact = False
        z = (lm - rm) / spread
    report = OracleReport(
        law=law.name, eta=eta, fn=f.name, reps=reps,
        tree_mean=lm, tree_se=ls, path_mean=rm, path_se=rs, z=z, exact=exact,
    )
    logger.info("[ORACLE] %s eta=%g f=%s: trees %.6g±%.2g paths %.6g±%.2g z=%.2f",
                law.name, eta, f.name, lm, ls, rm, rs, z)
    return report


# -------------------------------------------------------
# TWO-POINT EXPERIMENT
# -------------------------------------------------------

def moment_weight(k: int):
    """phi_k(a) = a log(1/a)^k + (1-a) log(1/(1-a))^k, so that m_k = int phi_k rho."""

    def phi(a):
        a = np.asarray(a, dtype=float)
        b = np.where(a < 1.0, 1.0 - a, 0.5)
        small = np.where(a < 1.0, b * (-np.log(b)) ** k, 0.0)
        return a * (-np.log(a)) ** k + small

    return phi


def _oscillation(height: float, j: int):
    def psi(a):
        a = np.asarray(a, dtype=float)
        inside = (a >= 0.5) & (a <= 1.0)
        return np.where(inside, height * np.sin(2.0 * math.pi * j * (2.0 * a - 1.0)), 0.0)

    return psi


def perturbation(rho0: BinaryDislocationLaw, k: int, tau: float):
    """
    Mean-zero oscillation psi on [1/2, 1] with ||psi|| <= tau inf rho0 and
    r(k) = int phi_k psi != 0. Returns (psi, frequency j, r(k)).
    """
    if not isinstance(rho0, BinaryDislocationLaw):
        raise InvalidParameterError("the two-point construction needs a binary law")
    if int(k) != k or k < 1:
        raise InvalidParameterError(f"moment order must be a positive integer, got {k!r}")
    tau = float(tau)
    if not (0.0 <= tau < 1.0):
        raise InvalidParameterError(f"tau must lie in [0, 1), got {tau!r}")
    floor = rho0.infimum()
    if not floor > 0.0:
        raise AssumptionViolatedError(f"inf rho0 of '{rho0.name}' is {floor!r}, must be positive")

    weight = moment_weight(int(k))
    unit_r = 0.0
    for j in range(1, 5):
        unit = _oscillation(1.0, j)
        unit_r, _ = integrate_1d(lambda a: weight(a) * unit(a), 0.5, 1.0)
        if abs(unit_r) > R_K_TOL:
            break
    else:
        raise InvalidParameterError(f"no oscillation correlates with phi_{k}")
    height = tau * floor
    return _oscillation(height, j), j, height * unit_r


def make_perturbed_rho(
    rho0: BinaryDislocationLaw, k: int, epsilon: float, tau: float
) -> BinaryDislocationLaw:
    """rho_eps = rho0 + sqrt(eps) psi_k; same mass, m_k shifted by r(k) sqrt(eps)."""
    psi, j, r_k = perturbation(rho0, k, tau)
    epsilon = float(epsilon)
    if not (0.0 <= epsilon < 1.0):
        raise InvalidParameterError(f"epsilon must lie in [0, 1), got {epsilon!r}")
    if epsilon == 0.0 or tau == 0.0:
        return rho0
    amp = math.sqrt(epsilon)
    base = rho0.density
    logger.debug("[ORACLE] perturbing %s: k=%d j=%d r(k)=%.6g eps=%g", rho0.name, k, j, r_k, epsilon)
    return BinaryDislocationLaw(
        name=f"{rho0.name}~eps={epsilon:g},tau={tau:g}",
        rho=lambda a: base(a) + amp * psi(a),
        lower_bound=(1.0 - tau) * rho0.infimum(),
        kappa1=rho0.kappa1,
        kappa2=rho0.kappa2,
        smoothness=rho0.smoothness,
        breakpoints=rho0.breakpoints,
    )


def two_point_experiment(
    rho0: BinaryDislocationLaw,
    k: int,
    epsilon: float,
    tau: float,
    reps: int = 20,
    seed: int = 0,
) -> TwoPointReport:
    """
    n(eps) = floor(4/eps) + 1 samples of rho0: exact and plug-in KL between the
    n-fold products of rho0 and rho_eps, with the Pinsker bounds on their distance.
    """
    epsilon = float(epsilon)
    if not (0.0 < epsilon < 1.0):
        raise InvalidParameterError(f"epsilon must lie in (0, 1), got {epsilon!r}")
    n = int(math.floor(4.0 / epsilon)) + 1
    _, j, r_k = perturbation(rho0, k, tau)
    rho_eps = make_perturbed_rho(rho0, k, epsilon, tau)

    def log_ratio(a):
        return np.log(rho0.density(a)) - np.log(rho_eps.density(a))

    kl_exact, _ = integrate_1d(lambda a: rho0.density(a) * log_ratio(a), 0.5, 1.0, rho0.breakpoints)

    rng = np.random.default_rng(int(seed))
    sums = np.array([float(np.sum(log_ratio(rho0.sample(rng, n)))) for _ in range(int(reps))])
    plug_mean = float(np.mean(sums)) if sums.size else 0.0
    plug_se = float(np.std(sums, ddof=1) / math.sqrt(sums.size)) if sums.size > 1 else 0.0

    gap = moment_mk(pi_from_rho(rho_eps), k) - moment_mk(pi_from_rho(rho0), k)
    half_root2 = math.sqrt(2.0) / 2.0
    report = TwoPointReport(
        law=rho0.name,
        k=int(k),
        epsilon=epsilon,
        tau=float(tau),
        n=n,
        phase=j,
        r_k=r_k,
        kl_exact=kl_exact,
        kl_plugin_mean=plug_mean,
        kl_plugin_se=plug_se,
        pinsker_exact=half_root2 * math.sqrt(max(n * kl_exact, 0.0)),
        pinsker_plugin=half_root2 * math.sqrt(max(plug_mean, 0.0)),
        kl_ceiling=tau**2 * epsilon,
        tv_ceiling=half_root2 * tau * math.sqrt(epsilon * n),
        moment_gap=gap,
        moment_gap_predicted=r_k * math.sqrt(epsilon),
    )
    logger.info("[ORACLE] two-point %s k=%d eps=%g: KL/sample %.3g (ceiling %.3g), TV <= %.3g",
                rho0.name, k, epsilon, kl_exact, report.kl_ceiling, report.pinsker_exact)
    return report

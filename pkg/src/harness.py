# src/harness.py
#
# Replicate studies over an epsilon grid and log-log rate fits.

from __future__ import annotations

import hashlib
import json
import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml

from . import estimators, simulator, streams
from .dislocation_laws import get_law
from .errors import BudgetExceededError, DegenerateFitError, InvalidParameterError
from .estimators import EstimatorConfig, empirical_measure, estimate_beta, estimate_m1, estimate_mk
from .measures import beta_from_pi, limit_measure, moment_mk, pi_from_law
from .models import ExperimentResult, ObservationSet, RateFit
from .simulator import simulate_noisy
from .testfunctions import get_testfn


logger = logging.getLogger(__name__)

ESTIMATORS = ("measure", "m1", "mk", "beta")
_SIGMA_POWER = re.compile(r"^eps\^([0-9.eE+-]+)$")


# -------------------------------------------------------
# CONFIG
# -------------------------------------------------------

def parse_sigma_rule(rule) -> Callable[[float], float]:
    """'0', 'eps^p' (sigma = eps^p) or a fixed number."""
    text = str(rule).strip().replace(" ", "")
    m = _SIGMA_POWER.match(text)
    if m:
        p = float(m.group(1))
        return lambda eps: float(eps) ** p
    try:
        value = float(text)
    except ValueError:
        raise InvalidParameterError(f"bad sigma rule '{rule}' (use 0, eps^p or a number)") from None
    if value < 0:
        raise InvalidParameterError(f"sigma must be >= 0, got {value!r}")
    return lambda eps: value


def _parse_grid(value) -> Tuple[float, ...]:
    if isinstance(value, str):
        value = [v for v in value.replace(";", ",").split(",") if v.strip()]
    return tuple(float(v) for v in value)


def hash_mapping(data: Dict[str, Any]) -> str:
    """First 16 hex digits of the sha256 of the canonical JSON of `data`."""
    blob = json.dumps(data, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class StudyConfig:
    law: str = "binary-uniform"
    estimator: str = "measure"
    epsilons: Tuple[float, ...] = (1e-2, 1e-3, 1e-4)
    sigma_rule: str = "0"
    reps: int = 200
    seed: int = 0
    fn: str = "identity"
    k: int = 2
    a: float = 0.5
    alpha: float = 0.0
    N: Optional[int] = None
    gamma0: Optional[float] = None
    mu: Optional[float] = None
    gamma_rule: Optional[str] = None
    kernel_gamma_rule: Optional[str] = None
    error_power: float = 2.0
    workers: int = 1
    csv: Optional[str] = None
    html: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "epsilons", _parse_grid(self.epsilons))
        object.__setattr__(self, "sigma_rule", str(self.sigma_rule))
        if self.estimator not in ESTIMATORS:
            raise InvalidParameterError(f"unknown estimator '{self.estimator}' (known: {', '.join(ESTIMATORS)})")
        if len(self.epsilons) < 1 or any(not (0.0 < e < 1.0) for e in self.epsilons):
            raise InvalidParameterError(f"epsilon grid must lie in (0, 1): {self.epsilons}")
        if any(b >= a for a, b in zip(self.epsilons, self.epsilons[1:])):
            raise InvalidParameterError(f"epsilon grid must be strictly decreasing: {self.epsilons}")
        if int(self.reps) < 2:
            raise InvalidParameterError("a study needs at least 2 replicates")
        if not (1.0 <= self.error_power <= 2.0):
            raise InvalidParameterError(f"error power must lie in [1, 2], got {self.error_power!r}")
        parse_sigma_rule(self.sigma_rule)

    @classmethod
    def from_mapping(cls, data: Dict[str, Any]) -> "StudyConfig":
        """Flat key-value mapping (YAML file and/or CLI flags); unknown keys are ignored with a notice."""
        known = set(cls.__dataclass_fields__)
        clean = {}
        for key, value in (data or {}).items():
            key = key.replace("-", "_")
            if key == "eps":
                key = "epsilons"
            if key not in known:
                logger.info("[STUDY] ignoring unknown study key '%s'", key)
                continue
            if value is not None:
                clean[key] = value
        return cls(**clean)

    @classmethod
    def from_yaml(cls, path: Path, overrides: Optional[Dict[str, Any]] = None) -> "StudyConfig":
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
        data.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_mapping(data)

    def resolved(self) -> "StudyConfig":
        """Unset fields filled from the configured observation and estimator defaults."""
        return replace(
            self,
            N=estimators.DEFAULT_N if self.N is None else self.N,
            gamma0=simulator.GAMMA0 if self.gamma0 is None else self.gamma0,
            gamma_rule=estimators.DEFAULT_GAMMA_RULE if self.gamma_rule is None else self.gamma_rule,
            kernel_gamma_rule=(
                estimators.DEFAULT_KERNEL_GAMMA_RULE if self.kernel_gamma_rule is None else self.kernel_gamma_rule
            ),
        )

    def as_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        out["epsilons"] = list(self.epsilons)
        # output locations do not change the numbers
        out.pop("csv", None)
        out.pop("html", None)
        out.pop("workers", None)
        return out

    def config_hash(self) -> str:
        return hash_mapping(self.as_dict())


@dataclass
class StudyResult:
    config: StudyConfig
    results: List[ExperimentResult] = field(default_factory=list)
    fit: Optional[RateFit] = None
    estimator_config: Dict[str, Any] = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        return self.config.config_hash()


# -------------------------------------------------------
# RATE FIT
# -------------------------------------------------------

def fit_rate(points: Sequence[Tuple[float, float]]) -> RateFit:
    """OLS of log(mse) on log(eps); slope and its standard error."""
    pts = [(float(e), float(m)) for e, m in points]
    if len(pts) < 3:
        raise InvalidParameterError("a rate fit needs at least 3 points")
    if any(e <= 0.0 for e, _ in pts):
        raise InvalidParameterError("epsilons must be positive")
    if any(m <= 0.0 for _, m in pts):
        raise DegenerateFitError("zero error at some epsilon: exact match, no rate to fit")
    x = np.log([e for e, _ in pts])
    y = np.log([m for _, m in pts])
    xm, ym = x.mean(), y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    if sxx == 0.0:
        raise DegenerateFitError("all epsilons are equal")
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    intercept = float(ym - slope * xm)
    resid = y - (intercept + slope * x)
    dof = len(pts) - 2
    se = math.sqrt(float(np.sum(resid**2)) / dof / sxx) if dof > 0 else 0.0
    return RateFit(
        log_eps=tuple(x.tolist()),
        log_mse=tuple(y.tolist()),
        slope=slope,
        slope_se=se,
        intercept=intercept,
    )


def _exact_fit(points: Sequence[Tuple[float, float]]) -> RateFit:
    x = tuple(math.log(e) for e, _ in points)
    y = tuple(math.log(m) if m > 0 else -math.inf for _, m in points)
    return RateFit(log_eps=x, log_mse=y, slope=math.nan, slope_se=math.nan, intercept=math.nan, exact=True)


# -------------------------------------------------------
# STUDY
# -------------------------------------------------------

def _estimator(cfg: StudyConfig, est_cfg: EstimatorConfig) -> Callable[[ObservationSet], float]:
    if cfg.estimator == "measure":
        g = get_testfn(cfg.fn)
        return lambda obs: empirical_measure(obs, g)
    if cfg.estimator == "m1":
        return lambda obs: estimate_m1(obs, est_cfg)
    if cfg.estimator == "mk":
        return lambda obs: estimate_mk(obs, cfg.k, est_cfg)
    return lambda obs: estimate_beta(obs, cfg.a, est_cfg)


def reference_value(cfg: StudyConfig, pi) -> Optional[float]:
    """Quadrature ground truth for the configured estimator (None for lattice laws)."""
    try:
        if cfg.estimator == "measure":
            return limit_measure(pi, get_testfn(cfg.fn))
        if cfg.estimator == "m1":
            return moment_mk(pi, 1)
        if cfg.estimator == "mk":
            return moment_mk(pi, cfg.k)
        return float(beta_from_pi(pi)(np.array([cfg.a]))[0])
    except InvalidParameterError as e:
        logger.warning("[STUDY] no reference for %s on %s: %s", cfg.estimator, cfg.law, e)
        return None


def run_study(cfg: StudyConfig, on_partial: Optional[Callable[[StudyResult], None]] = None) -> StudyResult:
    """
    R replicate values per epsilon on shared seeds, errors against the quadrature
    reference, and a log-log rate fit when the grid has at least three points.
    """
    cfg = cfg.resolved()
    law = get_law(cfg.law)
    pi = pi_from_law(law)
    est_cfg = EstimatorConfig.for_measure(
        pi,
        N=cfg.N,
        mu=cfg.mu,
        gamma0=cfg.gamma0,
        gamma_rule=cfg.gamma_rule,
        kernel_gamma_rule=cfg.kernel_gamma_rule,
    )
    estimator = _estimator(cfg, est_cfg)
    sigma_of = parse_sigma_rule(cfg.sigma_rule)
    reference = reference_value(cfg, pi)
    seeds = streams.replicate_seeds(cfg.seed, cfg.reps)
    study = StudyResult(config=cfg, estimator_config=est_cfg.as_dict())

    logger.info("[STUDY] %s on %s: %d eps x %d reps (hash %s)",
                cfg.estimator, cfg.law, len(cfg.epsilons), cfg.reps, cfg.config_hash())

    for eps in cfg.epsilons:
        sigma = sigma_of(eps)

        def one(seed: int, eps=eps, sigma=sigma) -> float:
            obs = simulate_noisy(law, eps, sigma, seed, alpha=cfg.alpha, gamma0=cfg.gamma0)
            return float(estimator(obs))

        try:
            if cfg.workers > 1:
                with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                    values = list(pool.map(one, seeds))
            else:
                values = [one(s) for s in seeds]
        except BudgetExceededError:
            logger.error("[STUDY] budget exceeded at eps=%g; flushing %d finished epsilons",
                         eps, len(study.results))
            if on_partial is not None:
                on_partial(study)
            raise

        result = ExperimentResult.from_values(
            label=cfg.estimator,
            epsilon=eps,
            values=values,
            seeds=seeds,
            reference=reference,
            error_power=cfg.error_power,
            config={"sigma": sigma, **cfg.as_dict()},
        )
        study.results.append(result)
        logger.info("[STUDY] eps=%g sigma=%g mean=%.6g se=%.2g mse=%s",
                    eps, sigma, result.mean, result.std_error,
                    "n/a" if result.mse is None else f"{result.mse:.3g}")

    if len(study.results) >= 3 and all(r.mse is not None for r in study.results):
        points = [(r.epsilon, r.mse) for r in study.results]
        try:
            study.fit = fit_rate(points)
        except DegenerateFitError as e:
            logger.info("[STUDY] %s", e)
            study.fit = _exact_fit(points)
    return study


def compare_sigma_rules(cfg: StudyConfig, other_rule: str) -> List[Tuple[float, float, float]]:
    """
    Same study under two sigma rules on the same seeds: per epsilon, mean |difference|
    of the replicate values and the standard error of the first study.
    """
    first = run_study(cfg)
    second = run_study(replace(cfg, sigma_rule=other_rule))
    out = []
    for a, b in zip(first.results, second.results):
        diff = np.asarray(a.replicate_values) - np.asarray(b.replicate_values)
        out.append((a.epsilon, float(np.mean(np.abs(diff))), a.std_error))
    return out


from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import InvalidParameterError


CONSERVATION_TOL = 1e-12


def _frozen(arr, dtype=float) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class MassPartition:
    """Relative fragment sizes produced by one split, s1 >= s2 >= ... > 0, summing to 1."""

    sizes: Tuple[float, ...]

    def __post_init__(self):
        sizes = tuple(float(s) for s in self.sizes)
        if not sizes:
            raise InvalidParameterError("empty mass partition")
        if any(s <= 0.0 or s > 1.0 for s in sizes):
            raise InvalidParameterError(f"partition sizes must lie in (0,1]: {sizes}")
        if any(a < b for a, b in zip(sizes, sizes[1:])):
            raise InvalidParameterError(f"partition sizes must be non-increasing: {sizes}")
        if abs(sum(sizes) - 1.0) > CONSERVATION_TOL:
            raise InvalidParameterError(f"partition sizes must sum to 1, got {sum(sizes)!r}")
        if sizes == (1.0,):
            raise InvalidParameterError("the trivial partition (1,0,...) carries no split")
        object.__setattr__(self, "sizes", sizes)

    def __len__(self) -> int:
        return len(self.sizes)


@dataclass(frozen=True)
class FragmentNode:
    label: Tuple[int, ...]
    size: float
    parent_size: float
    birth_time: float
    lifetime: float

    def as_dict(self) -> Dict[str, Any]:
        return {
            "label": list(self.label),
            "size": self.size,
            "parent_size": self.parent_size,
            "birth_time": self.birth_time,
            "lifetime": self.lifetime,
        }


@dataclass(frozen=True)
class ObservationSet:
    """
    The frozen frontier actually observed at threshold `epsilon`.

    Arrays are aligned record by record. `node_index` points into the
    simulated tree (when one is attached) so labels can be recovered.
    """

    epsilon: float
    sigma: float
    gamma0: float
    seed: Optional[int]
    noisy_size: np.ndarray
    true_size: np.ndarray
    parent_size: np.ndarray
    parent_noisy_size: np.ndarray
    birth_time: np.ndarray
    lifetime: np.ndarray
    node_index: np.ndarray
    mass_defect: float = 0.0
    noise_seed: Optional[int] = None
    tree: Any = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        for name in (
            "noisy_size", "true_size", "parent_size", "parent_noisy_size",
            "birth_time", "lifetime",
        ):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        object.__setattr__(self, "node_index", _frozen(self.node_index, dtype=np.int64))

    # ---- constructors ----

    @classmethod
    def from_sizes(
        cls,
        epsilon: float,
        sizes: Sequence[float],
        parent_sizes: Optional[Sequence[float]] = None,
        gamma0: float = 0.5,
    ) -> "ObservationSet":
        """Hand-built exact observation (sigma = 0), mostly for checks and small examples."""
        sizes = np.asarray(sizes, dtype=float)
        parents = (
            np.full(sizes.shape, 1.0) if parent_sizes is None
            else np.asarray(parent_sizes, dtype=float)
        )
        nan = np.full(sizes.shape, np.nan)
        return cls(
            epsilon=float(epsilon),
            sigma=0.0,
            gamma0=gamma0,
            seed=None,
            noisy_size=sizes,
            true_size=sizes,
            parent_size=parents,
            parent_noisy_size=parents,
            birth_time=nan,
            lifetime=nan,
            node_index=np.full(sizes.shape, -1, dtype=np.int64),
        )

    # ---- views ----

    def __len__(self) -> int:
        return int(self.true_size.shape[0])

    @property
    def t_eps(self) -> float:
        return self.gamma0 * self.epsilon

    @property
    def truncated(self) -> np.ndarray:
        """Records discarded by the t_eps = gamma0 * eps truncation (noisy scheme only)."""
        if self.sigma <= 0.0:
            return np.zeros(len(self), dtype=bool)
        return self.noisy_size < self.t_eps

    @property
    def fragments(self) -> List[Tuple[float, float]]:
        return list(zip(self.noisy_size.tolist(), self.true_size.tolist()))

    def total_mass(self) -> float:
        return float(np.sum(self.true_size))

    def labels(self) -> List[Tuple[int, ...]]:
        if self.tree is None:
            return [() for _ in range(len(self))]
        return [self.tree.label(int(i)) for i in self.node_index]

    def header(self) -> Dict[str, Any]:
        return {
            "epsilon": self.epsilon,
            "sigma": self.sigma,
            "gamma0": self.gamma0,
            "seed": self.seed,
            "noise_seed": self.noise_seed,
            "mass_defect": self.mass_defect,
            "count": len(self),
        }

    def records(self) -> List[Dict[str, Any]]:
        labels = self.labels()
        truncated = self.truncated
        out: List[Dict[str, Any]] = []
        for i in range(len(self)):
            out.append(
                {
                    "label": list(labels[i]),
                    "size": float(self.true_size[i]),
                    "noisy_size": float(self.noisy_size[i]),
                    "parent_size": float(self.parent_size[i]),
                    "birth_time": _none_if_nan(self.birth_time[i]),
                    "lifetime": _none_if_nan(self.lifetime[i]),
                    "truncated": bool(truncated[i]),
                }
            )
        return out


def _none_if_nan(x: float) -> Optional[float]:
    x = float(x)
    return None if np.isnan(x) else x


@dataclass(frozen=True)
class PathObservation:
    """Every fragment born before `horizon`, with lifetimes censored at the horizon."""

    horizon: float
    alpha: float
    seed: int
    sizes: np.ndarray
    birth_time: np.ndarray
    lifetime: np.ndarray
    censored: np.ndarray
    offspring: Tuple[np.ndarray, ...]

    def pairs(self) -> List[Tuple[float, float]]:
        return list(zip(self.sizes.tolist(), self.lifetime.tolist()))


@dataclass(frozen=True)
class SubordinatorPath:
    """One path of zeta(t) = -log chi(t), stopped at its first passage above -log(eta)."""

    eta: float
    jump_times: np.ndarray
    jump_sizes: np.ndarray
    first_passage_time: float
    overshoot: float

    @property
    def level(self) -> float:
        return float(np.sum(self.jump_sizes))

    @property
    def chi_at_passage(self) -> float:
        return float(np.exp(-self.level))


@dataclass
class ExperimentResult:
    label: str
    epsilon: float
    replicate_values: List[float]
    seeds: List[int]
    mean: float
    std_error: float
    reference: Optional[float] = None
    mse: Optional[float] = None
    lp_error: Optional[float] = None
    error_power: float = 2.0
    config: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_values(
        cls,
        label: str,
        epsilon: float,
        values: Sequence[float],
        seeds: Sequence[int],
        reference: Optional[float] = None,
        error_power: float = 2.0,
        config: Optional[Dict[str, Any]] = None,
    ) -> "ExperimentResult":
        vals = np.asarray(values, dtype=float)
        n = vals.size
        mean = float(np.mean(vals)) if n else float("nan")
        se = float(np.std(vals, ddof=1) / np.sqrt(n)) if n >= 2 else float("nan")
        mse = lp = None
        if reference is not None and n:
            dev = vals - reference
            mse = float(np.mean(dev**2))
            lp = float(np.mean(np.abs(dev) ** error_power))
        return cls(
            label=label,
            epsilon=float(epsilon),
            replicate_values=vals.tolist(),
            seeds=[int(s) for s in seeds],
            mean=mean,
            std_error=se,
            reference=reference,
            mse=mse,
            lp_error=lp,
            error_power=error_power,
            config=dict(config or {}),
        )

    def within(self, n_se: float = 3.0, floor: float = 0.0) -> bool:
        """Is the replicate mean within max(n_se * SE, floor) of the reference?"""
        if self.reference is None:
            raise InvalidParameterError("no reference attached to this result")
        return abs(self.mean - self.reference) <= max(n_se * self.std_error, floor)


@dataclass(frozen=True)
class RateFit:
    log_eps: Tuple[float, ...]
    log_mse: Tuple[float, ...]
    slope: float
    slope_se: float
    intercept: float
    exact: bool = False


@dataclass(frozen=True)
class OracleReport:
    """Both sides of E[sum_v xi_v f(xi_v)] = E*[f(chi(T_eta))], estimated independently."""

    law: str
    eta: float
    fn: str
    reps: int
    tree_mean: float
    tree_se: float
    path_mean: float
    path_se: float
    z: float
    exact: bool

    def as_dict(self) -> Dict[str, Any]:
        return dict(self.__dict__)


@dataclass(frozen=True)
class TwoPointReport:
    law: str
    k: int
    epsilon: float
    tau: float
    n: int
    phase: int
    r_k: float
    kl_exact: float
    kl_plugin_mean: float
    kl_plugin_se: float
    pinsker_exact: float
    pinsker_plugin: float
    kl_ceiling: float
    tv_ceiling: float
    moment_gap: float
    moment_gap_predicted: float

    def as_dict(self) -> Dict[str, Any]:
        return dict(self.__dict__)

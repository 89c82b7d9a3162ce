# src/dislocation_laws.py

from __future__ import annotations

import csv
import logging
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import yaml
from scipy import integrate, stats

from .errors import InvalidDensityError, InvalidParameterError
from .models import MassPartition, CONSERVATION_TOL
from .quadrature import InverseCdf, check_normalised


logger = logging.getLogger(__name__)

BASE_DIR = Path(__file__).resolve().parent.parent
LAWS_CFG = BASE_DIR / "config" / "laws.yaml"

RHO_TOL = 1e-10
LOG2 = math.log(2.0)

Func = Callable[[np.ndarray], np.ndarray]


# -------------------------------------------------------
# BINARY LAWS: nu(ds) = rho(ds1) delta_{1-s1}(ds2)
# -------------------------------------------------------

@dataclass(frozen=True)
class BinaryDislocationLaw:
    """
    Binary conservative split: the largest fragment has density `rho` on [1/2, 1],
    the other one takes the remaining mass.

    `lower_bound` > 0 claims Assumption D (rho bounded away from zero);
    kappa1 / kappa2 / smoothness are declared class orders of the induced pi and beta.
    """

    name: str
    rho: Func
    lower_bound: float = 0.0
    sampler_seedable: bool = True
    kappa1: float = math.inf
    kappa2: float = 1.0
    smoothness: float = 1.0
    inverse_cdf: Optional[Func] = field(default=None, repr=False, compare=False)
    breakpoints: Tuple[float, ...] = ()

    max_children = 2
    spread_out = True

    def __post_init__(self):
        check_normalised(
            self.density, 0.5, 1.0, RHO_TOL, f"rho of law '{self.name}'", points=self.breakpoints
        )
        if self.lower_bound < 0.0:
            raise InvalidParameterError("lower_bound must be non-negative")
        if self.lower_bound > 0.0:
            grid = np.linspace(0.5, 1.0, 10_001)
            worst = float(np.min(self.density(grid)))
            if worst < self.lower_bound * (1.0 - 1e-12):
                raise InvalidDensityError(
                    f"law '{self.name}' claims rho >= {self.lower_bound} but min on grid is {worst}"
                )
        if self.inverse_cdf is None:
            table = InverseCdf(self.density, 0.5, 1.0, breakpoints=self.breakpoints)
            object.__setattr__(self, "inverse_cdf", table)

    def density(self, a) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        inside = (a >= 0.5) & (a <= 1.0)
        safe = np.where(inside, a, 0.75)
        return np.where(inside, np.asarray(self.rho(safe), dtype=float), 0.0)

    def infimum(self, n: int = 10_001) -> float:
        grid = np.linspace(0.5, 1.0, n)
        return float(min(np.min(self.density(grid)), self.lower_bound or np.inf))

    def largest_fragment(self, u: np.ndarray) -> np.ndarray:
        """s1 = F_rho^{-1}(u), kept strictly below 1 so a split never returns the parent."""
        s1 = np.asarray(self.inverse_cdf(u), dtype=float)
        return np.clip(s1, 0.5, np.nextafter(1.0, 0.0))

    def split(self, u: np.ndarray) -> np.ndarray:
        s1 = self.largest_fragment(u)
        return np.stack([s1, 1.0 - s1], axis=1)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.largest_fragment(rng.random(int(n)))


# -------------------------------------------------------
# FINITE DISCRETE LAWS
# -------------------------------------------------------

@dataclass(frozen=True)
class DiscreteDislocationLaw:
    """Finitely many mass partitions, each with a probability."""

    name: str
    atoms: Tuple[Tuple[MassPartition, float], ...]
    kappa1: float = math.inf
    kappa2: float = math.inf
    smoothness: float = 0.0

    spread_out = False
    lower_bound = 0.0

    def __post_init__(self):
        atoms = tuple(
            (p if isinstance(p, MassPartition) else MassPartition(tuple(p)), float(w))
            for p, w in self.atoms
        )
        if not atoms:
            raise InvalidParameterError(f"law '{self.name}' has no atoms")
        probs = np.array([w for _, w in atoms])
        if np.any(probs <= 0.0):
            raise InvalidParameterError(f"law '{self.name}' has non-positive atom probabilities")
        if abs(float(np.sum(probs)) - 1.0) > CONSERVATION_TOL:
            raise InvalidParameterError(
                f"atom probabilities of '{self.name}' sum to {np.sum(probs)!r}, expected 1"
            )
        object.__setattr__(self, "atoms", atoms)

    @property
    def max_children(self) -> int:
        return max(len(p) for p, _ in self.atoms)

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([w for _, w in self.atoms])

    @property
    def size_matrix(self) -> np.ndarray:
        m = np.zeros((len(self.atoms), self.max_children))
        for i, (p, _) in enumerate(self.atoms):
            m[i, : len(p)] = p.sizes
        return m

    def split(self, u: np.ndarray) -> np.ndarray:
        cum = np.cumsum(self.probabilities)
        idx = np.searchsorted(cum, np.asarray(u, dtype=float), side="right")
        idx = np.minimum(idx, len(self.atoms) - 1)
        return self.size_matrix[idx]

    def tagged_atoms(self) -> Tuple[np.ndarray, np.ndarray]:
        """Support and weights of pi(dx) = e^{-x} sum_i nu(-log s_i in dx), merged by location."""
        loc: Dict[float, float] = {}
        for part, w in self.atoms:
            for s in part.sizes:
                x = -math.log(s)
                key = round(x, 14)
                loc[key] = loc.get(key, 0.0) + w * s
        xs = np.array(sorted(loc))
        ws = np.array([loc[x] for x in xs])
        return xs, ws


DislocationLaw = Union[BinaryDislocationLaw, DiscreteDislocationLaw]


# -------------------------------------------------------
# BUILT-IN FAMILIES
# -------------------------------------------------------

def binary_uniform(name: str = "binary-uniform") -> BinaryDislocationLaw:
    """rho = 2 on [1/2, 1]; pi(x) = 2 e^{-2x}."""
    return BinaryDislocationLaw(
        name=name,
        rho=lambda a: np.full(np.shape(a), 2.0),
        lower_bound=2.0,
        kappa1=2.0,
        kappa2=1.0,
        smoothness=math.inf,
        inverse_cdf=lambda u: 0.5 + 0.5 * np.asarray(u, dtype=float),
    )


def binary_beta(p: float, q: float, name: Optional[str] = None) -> BinaryDislocationLaw:
    """Beta(p, q) density carried from [0, 1] onto [1/2, 1]."""
    if p <= 0 or q <= 0:
        raise InvalidParameterError(f"binary-beta needs p, q > 0 (got {p}, {q})")
    dist = stats.beta(p, q)
    # same grid as the lower-bound check in BinaryDislocationLaw
    grid = np.linspace(0.0, 1.0, 10_001)
    inf_rho = float(np.min(2.0 * dist.pdf(grid)))
    return BinaryDislocationLaw(
        name=name or f"binary-beta({p:g},{q:g})",
        rho=lambda a: 2.0 * dist.pdf(2.0 * np.asarray(a, dtype=float) - 1.0),
        lower_bound=inf_rho if np.isfinite(inf_rho) and inf_rho > 0.0 else 0.0,
        kappa1=q + 1.0,
        kappa2=q,
        smoothness=float(min(p, q)),
        inverse_cdf=lambda u: 0.5 * (1.0 + dist.ppf(np.asarray(u, dtype=float))),
    )


def binary_tabulated(
    path: Union[str, Path], name: Optional[str] = None, normalise: bool = True
) -> BinaryDislocationLaw:
    """
    rho from a two-column CSV (a, rho(a)) on [1/2, 1], linearly interpolated.
    Lines starting with '#' and a non-numeric header row are skipped.
    """
    path = Path(path)
    a_vals: List[float] = []
    r_vals: List[float] = []
    with path.open("r", encoding="utf-8", newline="") as f:
        for row in csv.reader(f):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                a_vals.append(float(row[0]))
                r_vals.append(float(row[1]))
            except (ValueError, IndexError):
                continue
    if len(a_vals) < 2:
        raise InvalidDensityError(f"tabulated density {path} has fewer than two rows")
    a = np.asarray(a_vals)
    r = np.asarray(r_vals)
    order = np.argsort(a)
    a, r = a[order], r[order]
    if a[0] > 0.5 + 1e-12 or a[-1] < 1.0 - 1e-12:
        raise InvalidDensityError(f"tabulated density {path} must cover [1/2, 1]")
    if np.any(r < 0):
        raise InvalidDensityError(f"tabulated density {path} has negative values")
    mass = float(integrate.trapezoid(r, a))
    if abs(mass - 1.0) > RHO_TOL:
        if not normalise:
            raise InvalidDensityError(f"tabulated density {path} integrates to {mass}")
        logger.info("[LAWS] Renormalising tabulated density %s (mass %.6g)", path.name, mass)
        r = r / mass
    knots = tuple(float(x) for x in a if 0.5 < x < 1.0)
    return BinaryDislocationLaw(
        name=name or f"tabulated:{path.name}",
        rho=lambda x: np.interp(x, a, r),
        lower_bound=0.0,
        # pi(x) ~ e^{-2x} rho(1) at infinity and ~ rho(1) at the origin
        kappa1=2.0 if r[-1] > 0 else 3.0,
        kappa2=1.0 if r[-1] > 0 else 2.0,
        smoothness=1.0,
        breakpoints=knots,
    )


def dyadic(name: str = "dyadic") -> DiscreteDislocationLaw:
    """Deterministic halving."""
    return DiscreteDislocationLaw(name=name, atoms=((MassPartition((0.5, 0.5)), 1.0),))


def ternary_uniform_discrete(name: str = "ternary-uniform-discrete") -> DiscreteDislocationLaw:
    """Uniform choice among three ternary partitions."""
    parts = [
        (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0),
        (0.5, 0.25, 0.25),
        (0.5, 1.0 / 3.0, 1.0 / 6.0),
    ]
    return DiscreteDislocationLaw(
        name=name,
        atoms=tuple((MassPartition(p), 1.0 / 3.0) for p in parts),
    )


def discrete_from_spec(name: str, atoms: Sequence[dict]) -> DiscreteDislocationLaw:
    return DiscreteDislocationLaw(
        name=name,
        atoms=tuple(
            (MassPartition(tuple(sorted((float(s) for s in a["sizes"]), reverse=True))), float(a["prob"]))
            for a in atoms
        ),
    )


# -------------------------------------------------------
# REGISTRY (config/laws.yaml with built-in defaults)
# -------------------------------------------------------

DEFAULT_LAWS: Dict[str, Callable[[], DislocationLaw]] = {
    "binary-uniform": binary_uniform,
    "dyadic": dyadic,
    "ternary-uniform-discrete": ternary_uniform_discrete,
    "binary-near-dyadic": lambda: binary_beta(1.0, 200.0, name="binary-near-dyadic"),
}

_BETA_RE = re.compile(r"^binary-beta\(\s*([0-9.eE+-]+)\s*,\s*([0-9.eE+-]+)\s*\)$")


def _law_from_entry(entry: dict) -> DislocationLaw:
    name = (entry.get("name") or "").strip()
    kind = (entry.get("kind") or "").strip()
    params = entry.get("params") or {}
    if kind == "binary-uniform":
        law = binary_uniform(name)
    elif kind == "binary-beta":
        law = binary_beta(float(params["p"]), float(params["q"]), name=name)
    elif kind == "tabulated":
        csv_path = Path(params["path"])
        if not csv_path.is_absolute():
            csv_path = BASE_DIR / csv_path
        law = binary_tabulated(csv_path, name=name)
    elif kind == "discrete":
        law = discrete_from_spec(name, params["atoms"])
    else:
        raise InvalidParameterError(f"unknown law kind '{kind}' for '{name}'")

    overrides = {k: float(entry[k]) for k in ("kappa1", "kappa2", "smoothness") if k in entry}
    return replace(law, **overrides) if overrides else law


def load_law_registry(cfg_path: Path = LAWS_CFG) -> Dict[str, dict]:
    """
    Reads config/laws.yaml. Expected format:

    laws:
      - name: "binary-uniform"
        kind: "binary-uniform"
      ...

    Missing, malformed or empty file -> built-in defaults only.
    """
    if not cfg_path.exists():
        logger.info("[LAWS] Config file not found: %s - using built-in laws.", cfg_path)
        return {}
    try:
        with cfg_path.open("r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
    except Exception as e:
        logger.warning("[LAWS] Error reading %s: %r - using built-in laws.", cfg_path, e)
        return {}

    entries: Dict[str, dict] = {}
    for entry in data.get("laws") or []:
        if not isinstance(entry, dict):
            continue
        name = (entry.get("name") or "").strip()
        if not name or entry.get("enabled", True) is False:
            continue
        entries[name] = entry
    logger.debug("[LAWS] Loaded %d law entries from %s.", len(entries), cfg_path)
    return entries


def get_law(key: str, registry: Optional[Dict[str, dict]] = None) -> DislocationLaw:
    """
    Resolves a law key: 'binary-beta(p,q)', 'tabulated:<csv path>',
    a name from config/laws.yaml, or a built-in default.
    """
    key = key.strip()
    m = _BETA_RE.match(key)
    if m:
        return binary_beta(float(m.group(1)), float(m.group(2)))
    if key.startswith("tabulated:"):
        return binary_tabulated(key.split(":", 1)[1])

    entries = load_law_registry() if registry is None else registry
    if key in entries:
        return _law_from_entry(entries[key])
    if key in DEFAULT_LAWS:
        return DEFAULT_LAWS[key]()
    known = sorted(set(entries) | set(DEFAULT_LAWS))
    raise InvalidParameterError(f"unknown law '{key}' (known: {', '.join(known)}, binary-beta(p,q), tabulated:<csv>)")

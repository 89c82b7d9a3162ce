# src/simulator.py
#
# Genealogical tree of a conservative fragmentation chain, grown generation by
# generation down to a size threshold, and the observation sets read from it.
#
# Nodes are stored in flat tables in generation order, so a parent always has
# a smaller index than its children. Every random draw is keyed by the node
# label (see streams.py): trees grown to different thresholds from the same
# seed share their common part exactly.

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from . import streams
from .dislocation_laws import DislocationLaw
from .errors import (
    BudgetExceededError,
    InvalidParameterError,
    InvalidThresholdError,
    NoiseTooLargeError,
)
from .models import FragmentNode, ObservationSet, PathObservation, _frozen


logger = logging.getLogger(__name__)

MAX_FRAGMENTS = 5_000_000
MACHINE_FLOOR = 1e-15
GAMMA0 = 0.5


def configure(simulation: dict, observation: Optional[dict] = None) -> None:
    """Apply the `simulation` / `observation` sections of config/config.yaml."""
    global MAX_FRAGMENTS, MACHINE_FLOOR, GAMMA0
    simulation = simulation or {}
    observation = observation or {}
    MAX_FRAGMENTS = int(simulation.get("max_fragments", MAX_FRAGMENTS))
    MACHINE_FLOOR = float(simulation.get("machine_floor", MACHINE_FLOOR))
    GAMMA0 = float(observation.get("gamma0", GAMMA0))


# -------------------------------------------------------
# TREE
# -------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FragmentTree:
    """
    Flat node tables of one simulated genealogy.

    `split[i]` tells whether node i was split (size >= threshold); `dust[i]` is the
    mass its split lost to the machine floor.
    """

    law: DislocationLaw = field(repr=False)
    seed: int
    alpha: float
    threshold: float
    with_times: bool
    size: np.ndarray
    parent: np.ndarray
    child_index: np.ndarray
    key: np.ndarray = field(repr=False)
    generation_offsets: np.ndarray = field(repr=False)
    birth_time: np.ndarray = field(repr=False)
    lifetime: np.ndarray = field(repr=False)
    split: np.ndarray = field(repr=False)
    dust: np.ndarray = field(repr=False)
    max_fragments: Optional[int] = field(default=None, repr=False)
    machine_floor: Optional[float] = field(default=None, repr=False)

    def __len__(self) -> int:
        return int(self.size.shape[0])

    @property
    def mass_defect(self) -> float:
        return float(np.sum(self.dust))

    @property
    def depth(self) -> int:
        return int(len(self.generation_offsets) - 1)

    def label(self, i: int) -> Tuple[int, ...]:
        out: List[int] = []
        i = int(i)
        while self.parent[i] >= 0:
            out.append(int(self.child_index[i]))
            i = int(self.parent[i])
        return tuple(reversed(out))

    def node(self, i: int) -> FragmentNode:
        p = int(self.parent[i])
        return FragmentNode(
            label=self.label(i),
            size=float(self.size[i]),
            parent_size=float(self.size[p]) if p >= 0 else float("nan"),
            birth_time=float(self.birth_time[i]),
            lifetime=float(self.lifetime[i]),
        )

    def generations(self):
        for g in range(self.depth):
            yield slice(int(self.generation_offsets[g]), int(self.generation_offsets[g + 1]))

    def frontier(self, epsilon: float, values: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
        """
        Indices of the first nodes on each line of descent with value < epsilon
        (all ancestors >= epsilon), and the mask of nodes reached while alive.
        `values` defaults to the true sizes.
        """
        vals = self.size if values is None else values
        alive = np.zeros(len(self), dtype=bool)
        alive[0] = True
        for sl in self.generations():
            if sl.start == 0:
                continue
            par = self.parent[sl]
            alive[sl] = alive[par] & (vals[par] >= epsilon)
        frozen = alive & (vals < epsilon)
        frozen[0] = False
        return np.flatnonzero(frozen), alive

    def pairs(self) -> np.ndarray:
        """(size, lifetime) of every node, shape (n, 2)."""
        if not self.with_times:
            raise InvalidParameterError("tree was grown without lifetimes")
        return np.column_stack([self.size, self.lifetime])


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not np.isfinite(alpha) or alpha < 0.0:
        raise InvalidParameterError(f"alpha must be >= 0, got {alpha!r}")
    return alpha


def _check_epsilon(epsilon: float) -> float:
    epsilon = float(epsilon)
    if not (0.0 < epsilon < 1.0):
        raise InvalidThresholdError(f"epsilon must lie in (0, 1), got {epsilon!r}")
    return epsilon


def _check_sigma(sigma: float, epsilon: float) -> float:
    sigma = float(sigma)
    if not sigma >= 0.0:
        raise InvalidParameterError(f"sigma must be >= 0, got {sigma!r}")
    if sigma >= 0.5 * epsilon:
        raise NoiseTooLargeError(f"sigma={sigma:g} must stay below epsilon/2={0.5 * epsilon:g}")
    return sigma


def _lifetimes(keys: np.ndarray, sizes: np.ndarray, alpha: float) -> np.ndarray:
    """Exponential with rate size^alpha (dislocation measure of mass 1)."""
    u = streams.uniforms(keys, streams.LIFETIME)
    return -np.log(u) / sizes**alpha


def _split_generation(law: DislocationLaw, keys: np.ndarray, sizes: np.ndarray, floor: float):
    """Children of every given node: flat (parent position, child index, key, size) plus dust per parent."""
    rel = np.asarray(law.split(streams.uniforms(keys, streams.SPLIT)), dtype=float)
    n, m = rel.shape
    absolute = rel * sizes[:, None]
    flat = absolute.ravel()
    pos = np.repeat(np.arange(n), m)
    cidx = np.tile(np.arange(m), n)
    keep = flat >= floor if floor > 0.0 else flat > 0.0
    lost = np.where(~keep, flat, 0.0).reshape(n, m).sum(axis=1)
    ckeys = streams.child_keys(keys[pos[keep]], cidx[keep])
    return pos[keep], cidx[keep], ckeys, flat[keep], lost


def grow_tree(
    law: DislocationLaw,
    threshold: float,
    alpha: float = 0.0,
    seed: int = 0,
    with_times: bool = False,
    max_fragments: Optional[int] = None,
    machine_floor: Optional[float] = None,
) -> FragmentTree:
    """Breadth-first expansion: every node of size >= threshold is split exactly once."""
    alpha = _check_alpha(alpha)
    threshold = float(threshold)
    if not (0.0 < threshold < 1.0):
        raise InvalidThresholdError(f"threshold must lie in (0, 1), got {threshold!r}")
    cap = MAX_FRAGMENTS if max_fragments is None else int(max_fragments)
    floor = MACHINE_FLOOR if machine_floor is None else float(machine_floor)

    cur_keys = np.array([streams.root_key(seed)], dtype=np.uint64)
    cur_sizes = np.ones(1)
    cur_index = np.zeros(1, dtype=np.int64)
    cur_birth = np.zeros(1)

    sizes, parents, cidxs, keys, births, lifetimes, splits, dusts = [], [], [], [], [], [], [], []
    sizes.append(cur_sizes)
    parents.append(np.full(1, -1, dtype=np.int64))
    cidxs.append(np.full(1, -1, dtype=np.int64))
    keys.append(cur_keys)
    births.append(cur_birth)
    offsets = [0, 1]
    total = 1

    while True:
        life = _lifetimes(cur_keys, cur_sizes, alpha) if with_times else np.full(cur_sizes.shape, np.nan)
        lifetimes.append(life)
        live = cur_sizes >= threshold
        splits.append(live)
        dust = np.zeros(cur_sizes.shape)
        if not np.any(live):
            dusts.append(dust)
            break

        pos, cidx, ckeys, csizes, lost = _split_generation(law, cur_keys[live], cur_sizes[live], floor)
        dust[live] = lost
        dusts.append(dust)

        total += csizes.size
        if total > cap:
            raise BudgetExceededError(
                f"tree for seed {seed} exceeds {cap} fragments at threshold {threshold:g}"
            )
        live_index = cur_index[live]
        cur_index = np.arange(offsets[-1], offsets[-1] + csizes.size, dtype=np.int64)
        cur_keys = ckeys
        cur_sizes = csizes
        cur_birth = (cur_birth[live] + life[live])[pos] if with_times else np.full(csizes.shape, np.nan)

        sizes.append(csizes)
        parents.append(live_index[pos])
        cidxs.append(cidx.astype(np.int64))
        keys.append(ckeys)
        births.append(cur_birth)
        offsets.append(offsets[-1] + csizes.size)

    tree = FragmentTree(
        law=law,
        seed=int(seed),
        alpha=alpha,
        threshold=threshold,
        with_times=bool(with_times),
        size=_frozen(np.concatenate(sizes)),
        parent=_frozen(np.concatenate(parents), dtype=np.int64),
        child_index=_frozen(np.concatenate(cidxs), dtype=np.int64),
        key=_frozen(np.concatenate(keys), dtype=np.uint64),
        generation_offsets=_frozen(offsets, dtype=np.int64),
        birth_time=_frozen(np.concatenate(births)),
        lifetime=_frozen(np.concatenate(lifetimes)),
        split=_frozen(np.concatenate(splits), dtype=bool),
        dust=_frozen(np.concatenate(dusts)),
        max_fragments=cap,
        machine_floor=floor,
    )
    logger.debug(
        "[SIM] %s seed=%s threshold=%.3g: %d nodes, depth %d",
        getattr(law, "name", "law"), seed, threshold, len(tree), tree.depth,
    )
    return tree


# -------------------------------------------------------
# OBSERVATION SETS
# -------------------------------------------------------

def _observe(
    tree: FragmentTree,
    epsilon: float,
    sigma: float,
    noisy: np.ndarray,
    gamma0: float,
    noise_seed: Optional[int],
) -> ObservationSet:
    idx, alive = tree.frontier(epsilon, noisy)
    par = tree.parent[idx]
    # dust of splits actually performed above the observed frontier
    expanded = alive & (noisy >= epsilon)
    return ObservationSet(
        epsilon=epsilon,
        sigma=sigma,
        gamma0=gamma0,
        seed=tree.seed,
        noisy_size=noisy[idx],
        true_size=tree.size[idx],
        parent_size=tree.size[par],
        parent_noisy_size=noisy[par],
        birth_time=tree.birth_time[idx],
        lifetime=tree.lifetime[idx],
        node_index=idx,
        mass_defect=float(np.sum(tree.dust[expanded])),
        noise_seed=noise_seed,
        tree=tree,
    )


def simulate_tree(
    law: DislocationLaw,
    epsilon: float,
    alpha: float = 0.0,
    seed: int = 0,
    with_times: bool = False,
    sigma_margin: float = 0.0,
    gamma0: Optional[float] = None,
    max_fragments: Optional[int] = None,
    machine_floor: Optional[float] = None,
) -> ObservationSet:
    """
    Exact observation X_eps: fragments that are < epsilon while their parent was >= epsilon.
    With sigma_margin > 0 the tree is grown down to epsilon - sigma_margin so that
    add_noise can be applied without regrowing.
    """
    epsilon = _check_epsilon(epsilon)
    tree = grow_tree(
        law,
        epsilon - float(sigma_margin),
        alpha=alpha,
        seed=seed,
        with_times=with_times,
        max_fragments=max_fragments,
        machine_floor=machine_floor,
    )
    return _observe(tree, epsilon, 0.0, tree.size, GAMMA0 if gamma0 is None else float(gamma0), None)


def add_noise(
    tree_handle: Union[ObservationSet, FragmentTree],
    sigma: float,
    noise_seed: int,
    epsilon: Optional[float] = None,
    gamma0: Optional[float] = None,
) -> ObservationSet:
    """
    Noisy observation X_{eps,sigma}: every node gets xi + sigma * U, U uniform on [-1, 1],
    and the frontier is recomputed on the noisy sizes. Records below t_eps = gamma0 * eps
    stay in the set and are flagged as truncated.
    """
    if isinstance(tree_handle, ObservationSet):
        if tree_handle.tree is None:
            raise InvalidParameterError("observation set carries no tree to add noise to")
        tree = tree_handle.tree
        epsilon = tree_handle.epsilon if epsilon is None else epsilon
        gamma0 = tree_handle.gamma0 if gamma0 is None else gamma0
    else:
        tree = tree_handle
        if epsilon is None:
            raise InvalidParameterError("epsilon is required when passing a bare tree")
    epsilon = _check_epsilon(epsilon)
    gamma0 = GAMMA0 if gamma0 is None else float(gamma0)
    sigma = _check_sigma(sigma, epsilon)

    needed = epsilon - sigma
    if tree.threshold > needed:
        logger.info("[NOISE] regrowing seed %s from %.3g down to %.3g", tree.seed, tree.threshold, needed)
        tree = grow_tree(
            tree.law,
            needed,
            alpha=tree.alpha,
            seed=tree.seed,
            with_times=tree.with_times,
            max_fragments=tree.max_fragments,
            machine_floor=tree.machine_floor,
        )

    if sigma == 0.0:
        noisy = np.array(tree.size)
    else:
        keys = streams.rekey(tree.key, noise_seed)
        u = streams.uniforms(keys, streams.NOISE)
        noisy = tree.size + sigma * (2.0 * u - 1.0)
    return _observe(tree, epsilon, sigma, noisy, gamma0, int(noise_seed))


def simulate_noisy(
    law: DislocationLaw,
    epsilon: float,
    sigma: float,
    seed: int,
    noise_seed: Optional[int] = None,
    alpha: float = 0.0,
    with_times: bool = False,
    gamma0: Optional[float] = None,
) -> ObservationSet:
    """simulate_tree grown to epsilon - sigma followed by add_noise; noise_seed defaults to seed."""
    sigma = _check_sigma(sigma, _check_epsilon(epsilon))
    obs = simulate_tree(law, epsilon, alpha=alpha, seed=seed, with_times=with_times,
                        sigma_margin=sigma, gamma0=gamma0)
    if sigma == 0.0:
        return obs
    return add_noise(obs, sigma, seed if noise_seed is None else noise_seed)


# -------------------------------------------------------
# FOREST (many independent trees, frontier only)
# -------------------------------------------------------

def simulate_forest(
    law: DislocationLaw,
    epsilon: float,
    seeds: Sequence[int],
    max_fragments: Optional[int] = None,
    machine_floor: Optional[float] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Frozen frontier at epsilon of one tree per seed, grown together.
    Returns (tree_index, sizes); per tree the frontier equals simulate_tree's for that seed.
    """
    epsilon = _check_epsilon(epsilon)
    cap = MAX_FRAGMENTS if max_fragments is None else int(max_fragments)
    floor = MACHINE_FLOOR if machine_floor is None else float(machine_floor)

    keys = streams.root_keys(seeds)
    sizes = np.ones(keys.shape)
    owner = np.arange(keys.size, dtype=np.int64)
    out_owner: List[np.ndarray] = []
    out_size: List[np.ndarray] = []

    while sizes.size:
        pos, _, ckeys, csizes, _ = _split_generation(law, keys, sizes, floor)
        cowner = owner[pos]
        frozen = csizes < epsilon
        out_owner.append(cowner[frozen])
        out_size.append(csizes[frozen])
        keys, sizes, owner = ckeys[~frozen], csizes[~frozen], cowner[~frozen]
        if sizes.size > cap:
            raise BudgetExceededError(f"forest of {len(seeds)} trees exceeds {cap} live fragments")

    if not out_size:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    return np.concatenate(out_owner), np.concatenate(out_size)


# -------------------------------------------------------
# PATH OBSERVATION UP TO A TIME HORIZON
# -------------------------------------------------------

def observe_path(
    law: DislocationLaw,
    alpha: float,
    horizon: float,
    seed: int = 0,
    max_fragments: Optional[int] = None,
    machine_floor: Optional[float] = None,
) -> PathObservation:
    """
    Every fragment born before `horizon`, with its lifetime (censored at the horizon
    for fragments still alive) and the rescaled offspring partition of every split.
    """
    alpha = _check_alpha(alpha)
    horizon = float(horizon)
    if not (horizon > 0.0 and np.isfinite(horizon)):
        raise InvalidParameterError(f"horizon must be a positive finite time, got {horizon!r}")
    cap = MAX_FRAGMENTS if max_fragments is None else int(max_fragments)
    floor = MACHINE_FLOOR if machine_floor is None else float(machine_floor)

    cur_keys = np.array([streams.root_key(seed)], dtype=np.uint64)
    cur_sizes = np.ones(1)
    cur_birth = np.zeros(1)
    sizes, births, lifes, censored, offspring = [], [], [], [], []
    total = 1

    while cur_sizes.size:
        life = _lifetimes(cur_keys, cur_sizes, alpha)
        ends = cur_birth + life
        splits = ends <= horizon
        sizes.append(cur_sizes)
        births.append(cur_birth)
        lifes.append(np.where(splits, life, horizon - cur_birth))
        censored.append(~splits)
        if not np.any(splits):
            break

        rel = np.asarray(law.split(streams.uniforms(cur_keys[splits], streams.SPLIT)), dtype=float)
        offspring.extend(tuple(row[row > 0.0]) for row in rel)
        pos, _, ckeys, csizes, _ = _split_generation(law, cur_keys[splits], cur_sizes[splits], floor)
        total += csizes.size
        if total > cap:
            raise BudgetExceededError(f"path up to t={horizon:g} exceeds {cap} fragments")
        cur_keys = ckeys
        cur_birth = ends[splits][pos]
        cur_sizes = csizes

    logger.debug("[SIM] path seed=%s horizon=%g: %d fragments", seed, horizon, total)
    return PathObservation(
        horizon=horizon,
        alpha=alpha,
        seed=int(seed),
        sizes=_frozen(np.concatenate(sizes)),
        birth_time=_frozen(np.concatenate(births)),
        lifetime=_frozen(np.concatenate(lifes)),
        censored=_frozen(np.concatenate(censored), dtype=bool),
        offspring=tuple(np.array(o) for o in offspring),
    )

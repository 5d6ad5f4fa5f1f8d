"""Synthetic workload generator: random geometric state spaces,
inverse-distance transition weights, and near-shortest-path object traces.

States are drawn uniformly from the unit square and connected below the
radius that keeps the average node degree at the target branching factor.
Objects walk concatenated shortest paths between random waypoints, with a
periodic wrong turn so traces are near-shortest rather than shortest; every
l-th node of the trace is emitted as an observation and the full trace is
retained as ground truth for calibration experiments.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import cKDTree

from .errors import GenerationError, ModelError
from .model import MarkovModel, StateSpace, Trajectory, TrajectoryDatabase, UncertainObject

LAG_MODES = ("spacing", "detour")


@dataclass(frozen=True)
class GenConfig:
    """Knobs of one synthetic database.

    ``spacing`` is the nominal tick distance between observations and
    ``lag`` in (0, 1] shortens it: with lag_mode "spacing" (default) an
    observation is taken every max(1, round(spacing * lag)) trace nodes;
    with "detour" observations stay ``spacing`` nodes apart and the wrong
    turn period is scaled by lag instead, so small lag wanders more.
    """

    states: int
    branching: float = 6.0
    objects: int = 10
    lifetime: int = 100
    horizon: int = 1000
    spacing: int = 10
    lag: float = 1.0
    wrong_turn_period: int = 10
    lag_mode: str = "spacing"
    seed: int = 0

    def __post_init__(self):
        if self.states < 2:
            raise ModelError("need at least 2 states")
        if self.branching < 1:
            raise ModelError("branching factor must be >= 1")
        if not 0.0 < self.lag <= 1.0:
            raise ModelError("lag must lie in (0, 1]")
        if self.spacing < 1:
            raise ModelError("observation spacing must be >= 1")
        if self.lifetime < 1 or self.lifetime > self.horizon:
            raise ModelError("need 1 <= lifetime <= horizon")
        if self.wrong_turn_period < 0:
            raise ModelError("wrong turn period must be >= 0 (0 disables)")
        if self.lag_mode not in LAG_MODES:
            raise ModelError(f"lag_mode must be one of {LAG_MODES}")

    @property
    def obs_node_step(self) -> int:
        if self.lag_mode == "spacing":
            return max(1, round(self.spacing * self.lag))
        return self.spacing

    @property
    def detour_period(self) -> int:
        if self.wrong_turn_period == 0:
            return 0
        if self.lag_mode == "detour":
            return max(1, round(self.wrong_turn_period * self.lag))
        return self.wrong_turn_period


def _stream(seed: int, label: str) -> np.random.Generator:
    digest = int.from_bytes(hashlib.sha256(label.encode()).digest()[:8], "big")
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(entropy=(int(seed), digest)))
    )


def connection_radius(n: int, branching: float) -> float:
    """Radius giving each node ~branching neighbors independent of n."""
    return math.sqrt(branching / (n * math.pi))


def gen_state_space(cfg: GenConfig) -> StateSpace:
    """cfg.states i.i.d. uniform points on the unit square."""
    rng = _stream(cfg.seed, "state-space")
    for _ in range(10):
        coords = rng.random((cfg.states, 2))
        if np.unique(coords, axis=0).shape[0] == cfg.states:
            return StateSpace(coords)
    raise GenerationError("could not draw distinct state coordinates")


def _geometric_graph(space: StateSpace, radius: float):
    """(transition probabilities, edge lengths) of the radius graph.

    Edge weight is inversely proportional to length, rows normalized;
    isolated states get a probability-1 self loop (length stays empty).
    """
    n = space.n_states
    pairs = cKDTree(space.coords).query_pairs(radius, output_type="ndarray")
    if pairs.size:
        d = np.linalg.norm(
            space.coords[pairs[:, 0]] - space.coords[pairs[:, 1]], axis=1
        )
        strict = d < radius
        pairs, d = pairs[strict], d[strict]
    rows = np.concatenate([pairs[:, 0], pairs[:, 1]]) if pairs.size else np.array([], int)
    cols = np.concatenate([pairs[:, 1], pairs[:, 0]]) if pairs.size else np.array([], int)
    lengths_data = np.concatenate([d, d]) if pairs.size else np.array([])
    weights = sparse.csr_matrix((1.0 / lengths_data, (rows, cols)), shape=(n, n)) \
        if rows.size else sparse.csr_matrix((n, n))
    lengths = sparse.csr_matrix((lengths_data, (rows, cols)), shape=(n, n)) \
        if rows.size else sparse.csr_matrix((n, n))
    sums = np.asarray(weights.sum(axis=1)).ravel()
    isolated = np.nonzero(sums == 0)[0]
    inv = np.ones_like(sums)
    inv[sums > 0] = 1.0 / sums[sums > 0]
    probs = weights.copy()
    probs.data = probs.data * np.repeat(inv, np.diff(probs.indptr))
    if isolated.size:
        probs = (probs + sparse.csr_matrix(
            (np.ones(isolated.size), (isolated, isolated)), shape=(n, n)
        )).tocsr()
    return probs, lengths


def gen_transitions(cfg: GenConfig, space: StateSpace) -> sparse.csr_matrix:
    """Row-stochastic transition matrix of the random geometric graph."""
    probs, _ = _geometric_graph(
        space, connection_radius(space.n_states, cfg.branching)
    )
    return probs


def _shortest_path(lengths, predecessors_cache, source: int, target: int):
    """Node sequence source..target, or None when disconnected."""
    pred = predecessors_cache.get(source)
    if pred is None:
        _, pred = dijkstra(lengths, indices=source, return_predecessors=True)
        predecessors_cache[source] = pred
    if source != target and pred[target] < 0:
        return None
    path = [target]
    while path[-1] != source:
        path.append(int(pred[path[-1]]))
    path.reverse()
    return path


def _neighbors(lengths, state: int):
    lo, hi = lengths.indptr[state], lengths.indptr[state + 1]
    return lengths.indices[lo:hi]


def gen_object(cfg: GenConfig, space: StateSpace, model: MarkovModel,
               lengths: sparse.csr_matrix, index: int):
    """One object: near-shortest waypoint trace, subsampled observations.

    Returns (UncertainObject, ground-truth Trajectory). The trace advances
    one graph edge per tick, so consecutive observations are always
    connected by a positive-probability path of exactly the elapsed ticks.
    """
    rng = _stream(cfg.seed, f"object-{index}")
    n = space.n_states
    pred_cache = {}
    detour_period = cfg.detour_period

    start = int(rng.integers(n))
    path = [start]
    route = []  # remaining planned nodes toward the current waypoint
    target = start
    since_turn = 0
    attempts = 0
    while len(path) - 1 < cfg.lifetime:
        if not route:
            target = int(rng.integers(n))
            found = _shortest_path(lengths, pred_cache, path[-1], target)
            if found is None or len(found) < 2:
                attempts += 1
                if attempts > 100:
                    raise GenerationError(
                        f"object {index}: no routable waypoint from state {path[-1]}"
                    )
                continue
            attempts = 0
            route = found[1:]
        if detour_period and since_turn + 1 >= detour_period:
            nbrs = _neighbors(lengths, path[-1])
            off_route = nbrs[nbrs != route[0]]
            if off_route.size:
                wrong = int(off_route[rng.integers(off_route.size)])
                path.append(wrong)
                since_turn = 0
                found = _shortest_path(lengths, pred_cache, wrong, target)
                route = found[1:] if found is not None and len(found) > 1 else []
                continue
        path.append(route.pop(0))
        since_turn += 1

    path = path[: cfg.lifetime + 1]
    offset = int(rng.integers(0, cfg.horizon - cfg.lifetime + 1))
    step = cfg.obs_node_step
    observations = tuple(
        (offset + k, path[k]) for k in range(0, cfg.lifetime + 1, step)
    )
    obj = UncertainObject(f"o{index:0{len(str(cfg.objects - 1))}d}",
                          observations, model)
    truth = Trajectory(obj.id, offset, np.array(path))
    return obj, truth


def gen_database(cfg: GenConfig):
    """Full synthetic database plus ground truth (object id -> Trajectory)."""
    space = gen_state_space(cfg)
    probs, lengths = _geometric_graph(space, connection_radius(cfg.states, cfg.branching))
    model = MarkovModel.homogeneous(probs)
    objects, truths = [], {}
    for i in range(cfg.objects):
        obj, truth = gen_object(cfg, space, model, lengths, i)
        objects.append(obj)
        truths[obj.id] = truth
    return TrajectoryDatabase(space, cfg.horizon, tuple(objects)), truths

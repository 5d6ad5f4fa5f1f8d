"""Core data model: discrete state spaces, Markov transition models,
observation sequences, and a-priori distribution propagation.

Objects live on a finite set of d-dimensional states and move once per
integer tick according to a row-stochastic transition matrix (one shared
matrix, or one per tick). Between their certain (time, state) observations
their position is uncertain.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence, Union

import numpy as np
from scipy import sparse

from .errors import ModelError, SpanError

# Tolerance for row-stochasticity / unit-mass checks. Validation rejects,
# it never silently renormalizes.
STOCHASTIC_TOL = 1e-9

# Probability mass below this is treated as exactly zero (unreachable).
MASS_FLOOR = 1e-300


class Observation(NamedTuple):
    time: int
    state: int


@dataclass(frozen=True, eq=False)
class StateSpace:
    """Finite ordered set of points in R^d with a distance function.

    ``coords`` has one row per state. ``metric`` defaults to Euclidean;
    a custom callable ``metric(p, q) -> float`` may be supplied (slow path).
    """

    coords: np.ndarray
    metric: Optional[Callable[[np.ndarray, np.ndarray], float]] = None

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=float)
        if coords.ndim == 1:
            coords = coords[:, None]
        if coords.ndim != 2 or coords.shape[0] < 1:
            raise ModelError("state space needs at least one d-dimensional point")
        if np.unique(coords, axis=0).shape[0] != coords.shape[0]:
            raise ModelError("state coordinates must be pairwise distinct")
        object.__setattr__(self, "coords", coords)

    @property
    def n_states(self) -> int:
        return self.coords.shape[0]

    @property
    def dim(self) -> int:
        return self.coords.shape[1]

    def point(self, i: int) -> np.ndarray:
        return self.coords[i]

    def distance(self, i: int, j: int) -> float:
        if self.metric is not None:
            return float(self.metric(self.coords[i], self.coords[j]))
        return float(np.linalg.norm(self.coords[i] - self.coords[j]))

    def distances_to(self, point: np.ndarray) -> np.ndarray:
        """Distances from every state to ``point`` (length n_states)."""
        point = np.asarray(point, dtype=float)
        if self.metric is not None:
            return np.array([self.metric(c, point) for c in self.coords])
        return np.linalg.norm(self.coords - point[None, :], axis=1)


@dataclass(frozen=True)
class TimeDomain:
    """Consecutive integer timestamps 0..horizon."""

    horizon: int

    def __post_init__(self):
        if self.horizon < 0:
            raise ModelError("horizon must be >= 0")

    def __contains__(self, t) -> bool:
        return 0 <= t <= self.horizon


def _as_csr(matrix) -> sparse.csr_matrix:
    m = sparse.csr_matrix(matrix, dtype=float)
    if m.shape[0] != m.shape[1]:
        raise ModelError(f"transition matrix must be square, got {m.shape}")
    return m


class MarkovModel:
    """Per-tick (or single shared) row-stochastic transition matrices.

    Row = source state, column = target state. A homogeneous model stores
    one matrix applied at every tick; an inhomogeneous model stores one
    matrix per tick tag.
    """

    def __init__(self, matrices: Union[dict, "sparse.spmatrix", np.ndarray]):
        if isinstance(matrices, dict):
            self._by_tick = {int(t): _as_csr(m) for t, m in matrices.items()}
            if not self._by_tick:
                raise ModelError("inhomogeneous model needs at least one matrix")
            sizes = {m.shape[0] for m in self._by_tick.values()}
            if len(sizes) != 1:
                raise ModelError("all transition matrices must share one state space")
            self._shared = None
            self._n = sizes.pop()
        else:
            self._shared = _as_csr(matrices)
            self._by_tick = None
            self._n = self._shared.shape[0]
        self._support_cache = {}

    @classmethod
    def homogeneous(cls, matrix) -> "MarkovModel":
        return cls(matrix)

    @classmethod
    def inhomogeneous(cls, by_tick: dict) -> "MarkovModel":
        return cls(dict(by_tick))

    @property
    def is_homogeneous(self) -> bool:
        return self._shared is not None

    @property
    def n_states(self) -> int:
        return self._n

    def matrix_at(self, t: int) -> sparse.csr_matrix:
        if self._shared is not None:
            return self._shared
        try:
            return self._by_tick[int(t)]
        except KeyError:
            raise ModelError(f"no transition matrix tagged for tick {t}") from None

    def support_at(self, t: int) -> sparse.csr_matrix:
        """Boolean adjacency of positive-probability transitions at tick t."""
        key = None if self._shared is not None else int(t)
        cached = self._support_cache.get(key)
        if cached is None:
            m = self.matrix_at(t)
            cached = sparse.csr_matrix(
                (np.ones(m.nnz, dtype=bool), m.indices.copy(), m.indptr.copy()),
                shape=m.shape,
            )
            cached.eliminate_zeros()
            self._support_cache[key] = cached
        return cached

    def tags(self):
        """Tick tags carrying a matrix; ``None`` marks the shared matrix."""
        if self._shared is not None:
            return [None]
        return sorted(self._by_tick)


@dataclass(frozen=True, eq=False)
class UncertainObject:
    """An object id plus its time-ordered certain observations and model."""

    id: str
    observations: tuple
    model: MarkovModel

    def __post_init__(self):
        obs = tuple(Observation(int(t), int(s)) for t, s in self.observations)
        if not obs:
            raise ModelError(f"object {self.id!r} needs at least one observation")
        times = [o.time for o in obs]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ModelError(
                f"object {self.id!r}: observation times must be strictly increasing"
            )
        object.__setattr__(self, "observations", obs)

    @property
    def first_time(self) -> int:
        return self.observations[0].time

    @property
    def last_time(self) -> int:
        return self.observations[-1].time

    @property
    def obs_times(self):
        return tuple(o.time for o in self.observations)

    def observation_at(self, t: int) -> Optional[int]:
        for o in self.observations:
            if o.time == t:
                return o.state
        return None

    def covers(self, times) -> bool:
        """True iff every timestamp lies within [first, last] observation."""
        return all(self.first_time <= t <= self.last_time for t in times)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """A certain path: one state per tick over a contiguous time range."""

    object_id: Optional[str]
    start_time: int
    states: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "states", np.asarray(self.states, dtype=np.int64))

    @property
    def end_time(self) -> int:
        return self.start_time + len(self.states) - 1

    def state_at(self, t: int) -> int:
        if not self.start_time <= t <= self.end_time:
            raise SpanError(
                f"trajectory {self.object_id!r} undefined at t={t} "
                f"(covers [{self.start_time}, {self.end_time}])"
            )
        return int(self.states[t - self.start_time])

    def covers(self, times) -> bool:
        return all(self.start_time <= t <= self.end_time for t in times)


@dataclass(frozen=True, eq=False)
class Query:
    """A certain reference state (index) or trajectory, query times, threshold."""

    q: Union[int, Trajectory]
    times: tuple
    tau: float = 0.0

    def __post_init__(self):
        times = tuple(sorted({int(t) for t in self.times}))
        if not times:
            raise ModelError("query needs at least one timestamp")
        if not 0.0 <= self.tau <= 1.0:
            raise ModelError(f"tau must lie in [0, 1], got {self.tau}")
        object.__setattr__(self, "times", times)


def query_coords(q, t: int, space: StateSpace) -> np.ndarray:
    """Spatial position of the query at time t."""
    if isinstance(q, Trajectory):
        return space.point(q.state_at(t))
    return space.point(int(q))


def query_distance_table(space: StateSpace, q, times) -> dict:
    """Per query time, the distances of every state to the query position."""
    return {t: space.distances_to(query_coords(q, t, space)) for t in times}


@dataclass(eq=False)
class TrajectoryDatabase:
    """All uncertain objects over one state space and time domain."""

    space: StateSpace
    horizon: int
    objects: tuple

    def __post_init__(self):
        self.objects = tuple(self.objects)

    def __iter__(self):
        return iter(self.objects)

    def __len__(self):
        return len(self.objects)

    def by_id(self, object_id: str) -> UncertainObject:
        for o in self.objects:
            if o.id == object_id:
                return o
        raise KeyError(object_id)

    def covering(self, times):
        """Objects whose observation span contains every query timestamp."""
        return [o for o in self.objects if o.covers(times)]

    def models(self):
        """Distinct MarkovModel instances referenced by the objects."""
        seen, out = set(), []
        for o in self.objects:
            if id(o.model) not in seen:
                seen.add(id(o.model))
                out.append(o.model)
        return out


def point_mass(n: int, state: int) -> np.ndarray:
    vec = np.zeros(n)
    vec[state] = 1.0
    return vec


def propagate(dist: np.ndarray, matrix) -> np.ndarray:
    """One forward transition: returns matrix^T . dist."""
    dist = np.asarray(dist, dtype=float)
    if sparse.issparse(matrix):
        if matrix.shape[0] != dist.size:
            raise ModelError(
                f"dimension mismatch: matrix {matrix.shape}, vector {dist.size}"
            )
        return matrix.T @ dist
    matrix = np.asarray(matrix, dtype=float)
    if matrix.shape != (dist.size, dist.size):
        raise ModelError(
            f"dimension mismatch: matrix {matrix.shape}, vector {dist.size}"
        )
    return matrix.T @ dist


def a_priori_distribution(o: UncertainObject, t: int) -> np.ndarray:
    """Distribution of o at time t given only observations up to t.

    Point mass at the most recent observation, propagated forward with the
    a-priori matrices. An observation exactly at t yields its point mass.
    Timestamps before the first observation are undefined.
    """
    times = [obs.time for obs in o.observations]
    k = bisect_right(times, t) - 1
    if k < 0:
        raise SpanError(
            f"object {o.id!r} has no observation at or before t={t}"
        )
    t0, s0 = o.observations[k]
    dist = point_mass(o.model.n_states, s0)
    for u in range(t0, t):
        dist = propagate(dist, o.model.matrix_at(u))
    return dist


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str
    object_id: Optional[str] = None
    time: Optional[int] = None

    def __str__(self):
        return f"[{self.kind}] {self.message}"


def check_transition_matrix(matrix, tag="all t", tol=STOCHASTIC_TOL):
    """Row-sum and entry-range diagnostics for one transition matrix."""
    out = []
    m = matrix.tocsr() if sparse.issparse(matrix) else sparse.csr_matrix(matrix)
    if np.any(m.data < 0) or np.any(m.data > 1 + tol):
        bad = int(np.argmax((m.data < 0) | (m.data > 1 + tol)))
        row = int(np.searchsorted(m.indptr, bad, side="right") - 1)
        out.append(
            Violation(
                "entry-range",
                f"matrix[{tag}] row {row}: entry {m.data[bad]!r} outside [0, 1]",
            )
        )
    sums = np.asarray(m.sum(axis=1)).ravel()
    for row in np.nonzero(np.abs(sums - 1.0) > tol)[0]:
        out.append(
            Violation(
                "row-sum",
                f"matrix[{tag}] row {int(row)}: sum {sums[row]!r} != 1 "
                f"(tolerance {tol})",
            )
        )
    return out


def _reachable_in_exact_steps(model: MarkovModel, start: int, t0: int, steps: int):
    """Boolean frontier of states reachable from ``start`` in exactly ``steps``."""
    frontier = np.zeros(model.n_states, dtype=bool)
    frontier[start] = True
    for k in range(steps):
        frontier = (model.support_at(t0 + k).T @ frontier.astype(float)) > 0
    return frontier


def validate(db: TrajectoryDatabase):
    """Diagnostics for a whole database; empty list iff all invariants hold.

    Reports duplicate object ids, malformed transition matrices, observations
    outside the time domain or state space, and observations unreachable from
    their predecessor in exactly the elapsed number of ticks.
    """
    out = []
    seen = set()
    for o in db.objects:
        if o.id in seen:
            out.append(
                Violation("duplicate-id", f"object id {o.id!r} appears twice", o.id)
            )
        seen.add(o.id)

    checked_models = set()
    for o in db.objects:
        if id(o.model) in checked_models:
            continue
        checked_models.add(id(o.model))
        if o.model.n_states != db.space.n_states:
            out.append(
                Violation(
                    "dimension",
                    f"model of object {o.id!r} has {o.model.n_states} states, "
                    f"space has {db.space.n_states}",
                    o.id,
                )
            )
            continue
        for tag in o.model.tags():
            matrix = o.model.matrix_at(tag if tag is not None else 0)
            out.extend(
                check_transition_matrix(matrix, "all t" if tag is None else tag)
            )

    domain = TimeDomain(db.horizon)
    for o in db.objects:
        for obs in o.observations:
            if obs.time not in domain:
                out.append(
                    Violation(
                        "obs-domain",
                        f"object {o.id!r}: observation time {obs.time} outside "
                        f"[0, {db.horizon}]",
                        o.id,
                    )
                )
            if not 0 <= obs.state < db.space.n_states:
                out.append(
                    Violation(
                        "obs-domain",
                        f"object {o.id!r}: observation state {obs.state} outside "
                        f"state space",
                        o.id,
                    )
                )
        if o.model.n_states != db.space.n_states:
            continue
        for prev, nxt in zip(o.observations, o.observations[1:]):
            if not (0 <= prev.state < db.space.n_states):
                continue
            frontier = _reachable_in_exact_steps(
                o.model, prev.state, prev.time, nxt.time - prev.time
            )
            if not (0 <= nxt.state < db.space.n_states) or not frontier[nxt.state]:
                out.append(
                    Violation(
                        "unreachable",
                        f"object {o.id!r}: state {nxt.state}@t={nxt.time} is not "
                        f"reachable from {prev.state}@t={prev.time} in exactly "
                        f"{nxt.time - prev.time} steps",
                        o.id,
                        nxt.time,
                    )
                )
    return out

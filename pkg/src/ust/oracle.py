"""Exhaustive possible-worlds reference used by tests and acceptance checks.

Every observation-consistent path of an object over its span is enumerated
and weighted by the normalized product of its a-priori transition
probabilities; queries are then answered by summing world weights. No
shortcuts, no shared code with the production query paths: this module is
deliberately slow and obviously correct, guarded against large instances.
"""

from __future__ import annotations

from functools import reduce
from itertools import combinations

import numpy as np

from .errors import ConsistencyError, ParameterError, SpanError, TooLargeError
from .model import (
    TrajectoryDatabase,
    UncertainObject,
    a_priori_distribution,
    query_distance_table,
)

DEFAULT_GUARD = 1_000_000


def enumerate_paths(o: UncertainObject, window=None, guard=DEFAULT_GUARD):
    """All observation-consistent paths of ``o`` over ``window`` (default: span).

    Returns a list of (state tuple, weight); one state per tick from window
    start to window end inclusive. Weights are products of a-priori
    transition probabilities (times the a-priori distribution at the window
    start), normalized to sum to 1.
    """
    start, end = window if window is not None else (o.first_time, o.last_time)
    if start > end:
        raise SpanError(f"empty window [{start}, {end}]")
    obs_at = {obs.time: obs.state for obs in o.observations if start <= obs.time <= end}
    init = a_priori_distribution(o, start)

    paths = []
    # stack of (time, path so far, unnormalized weight)
    stack = [
        ((int(s),), float(init[s]))
        for s in np.nonzero(init)[0]
        if obs_at.get(start, s) == s
    ]
    while stack:
        path, weight = stack.pop()
        t = start + len(path) - 1
        if t == end:
            paths.append((path, weight))
            if len(paths) > guard:
                raise TooLargeError(
                    f"more than {guard} consistent paths for object {o.id!r}"
                )
            continue
        matrix = o.model.matrix_at(t)
        row = matrix.getrow(path[-1])
        want = obs_at.get(t + 1)
        for j, p in zip(row.indices, row.data):
            if p <= 0.0 or (want is not None and j != want):
                continue
            stack.append((path + (int(j),), weight * p))
    total = sum(w for _, w in paths)
    if total <= 0.0:
        raise ConsistencyError(o.id, start, f"object {o.id!r} has no consistent path")
    return [(path, w / total) for path, w in paths]


def _path_arrays(paths):
    states = np.array([p for p, _ in paths], dtype=np.int64)
    weights = np.array([w for _, w in paths])
    return states, weights


def _distances(states, start, dist_by_t, times):
    """(paths x query times) distance matrix for one enumerated path set."""
    cols = [dist_by_t[t][states[:, t - start]] for t in times]
    return np.stack(cols, axis=1)


def _pair_always_closer(d_cand, w_cand, d_comp, w_comp):
    """P(candidate at least as close as competitor at every query time)."""
    beats = np.all(d_cand[:, None, :] <= d_comp[None, :, :], axis=2)
    return float(w_cand @ beats @ w_comp)


def world_count(db: TrajectoryDatabase, T, guard=DEFAULT_GUARD):
    """Number of joint worlds over the objects covering T (guard-checked)."""
    total = 1
    for o in db.covering(T):
        total *= len(enumerate_paths(o, guard=guard))
        if total > guard:
            raise TooLargeError(f"more than {guard} possible worlds")
    return total


def oracle_pann(o: UncertainObject, q, db: TrajectoryDatabase, T,
                guard=DEFAULT_GUARD) -> float:
    """Probability that ``o`` is nearest to q at every time of T.

    Factorizes over competitors: each pairwise always-closer probability is
    computed by full enumeration of the two path sets, then the factors are
    multiplied. Ties in distance count for the candidate.
    """
    T = tuple(sorted(T))
    if not o.covers(T):
        raise SpanError(f"T outside observation span of object {o.id!r}")
    dist_by_t = query_distance_table(db.space, q, T)
    cand_states, cand_weights = _path_arrays(enumerate_paths(o, guard=guard))
    d_cand = _distances(cand_states, o.first_time, dist_by_t, T)
    prob = 1.0
    for comp in sorted(db.covering(T), key=lambda c: c.id):
        if comp.id == o.id:
            continue
        comp_states, comp_weights = _path_arrays(enumerate_paths(comp, guard=guard))
        if len(cand_weights) * len(comp_weights) > guard:
            raise TooLargeError(f"more than {guard} pair worlds for ({o.id}, {comp.id})")
        d_comp = _distances(comp_states, comp.first_time, dist_by_t, T)
        prob *= _pair_always_closer(d_cand, cand_weights, d_comp, comp_weights)
    return prob


def oracle_penn(o: UncertainObject, q, db: TrajectoryDatabase, T,
                guard=DEFAULT_GUARD) -> float:
    """Probability that ``o`` is nearest to q at at least one time of T.

    Enumerates the full joint world space (all combinations of consistent
    paths of every object covering T) and sums the weights of worlds where
    the candidate beats every competitor at some query time.
    """
    T = tuple(sorted(T))
    if not o.covers(T):
        raise SpanError(f"T outside observation span of object {o.id!r}")
    dist_by_t = query_distance_table(db.space, q, T)
    others = [c for c in sorted(db.covering(T), key=lambda c: c.id) if c.id != o.id]

    cand_states, cand_weights = _path_arrays(enumerate_paths(o, guard=guard))
    d_cand = _distances(cand_states, o.first_time, dist_by_t, T)
    comp_dists, comp_weights = [], []
    total = len(cand_weights)
    for comp in others:
        states, weights = _path_arrays(enumerate_paths(comp, guard=guard))
        total *= len(weights)
        if total > guard:
            raise TooLargeError(f"more than {guard} possible worlds")
        comp_dists.append(_distances(states, comp.first_time, dist_by_t, T))
        comp_weights.append(weights)

    shape = (len(cand_weights),) + tuple(len(w) for w in comp_weights)
    hit_somewhere = np.zeros(shape, dtype=bool)
    for col in range(len(T)):
        hit_here = np.ones(shape, dtype=bool)
        d0 = d_cand[:, col].reshape((-1,) + (1,) * len(others))
        for k, d_comp in enumerate(comp_dists):
            expand = [1] * (len(others) + 1)
            expand[k + 1] = -1
            hit_here &= d0 <= d_comp[:, col].reshape(expand)
        hit_somewhere |= hit_here
    joint_weights = reduce(np.multiply.outer, comp_weights, cand_weights)
    return float((hit_somewhere * joint_weights).sum())


def oracle_pcnn_object(q, o: UncertainObject, db: TrajectoryDatabase, T, tau,
                       guard=DEFAULT_GUARD):
    """All maximal subsets of T on which ``o`` qualifies, by subset scan."""
    if tau <= 0.0:
        raise ParameterError("pcnn requires tau > 0")
    T = tuple(sorted(T))
    qualifying = {}
    for k in range(1, len(T) + 1):
        for subset in combinations(T, k):
            p = oracle_pann(o, q, db, subset, guard=guard)
            if p >= tau:
                qualifying[frozenset(subset)] = p
    maximal = [
        (tuple(sorted(s)), p)
        for s, p in qualifying.items()
        if not any(s < other for other in qualifying)
    ]
    maximal.sort(key=lambda item: (-item[1], item[0]))
    return maximal


def oracle_pcnn(q, db: TrajectoryDatabase, T, tau, guard=DEFAULT_GUARD):
    """(object id, timestamp set, probability) rows over every covering object."""
    rows = []
    for o in sorted(db.covering(T), key=lambda c: c.id):
        for subset, p in oracle_pcnn_object(q, o, db, T, tau, guard=guard):
            rows.append((o.id, subset, p))
    rows.sort(key=lambda r: (-r[2], r[0], r[1]))
    return rows

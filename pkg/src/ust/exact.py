"""Exact always-nearest-neighbor probabilities and the continuous miner.

The pairwise engine tracks two sparse joint matrices over (candidate state,
competitor state): a hit matrix holding the mass of worlds where the
candidate has been at least as close to the query at every query time so
far, and a drop matrix holding the rest. Per tick both are transitioned by
the two objects' a-priori matrices; at query times mass whose competitor
state is strictly closer moves from hit to drop; at observation times both
matrices are restricted and renormalized. Database-level probabilities
multiply the pairwise factors over all competing objects.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from . import oracle as _oracle
from .errors import ConsistencyError, ParameterError, SpanError
from .model import (
    MASS_FLOOR,
    StateSpace,
    TrajectoryDatabase,
    UncertainObject,
    a_priori_distribution,
    query_coords,
    query_distance_table,
)

_EPS = float(np.finfo(float).eps)


@dataclass(frozen=True, eq=False)
class IndicatorMatrix:
    """Pairwise closer-to-query test at one time: entry (i, j) is true iff
    state i is at least as close to q(t) as state j (ties count as hits)."""

    dists: np.ndarray
    time: int

    def dense(self) -> np.ndarray:
        return self.dists[:, None] <= self.dists[None, :]

    def hits(self, rows, cols) -> np.ndarray:
        return self.dists[rows] <= self.dists[cols]


def indicator(q, t: int, space: StateSpace) -> IndicatorMatrix:
    return IndicatorMatrix(space.distances_to(query_coords(q, t, space)), t)


@dataclass(eq=False)
class PairState:
    """Hit/drop matrices of one candidate/competitor pair at one tick."""

    hit: sparse.csr_matrix
    drop: sparse.csr_matrix
    time: int

    @property
    def total_mass(self) -> float:
        return float(self.hit.sum() + self.drop.sum())


def _sparse_outer(a: np.ndarray, b: np.ndarray) -> sparse.csr_matrix:
    ia = np.nonzero(a > 0.0)[0]
    jb = np.nonzero(b > 0.0)[0]
    data = np.outer(a[ia], b[jb]).ravel()
    rows = np.repeat(ia, jb.size)
    cols = np.tile(jb, ia.size)
    return sparse.csr_matrix((data, (rows, cols)), shape=(a.size, b.size))


def _split_by_indicator(matrix: sparse.csr_matrix, dq: np.ndarray):
    """Split joint mass into (still hitting, newly dropped) under dq."""
    coo = matrix.tocoo()
    hits = dq[coo.row] <= dq[coo.col]
    shape = coo.shape
    kept = sparse.csr_matrix(
        (coo.data[hits], (coo.row[hits], coo.col[hits])), shape=shape
    )
    dropped = sparse.csr_matrix(
        (coo.data[~hits], (coo.row[~hits], coo.col[~hits])), shape=shape
    )
    return kept, dropped


def _restrict(matrix: sparse.csr_matrix, row=None, col=None) -> sparse.csr_matrix:
    """Zero out all entries outside the observed row and/or column."""
    coo = matrix.tocoo()
    keep = np.ones(coo.nnz, dtype=bool)
    if row is not None:
        keep &= coo.row == row
    if col is not None:
        keep &= coo.col == col
    return sparse.csr_matrix(
        (coo.data[keep], (coo.row[keep], coo.col[keep])), shape=coo.shape
    )


def pann_pair(o: UncertainObject, q, other: UncertainObject, T,
              space: StateSpace, *, trace=None) -> float:
    """Probability that ``o`` is at least as close to q as ``other`` at
    every time of T.

    The induction runs from min(T) through the later of the two observation
    spans so that every observation of either object is conditioned on;
    closeness shifts are applied at query times only. ``trace``, if given a
    list, collects (t, hit mass, drop mass) after every step.
    """
    T = tuple(sorted(T))
    if o.id == other.id:
        raise ParameterError("pann_pair needs two distinct objects")
    for obj in (o, other):
        if not obj.covers(T):
            raise SpanError(f"T outside observation span of object {obj.id!r}")
    t_start = T[0]
    t_end = max(o.last_time, other.last_time)
    in_T = set(T)
    dq = query_distance_table(space, q, T)
    obs_o = {t: s for t, s in o.observations if t_start < t <= t_end}
    obs_c = {t: s for t, s in other.observations if t_start < t <= t_end}

    joint = _sparse_outer(
        a_priori_distribution(o, t_start), a_priori_distribution(other, t_start)
    )
    hit, drop = _split_by_indicator(joint, dq[t_start])
    if trace is not None:
        trace.append((t_start, float(hit.sum()), float(drop.sum())))

    for t in range(t_start + 1, t_end + 1):
        m_o = o.model.matrix_at(t - 1)
        m_c = other.model.matrix_at(t - 1)
        hit = (m_o.T @ hit @ m_c).tocsr()
        drop = (m_o.T @ drop @ m_c).tocsr()
        if t in in_T:
            hit, newly_dropped = _split_by_indicator(hit, dq[t])
            drop = (drop + newly_dropped).tocsr()
        row, col = obs_o.get(t), obs_c.get(t)
        if row is not None or col is not None:
            hit = _restrict(hit, row, col)
            drop = _restrict(drop, row, col)
            denom = hit.sum() + drop.sum()
            if denom <= MASS_FLOOR:
                raise ConsistencyError(o.id if row is not None else other.id, t)
            hit.data /= denom
            drop.data /= denom
        if trace is not None:
            trace.append((t, float(hit.sum()), float(drop.sum())))

    mass_hit = float(hit.sum())
    mass_drop = float(drop.sum())
    return mass_hit / (mass_hit + mass_drop)


def pann(o: UncertainObject, q, db: TrajectoryDatabase, T, *,
         influence=None, threads=None) -> float:
    """Probability that ``o`` is nearest to q over the entire set T.

    Product of the pairwise factors over every competitor whose span covers
    T (optionally restricted to an influence id set; factors outside it are
    exactly 1). Returns 0.0 as soon as the running product falls below
    machine epsilon.
    """
    T = tuple(sorted(T))
    if not o.covers(T):
        raise SpanError(f"T outside observation span of object {o.id!r}")
    competitors = [c for c in db.covering(T) if c.id != o.id]
    if influence is not None:
        allowed = set(influence)
        competitors = [c for c in competitors if c.id in allowed]
    competitors.sort(key=lambda c: c.id)

    if threads and threads > 1 and len(competitors) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            factors = list(
                pool.map(lambda c: pann_pair(o, q, c, T, db.space), competitors)
            )
    else:
        factors = None

    prob = 1.0
    for k, comp in enumerate(competitors):
        prob *= factors[k] if factors is not None else pann_pair(
            o, q, comp, T, db.space
        )
        if prob < _EPS:
            return 0.0
    return prob


def pann_query(q, db: TrajectoryDatabase, T, tau, *, index=None, threads=None):
    """All objects whose always-nearest probability reaches tau.

    With an index, candidates come from its candidate set and each product
    is restricted to the influence set; results are identical to the
    unpruned evaluation. Rows are (object id, probability), sorted by
    descending probability then id.
    """
    T = tuple(sorted(T))
    if not 0.0 <= tau <= 1.0:
        raise ParameterError(f"tau must lie in [0, 1], got {tau}")
    if index is not None:
        candidate_ids = sorted(index.candidates_forall(q, T))
        influence = index.influence_set(q, T)
    else:
        candidate_ids = sorted(o.id for o in db.covering(T))
        influence = None
    rows = []
    for oid in candidate_ids:
        p = pann(db.by_id(oid), q, db, T, influence=influence, threads=threads)
        if p >= tau and p > 0.0:
            rows.append((oid, p))
    rows.sort(key=lambda r: (-r[1], r[0]))
    return rows


def apriori_candidates(prev_level, k: int):
    """k-sets of timestamps whose every (k-1)-subset qualified previously."""
    prev = set(prev_level)
    items = sorted({t for s in prev for t in s})
    extended = set()
    for s in prev:
        for t in items:
            if t not in s:
                extended.add(frozenset(s | {t}))
    return sorted(
        (c for c in extended if all(c - {t} in prev for t in c)),
        key=sorted,
    )


def pcnn_object(q, o: UncertainObject, db: TrajectoryDatabase, T, tau, *,
                influence=None, threads=None, cache=None):
    """Maximal subsets of T on which ``o`` stays nearest with probability
    >= tau, mined level-wise.

    Candidate k-sets are generated only from qualifying (k-1)-sets
    (downward closure of the monotone probability). Timestamps whose
    singleton probability is exactly 1 are stripped before evaluating a
    larger set, which leaves the probability unchanged. ``cache`` maps
    frozen timestamp sets to probabilities and may be shared across calls
    with the same (o, q, db).
    """
    if tau <= 0.0:
        raise ParameterError(
            "pcnn requires tau > 0; at tau = 0 every subset of T qualifies"
        )
    T = tuple(sorted(T))
    if cache is None:
        cache = {}

    def prob_of(timeset: frozenset) -> float:
        hit = cache.get(timeset)
        if hit is None:
            hit = pann(o, q, db, tuple(sorted(timeset)),
                       influence=influence, threads=threads)
            cache[timeset] = hit
        return hit

    always_one = set()
    level = {}
    for t in T:
        p = prob_of(frozenset((t,)))
        if p == 1.0:
            always_one.add(t)
        if p >= tau:
            level[frozenset((t,))] = p

    qualifying = dict(level)
    k = 2
    while level and k <= len(T):
        next_level = {}
        for cand in apriori_candidates(level, k):
            reduced = frozenset(cand - always_one)
            p = 1.0 if not reduced else prob_of(reduced)
            if p >= tau:
                next_level[cand] = p
        qualifying.update(next_level)
        level = next_level
        k += 1

    maximal = [
        (tuple(sorted(s)), p)
        for s, p in qualifying.items()
        if not any(s < other for other in qualifying)
    ]
    maximal.sort(key=lambda item: (-item[1], item[0]))
    return maximal


def pcnn_query(q, db: TrajectoryDatabase, T, tau, *, index=None, threads=None):
    """(object id, timestamp set, probability) rows over all candidates."""
    if tau <= 0.0:
        raise ParameterError(
            "pcnn requires tau > 0; at tau = 0 every subset of T qualifies"
        )
    T = tuple(sorted(T))
    if index is not None:
        candidate_ids = sorted(index.candidates_exists(q, T))
        influence = index.influence_set(q, T, candidate_ids=candidate_ids)
    else:
        candidate_ids = sorted(o.id for o in db.covering(T))
        influence = None
    rows = []
    for oid in candidate_ids:
        o = db.by_id(oid)
        for subset, p in pcnn_object(q, o, db, T, tau,
                                     influence=influence, threads=threads):
            rows.append((oid, subset, p))
    rows.sort(key=lambda r: (-r[2], r[0], r[1]))
    return rows


def penn_exact_oracle(o: UncertainObject, q, db: TrajectoryDatabase, T,
                      guard=_oracle.DEFAULT_GUARD) -> float:
    """Sometime-nearest probability by exhaustive world enumeration.

    Exact evaluation is exponential in the database size, so this exists
    only for tiny, guard-checked instances; larger ones must use sampling.
    """
    return _oracle.oracle_penn(o, q, db, T, guard=guard)


def format_probability_rows(rows):
    """``object_id probability`` lines, 12 significant digits."""
    return [f"{oid} {p:.12g}" for oid, p in rows]


def format_pcnn_rows(rows):
    """``object_id t1,t2,... probability`` lines, 12 significant digits."""
    return [
        f"{oid} {','.join(str(t) for t in subset)} {p:.12g}"
        for oid, subset, p in rows
    ]

"""Trajectory sampling and Monte-Carlo query estimation.

Posterior sampling walks the adapted per-tick matrices, so every draw hits
every observation and is never rejected. The two rejection baselines sample
with the a-priori matrices instead (whole-span and segment-wise) and pay
for it in discarded attempts. Estimators evaluate the nearest-neighbor
predicates on batches of sampled worlds; per-object counter-based streams
keyed by (master seed, object id) make every estimate reproducible and
order-independent.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import exact as _exact
from .adaptation import AdaptationCache, AdaptedModel
from .errors import ParameterError, SpanError, UstError
from .model import (
    Trajectory,
    TrajectoryDatabase,
    UncertainObject,
    query_distance_table,
)


def object_stream(master_seed: int, object_id: str, salt: str = "") -> np.random.Generator:
    """Counter-based generator for one object, derived from the master seed."""
    digest = int.from_bytes(
        hashlib.sha256(f"{object_id}/{salt}".encode()).digest()[:8], "big"
    )
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(entropy=(int(master_seed), digest)))
    )


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


def hoeffding_samples(epsilon: float, delta: float) -> int:
    """Samples needed for |estimate - truth| <= epsilon with confidence 1 - delta."""
    if not 0.0 < epsilon < 1.0 or not 0.0 < delta < 1.0:
        raise ParameterError(
            f"need 0 < epsilon < 1 and 0 < delta < 1, got {epsilon}, {delta}"
        )
    return math.ceil(math.log(2.0 / delta) / (2.0 * epsilon * epsilon))


@dataclass(frozen=True)
class EstimatorReport:
    estimate: float
    samples: int
    epsilon: float
    delta: float


def _report(estimate: float, n: int, delta: float) -> EstimatorReport:
    epsilon = math.sqrt(math.log(2.0 / delta) / (2.0 * n))
    return EstimatorReport(float(estimate), n, epsilon, delta)


@dataclass(frozen=True, eq=False)
class SampledWorld:
    """One certain trajectory per object, drawn jointly by sample index."""

    trajectories: dict

    def __getitem__(self, object_id: str) -> Trajectory:
        return self.trajectories[object_id]


def sample_trajectories(adapted: AdaptedModel, n: int, rng) -> np.ndarray:
    """n posterior draws as an (n, span length) state-index matrix."""
    rng = _as_rng(rng)
    start, end = adapted.span
    span_len = end - start + 1
    out = np.empty((n, span_len), dtype=np.int64)
    start_state = int(np.argmax(adapted.marginals[start]))
    current = np.full(n, start_state, dtype=np.int64)
    out[:, 0] = current
    for t in range(start, end):
        matrix = adapted.forward[t]
        nxt = np.empty(n, dtype=np.int64)
        for state in np.unique(current):
            mask = current == state
            lo, hi = matrix.indptr[state], matrix.indptr[state + 1]
            if lo == hi:
                raise UstError(
                    f"internal invariant violated: sampler of {adapted.object_id!r} "
                    f"reached state {state} at t={t} with no a-posteriori row"
                )
            targets = matrix.indices[lo:hi]
            cum = np.cumsum(matrix.data[lo:hi])
            draws = rng.random(int(mask.sum())) * cum[-1]
            nxt[mask] = targets[np.searchsorted(cum, draws, side="right")]
        current = nxt
        out[:, t - start + 1] = current
    return out


def sample_trajectory(adapted: AdaptedModel, seed) -> Trajectory:
    """One posterior draw; starts at the first observation, hits them all."""
    states = sample_trajectories(adapted, 1, seed)[0]
    return Trajectory(adapted.object_id, adapted.start, states)


def sample_world(db: TrajectoryDatabase, seed, object_ids=None,
                 cache: Optional[AdaptationCache] = None) -> SampledWorld:
    """Independent posterior draw for each object (or a subset of ids)."""
    cache = cache or AdaptationCache()
    wanted = set(object_ids) if object_ids is not None else None
    trajectories = {}
    for o in db.objects:
        if wanted is not None and o.id not in wanted:
            continue
        trajectories[o.id] = sample_trajectory(
            cache.get(o), object_stream(seed, o.id)
        )
    return SampledWorld(trajectories)


def _column_distances(states: np.ndarray, start: int, dist_by_t: dict, times):
    cols = [dist_by_t[t][states[:, t - start]] for t in times]
    return np.stack(cols, axis=1)


def _predicate_hits(o, q, db, T, n, seed, *, influence=None, sampler="posterior",
                    cache=None, salt=""):
    """(n, |T|) boolean matrix: candidate at least as close as every competitor."""
    T = tuple(sorted(T))
    if not o.covers(T):
        raise SpanError(f"T outside observation span of object {o.id!r}")
    cache = cache or AdaptationCache()
    competitors = [c for c in db.covering(T) if c.id != o.id]
    if influence is not None:
        allowed = set(influence)
        competitors = [c for c in competitors if c.id in allowed]
    dist_by_t = query_distance_table(db.space, q, T)

    def draw(obj):
        rng = object_stream(seed, obj.id, salt)
        if sampler == "posterior":
            return sample_trajectories(cache.get(obj), n, rng)
        if sampler in ("ts1", "ts2"):
            draw_one = (
                rejection_sampler_naive if sampler == "ts1"
                else rejection_sampler_segmented
            )
            rows = []
            for _ in range(n):
                result = draw_one(obj, rng)
                if result.trajectory is None:
                    raise UstError(f"rejection sampler exhausted on {obj.id!r}")
                rows.append(result.trajectory.states)
            return np.array(rows, dtype=np.int64)
        raise ParameterError(f"unknown sampler {sampler!r}")

    d_cand = _column_distances(draw(o), o.first_time, dist_by_t, T)
    closest_competitor = np.full_like(d_cand, np.inf)
    for comp in competitors:
        d_comp = _column_distances(draw(comp), comp.first_time, dist_by_t, T)
        np.minimum(closest_competitor, d_comp, out=closest_competitor)
    return d_cand <= closest_competitor


def estimate(kind: str, o: UncertainObject, q, db: TrajectoryDatabase, T,
             n: int, seed, *, influence=None, sampler="posterior",
             delta=0.05, cache=None) -> EstimatorReport:
    """Monte-Carlo estimate of the nearest-neighbor probability.

    ``kind`` is "forall" (nearest at every time of T) or "exists" (nearest
    at some time of T). The fraction of n sampled worlds satisfying the
    predicate is returned together with the Hoeffding half-width implied by
    (n, delta). Deterministic given (seed, instance).
    """
    if n < 1:
        raise ParameterError("need at least one sample")
    if kind not in ("forall", "exists"):
        raise ParameterError(f"unknown query kind {kind!r}")
    hits = _predicate_hits(o, q, db, T, n, seed, influence=influence,
                           sampler=sampler, cache=cache)
    ok = hits.all(axis=1) if kind == "forall" else hits.any(axis=1)
    return _report(ok.mean(), n, delta)


def estimate_pcnn(q, o: UncertainObject, db: TrajectoryDatabase, T, tau,
                  n: int, seed, *, influence=None, cache=None):
    """Monte-Carlo continuous query: maximal qualifying subsets of T.

    Level-wise like the exact miner, but each level evaluates all of its
    candidate timestamp sets against one shared pool of sampled worlds.
    """
    if tau <= 0.0:
        raise ParameterError(
            "pcnn requires tau > 0; at tau = 0 every subset of T qualifies"
        )
    T = tuple(sorted(T))
    cache = cache or AdaptationCache()

    def level_probs(timesets, level: int):
        pool = _predicate_hits(o, q, db, T, n, seed, influence=influence,
                               cache=cache, salt=f"level-{level}")
        cols = {t: k for k, t in enumerate(T)}
        out = {}
        for s in timesets:
            idx = [cols[t] for t in sorted(s)]
            out[s] = float(pool[:, idx].all(axis=1).mean())
        return out

    level = {
        s: p
        for s, p in level_probs([frozenset((t,)) for t in T], 1).items()
        if p >= tau
    }
    qualifying = dict(level)
    k = 2
    while level and k <= len(T):
        candidates = _exact.apriori_candidates(level, k)
        if not candidates:
            break
        probs = level_probs(candidates, k)
        level = {s: p for s, p in probs.items() if p >= tau}
        qualifying.update(level)
        k += 1
    maximal = [
        (tuple(sorted(s)), p)
        for s, p in qualifying.items()
        if not any(s < other for other in qualifying)
    ]
    maximal.sort(key=lambda item: (-item[1], item[0]))
    return maximal


@dataclass(frozen=True)
class RejectionResult:
    trajectory: Optional[Trajectory]
    attempts: int
    truncated: bool


def _row_cdf(matrix, state):
    lo, hi = matrix.indptr[state], matrix.indptr[state + 1]
    return matrix.indices[lo:hi], np.cumsum(matrix.data[lo:hi])


def rejection_sampler_naive(o: UncertainObject, seed,
                            max_attempts: int = 10_000_000) -> RejectionResult:
    """Whole-span a-priori sampling; an attempt dies at its first missed
    observation. Returns the first accepted trajectory and the attempt count
    (trajectory is None and ``truncated`` set if the cap runs out)."""
    rng = _as_rng(seed)
    obs = o.observations
    start, end = o.first_time, o.last_time
    attempts = 0
    while attempts < max_attempts:
        attempts += 1
        state = obs[0].state
        states = [state]
        next_obs = 1
        ok = True
        for t in range(start, end):
            targets, cum = _row_cdf(o.model.matrix_at(t), state)
            if len(targets) == 0:
                ok = False
                break
            state = int(targets[np.searchsorted(cum, rng.random() * cum[-1],
                                                side="right")])
            states.append(state)
            if next_obs < len(obs) and obs[next_obs].time == t + 1:
                if state != obs[next_obs].state:
                    ok = False
                    break
                next_obs += 1
        if ok and next_obs == len(obs):
            return RejectionResult(
                Trajectory(o.id, start, np.array(states)), attempts, False
            )
    return RejectionResult(None, attempts, True)


def rejection_sampler_segmented(o: UncertainObject, seed,
                                max_attempts: int = 10_000_000) -> RejectionResult:
    """Per-gap a-priori rejection: each accepted segment is kept and sampling
    resumes from its end observation. Attempts are summed over segments."""
    rng = _as_rng(seed)
    obs = o.observations
    attempts = 0
    states = [obs[0].state]
    for prev, nxt in zip(obs, obs[1:]):
        accepted = None
        while attempts < max_attempts:
            attempts += 1
            state = prev.state
            segment = []
            for t in range(prev.time, nxt.time):
                targets, cum = _row_cdf(o.model.matrix_at(t), state)
                if len(targets) == 0:
                    segment = None
                    break
                state = int(targets[np.searchsorted(cum, rng.random() * cum[-1],
                                                    side="right")])
                segment.append(state)
            if segment is not None and segment[-1] == nxt.state:
                accepted = segment
                break
        if accepted is None:
            return RejectionResult(None, attempts, True)
        states.extend(accepted)
    return RejectionResult(
        Trajectory(o.id, o.first_time, np.array(states)), attempts, False
    )


def snapshot_product_estimator(o: UncertainObject, q, db: TrajectoryDatabase,
                               T, *, influence=None) -> float:
    """Baseline that multiplies exact single-time probabilities across T,
    ignoring temporal correlation between query times."""
    T = tuple(sorted(T))
    prob = 1.0
    for t in T:
        prob *= _exact.pann(o, q, db, (t,), influence=influence)
        if prob == 0.0:
            return 0.0
    return prob

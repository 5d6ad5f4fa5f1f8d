"""Spatio-temporal bounding-rectangle index for candidate/influence pruning.

Each object contributes one axis-aligned rectangle per observation gap,
spanning the coordinates of every state it can possibly occupy during that
gap (exact forward/backward reachability on the transition graph). The
rectangles are bulk-loaded into a static tree of nested boxes; queries use
min/max point-to-box distances to discard objects that can never be
nearest (candidates) or can never disturb a candidate (influence set).

Pruning relies on coordinate-wise box bounds and therefore requires the
default Euclidean metric.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np

from .errors import LoadError, ModelError, SpanError
from .model import StateSpace, TrajectoryDatabase, UncertainObject, query_coords

DEFAULT_TICK_CACHE_CAP = 10_000
DEFAULT_FANOUT = 16


@dataclass(frozen=True, eq=False)
class STRect:
    """Bounding box of all states reachable within one observation gap."""

    object_id: str
    t_start: int
    t_end: int
    lo: np.ndarray
    hi: np.ndarray

    def covers_time(self, t: int) -> bool:
        return self.t_start <= t <= self.t_end


def box_dmin(lo: np.ndarray, hi: np.ndarray, point: np.ndarray) -> float:
    gap = np.maximum(np.maximum(lo - point, point - hi), 0.0)
    return float(np.linalg.norm(gap))


def box_dmax(lo: np.ndarray, hi: np.ndarray, point: np.ndarray) -> float:
    return float(np.linalg.norm(np.maximum(np.abs(point - lo), np.abs(hi - point))))


def dmin(rect: STRect, point) -> float:
    """Smallest possible distance from ``point`` to any state in the box."""
    return box_dmin(rect.lo, rect.hi, np.asarray(point, dtype=float))


def dmax(rect: STRect, point) -> float:
    """Largest possible distance from ``point`` to any state in the box."""
    return box_dmax(rect.lo, rect.hi, np.asarray(point, dtype=float))


def _gap_tick_supports(o: UncertainObject, gap: int):
    """Reachable-state sets for every tick of one observation gap.

    Intersection of forward reachability from the gap's first observation
    and backward reachability into its second one; this is the exact
    support of the posterior within the gap.
    """
    prev = o.observations[gap]
    nxt = o.observations[gap + 1]
    steps = nxt.time - prev.time
    n = o.model.n_states

    fwd = np.zeros(n, dtype=bool)
    fwd[prev.state] = True
    forward = [fwd]
    for k in range(steps):
        fwd = (o.model.support_at(prev.time + k).T @ forward[-1].astype(float)) > 0
        forward.append(fwd)

    bwd = np.zeros(n, dtype=bool)
    bwd[nxt.state] = True
    backward = [bwd]
    for k in range(steps):
        u = nxt.time - 1 - k
        bwd = (o.model.support_at(u) @ backward[-1].astype(float)) > 0
        backward.append(bwd)
    backward.reverse()

    return [np.nonzero(f & b)[0] for f, b in zip(forward, backward)]


def reachable_states(o: UncertainObject, t: int) -> np.ndarray:
    """State indices ``o`` can occupy at time t with positive probability."""
    if not o.first_time <= t <= o.last_time:
        raise SpanError(f"t={t} outside observation span of object {o.id!r}")
    times = o.obs_times
    k = bisect_right(times, t) - 1
    if times[k] == t:
        return np.array([o.observations[k].state], dtype=np.int64)
    return _gap_tick_supports(o, k)[t - times[k]]


@dataclass(eq=False)
class _TreeNode:
    t_lo: int
    t_hi: int
    lo: np.ndarray
    hi: np.ndarray
    children: list
    is_leaf: bool


def _hull_node(children, is_leaf):
    t_lo = min(c.t_lo if not is_leaf else c.t_start for c in children)
    t_hi = max(c.t_hi if not is_leaf else c.t_end for c in children)
    lo = np.min([c.lo for c in children], axis=0)
    hi = np.max([c.hi for c in children], axis=0)
    return _TreeNode(t_lo, t_hi, lo, hi, list(children), is_leaf)


def _bulk_load(rects, fanout):
    """Pack time/x/y-sorted rectangles bottom-up into a static tree."""
    entries = sorted(rects, key=lambda r: (r.t_start, tuple(r.lo), r.object_id))
    level = [
        _hull_node(entries[i:i + fanout], is_leaf=True)
        for i in range(0, len(entries), fanout)
    ]
    height = 1
    while len(level) > 1:
        level = [
            _hull_node(level[i:i + fanout], is_leaf=False)
            for i in range(0, len(level), fanout)
        ]
        height += 1
    return level[0], height + 1  # count the entry level


class USTIndex:
    """Immutable rectangle index over one database snapshot."""

    def __init__(self, space: StateSpace, rects, obs_times, tick_states=None,
                 fanout=DEFAULT_FANOUT):
        self.space = space
        self.rects = list(rects)
        self.obs_times = dict(obs_times)  # object id -> tuple of observation times
        self.tick_states = tick_states or {}  # (object id, gap) -> per-tick index arrays
        self.fanout = fanout
        self._rects_by_object = {}
        for r in self.rects:
            self._rects_by_object.setdefault(r.object_id, []).append(r)
        for rs in self._rects_by_object.values():
            rs.sort(key=lambda r: r.t_start)
        self.root, self.height = _bulk_load(self.rects, fanout)

    # -- per-object bounds -------------------------------------------------

    def _gap_of(self, oid: str, t: int):
        times = self.obs_times[oid]
        if not times[0] <= t <= times[-1]:
            raise SpanError(f"t={t} outside observation span of object {oid!r}")
        k = bisect_right(times, t) - 1
        if times[k] == t:
            return k, True
        return k, False

    def bounds(self, oid: str, t: int, point: np.ndarray):
        """(dmin, dmax) of object ``oid`` at time t against ``point``.

        Uses exact per-tick reachable states when cached, otherwise the
        coarser gap rectangle.
        """
        k, at_obs = self._gap_of(oid, t)
        times = self.obs_times[oid]
        gap = k if not at_obs else min(k, len(times) - 2)
        cached = self.tick_states.get((oid, gap))
        if cached is not None:
            states = cached[t - times[gap]]
            dists = np.linalg.norm(self.space.coords[states] - point[None, :], axis=1)
            return float(dists.min()), float(dists.max())
        if len(times) == 1:
            rect = self._rects_by_object[oid][0]
            return box_dmin(rect.lo, rect.hi, point), box_dmax(rect.lo, rect.hi, point)
        rect = self._rects_by_object[oid][gap]
        return box_dmin(rect.lo, rect.hi, point), box_dmax(rect.lo, rect.hi, point)

    def covering_ids(self, times):
        lo, hi = min(times), max(times)
        return sorted(
            oid
            for oid, ts in self.obs_times.items()
            if ts[0] <= lo and hi <= ts[-1]
        )

    # -- tree descent ------------------------------------------------------

    def ids_with_dmin_at_most(self, t: int, point: np.ndarray, threshold: float):
        """Object ids owning a rectangle at time t with dmin <= threshold.

        Descends the tree; a subtree is skipped when its hull box already
        lies farther than the threshold.
        """
        out = set()
        stack = [self.root]
        while stack:
            node = stack.pop()
            if t < node.t_lo or t > node.t_hi:
                continue
            if box_dmin(node.lo, node.hi, point) > threshold:
                continue
            if node.is_leaf:
                for rect in node.children:
                    if rect.covers_time(t) and dmin(rect, point) <= threshold:
                        out.add(rect.object_id)
            else:
                stack.extend(node.children)
        return out

    # -- pruning sets --------------------------------------------------------

    def _points(self, q, times):
        return {t: query_coords(q, t, self.space) for t in times}

    def candidates_forall(self, q, T):
        """Objects that may be nearest at *every* time of T (superset)."""
        T = tuple(sorted(T))
        points = self._points(q, T)
        covering = self.covering_ids(T)
        if not covering:
            return []
        out = []
        bounds = {
            t: {oid: self.bounds(oid, t, points[t]) for oid in covering} for t in T
        }
        min_dmax = {t: min(b[1] for b in bounds[t].values()) for t in T}
        for oid in covering:
            if all(bounds[t][oid][0] <= min_dmax[t] for t in T):
                out.append(oid)
        return out

    def influence_set(self, q, T, candidate_ids=None):
        """Objects that can affect a candidate's probability (superset).

        An object is influential iff at some query time it can come at
        least as close to the query as the farthest possible position of
        some candidate; everything else is certainly beaten by every
        candidate everywhere and contributes an exact factor of 1.
        """
        T = tuple(sorted(T))
        points = self._points(q, T)
        if candidate_ids is None:
            candidate_ids = self.candidates_forall(q, T)
        if not candidate_ids:
            return []
        covering = set(self.covering_ids(T))
        out = set(candidate_ids)
        for t in T:
            point = points[t]
            threshold = max(
                self.bounds(oid, t, point)[1] for oid in candidate_ids
            )
            for oid in self.ids_with_dmin_at_most(t, point, threshold):
                if oid in covering and self.bounds(oid, t, point)[0] <= threshold:
                    out.add(oid)
        return sorted(out)

    def candidates_exists(self, q, T):
        """Objects that may be nearest at *some* time of T (superset)."""
        T = tuple(sorted(T))
        points = self._points(q, T)
        covering = self.covering_ids(T)
        if not covering:
            return []
        out = set()
        for t in T:
            point = points[t]
            min_dmax = min(self.bounds(oid, t, point)[1] for oid in covering)
            for oid in covering:
                if self.bounds(oid, t, point)[0] <= min_dmax:
                    out.add(oid)
        return sorted(out)

    # -- bookkeeping ---------------------------------------------------------

    def stats(self):
        volumes = [float(np.prod(r.hi - r.lo)) for r in self.rects]
        return {
            "rect_count": len(self.rects),
            "avg_box_volume": float(np.mean(volumes)) if volumes else 0.0,
            "height": self.height,
        }

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("# object_id t_start t_end lo... hi...\n")
            for r in sorted(self.rects, key=lambda r: (r.object_id, r.t_start)):
                coords = " ".join(f"{x:.17g}" for x in np.concatenate([r.lo, r.hi]))
                fh.write(f"{r.object_id} {r.t_start} {r.t_end} {coords}\n")


def build(db: TrajectoryDatabase, *, tick_cache_cap=DEFAULT_TICK_CACHE_CAP,
          fanout=DEFAULT_FANOUT) -> USTIndex:
    """One rectangle per object per observation gap, built from exact
    reachability supports. Per-tick supports are kept when the state space
    is small enough (cap), tightening the query-time bounds."""
    if db.space.metric is not None:
        raise ModelError("rectangle pruning requires the Euclidean metric")
    rects = []
    obs_times = {}
    tick_states = {}
    keep_ticks = db.space.n_states <= tick_cache_cap
    for o in db.objects:
        obs_times[o.id] = o.obs_times
        if len(o.observations) == 1:
            p = db.space.point(o.observations[0].state)
            rects.append(STRect(o.id, o.first_time, o.last_time, p.copy(), p.copy()))
            continue
        for gap in range(len(o.observations) - 1):
            supports = _gap_tick_supports(o, gap)
            all_states = np.unique(np.concatenate(supports))
            coords = db.space.coords[all_states]
            rects.append(
                STRect(
                    o.id,
                    o.observations[gap].time,
                    o.observations[gap + 1].time,
                    coords.min(axis=0),
                    coords.max(axis=0),
                )
            )
            if keep_ticks:
                tick_states[(o.id, gap)] = supports
    return USTIndex(db.space, rects, obs_times, tick_states, fanout)


def load_index(path, space: StateSpace, fanout=DEFAULT_FANOUT) -> USTIndex:
    """Read a saved index; bounds fall back to rectangles (no tick cache)."""
    rects = []
    dim = space.dim
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split()
            if len(fields) != 3 + 2 * dim:
                raise LoadError(path, lineno,
                                f"expected object_id t_start t_end and {2 * dim} coords")
            try:
                t0, t1 = int(fields[1]), int(fields[2])
                nums = [float(x) for x in fields[3:]]
            except ValueError:
                raise LoadError(path, lineno, "malformed rectangle row")
            rects.append(
                STRect(fields[0], t0, t1,
                       np.array(nums[:dim]), np.array(nums[dim:]))
            )
    if not rects:
        raise LoadError(path, 0, "empty index file")
    obs_times = {}
    for r in rects:
        obs_times.setdefault(r.object_id, set()).update((r.t_start, r.t_end))
    obs_times = {oid: tuple(sorted(ts)) for oid, ts in obs_times.items()}
    return USTIndex(space, rects, obs_times, None, fanout)


def candidates_forall(index: USTIndex, q, T):
    return index.candidates_forall(q, T)


def influence_set(index: USTIndex, q, T, candidate_ids=None):
    return index.influence_set(q, T, candidate_ids)


def candidates_exists(index: USTIndex, q, T):
    return index.candidates_exists(q, T)

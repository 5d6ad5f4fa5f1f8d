"""Rectangle index: reachability supports, bounds, and pruning soundness."""

import numpy as np
import pytest
from scipy import sparse

from instances import random_instance, random_window
from ust.adaptation import adapt
from ust.errors import ModelError, SpanError
from ust.exact import pann, pann_query
from ust.index import (
    STRect,
    build,
    candidates_exists,
    candidates_forall,
    dmax,
    dmin,
    influence_set,
    load_index,
    reachable_states,
)
from ust.model import MarkovModel, StateSpace, TrajectoryDatabase, UncertainObject

UNIFORM2 = MarkovModel.homogeneous(np.array([[0.5, 0.5], [0.5, 0.5]]))


def line_db(n=56, step=0.1):
    """States on a line x = step*k with lazy random-walk transitions."""
    rows, cols = [], []
    for k in range(n):
        for j in (k - 1, k, k + 1):
            if 0 <= j < n:
                rows.append(k)
                cols.append(j)
    counts = np.bincount(rows, minlength=n)
    data = 1.0 / counts[np.array(rows)]
    m = MarkovModel.homogeneous(
        sparse.csr_matrix((data, (rows, cols)), shape=(n, n))
    )
    coords = np.stack([np.arange(n) * step, np.zeros(n)], axis=1)
    objects = (
        UncertainObject("A", ((0, 2), (5, 2), (10, 2)), m),
        UncertainObject("B", ((0, 10), (5, 5), (10, 5)), m),
        UncertainObject("C", ((0, 30), (5, 30), (10, 30)), m),
        UncertainObject("D", ((0, 50), (5, 50), (10, 50)), m),
    )
    return TrajectoryDatabase(StateSpace(coords), 12, objects)


class TestReachableStates:
    def test_observation_time_is_singleton(self):
        o = UncertainObject("a", ((0, 0), (2, 0)), UNIFORM2)
        np.testing.assert_array_equal(reachable_states(o, 0), [0])
        np.testing.assert_array_equal(reachable_states(o, 2), [0])

    def test_uniform_midpoint_reaches_both(self):
        o = UncertainObject("a", ((0, 0), (2, 0)), UNIFORM2)
        np.testing.assert_array_equal(reachable_states(o, 1), [0, 1])

    def test_deterministic_chain_singletons(self):
        swap = MarkovModel.homogeneous(np.array([[0.0, 1.0], [1.0, 0.0]]))
        o = UncertainObject("a", ((0, 0), (4, 0)), swap)
        for t in range(5):
            assert reachable_states(o, t).tolist() == [t % 2]

    def test_out_of_span(self):
        o = UncertainObject("a", ((1, 0), (2, 0)), UNIFORM2)
        with pytest.raises(SpanError):
            reachable_states(o, 0)

    def test_equals_posterior_support(self):
        rng = np.random.default_rng(42)
        for _ in range(10):
            db = random_instance(rng, n_states=6, branching=3, n_objects=1, span=6)
            o = db.objects[0]
            adapted = adapt(o)
            for t in range(o.first_time, o.last_time + 1):
                support = np.nonzero(adapted.marginals[t] > 0)[0]
                np.testing.assert_array_equal(reachable_states(o, t), support)


class TestBoxDistances:
    def test_point_inside(self):
        r = STRect("x", 0, 1, np.array([0.0, 0.0]), np.array([1.0, 1.0]))
        assert dmin(r, [0.5, 0.5]) == 0.0

    def test_unit_box_corner_arithmetic(self):
        r = STRect("x", 0, 1, np.array([0.0, 0.0]), np.array([1.0, 1.0]))
        assert dmin(r, [2.0, 0.0]) == pytest.approx(1.0)
        assert dmax(r, [2.0, 0.0]) == pytest.approx(np.sqrt(5.0))

    def test_dmin_below_dmax(self):
        rng = np.random.default_rng(44)
        for _ in range(50):
            lo = rng.random(2)
            hi = lo + rng.random(2)
            r = STRect("x", 0, 1, lo, hi)
            p = rng.random(2) * 3 - 1
            assert dmin(r, p) <= dmax(r, p) + 1e-12


class TestBuild:
    def test_one_rect_per_gap(self):
        space = StateSpace(np.array([[0.0, 0.0], [1.0, 0.0]]))
        o = UncertainObject("a", ((0, 0), (2, 0)), UNIFORM2)
        idx = build(TrajectoryDatabase(space, 4, (o,)))
        assert len(idx.rects) == 1
        rect = idx.rects[0]
        # the box spans both reachable states
        np.testing.assert_allclose(rect.lo, [0.0, 0.0])
        np.testing.assert_allclose(rect.hi, [1.0, 0.0])

    def test_conservative_over_posterior(self):
        rng = np.random.default_rng(46)
        for _ in range(10):
            db = random_instance(rng, n_states=6, branching=3, n_objects=2, span=6)
            idx = build(db)
            for o in db.objects:
                adapted = adapt(o)
                rects = [r for r in idx.rects if r.object_id == o.id]
                for t in range(o.first_time, o.last_time + 1):
                    covering = [r for r in rects if r.covers_time(t)]
                    assert covering
                    for s in np.nonzero(adapted.marginals[t] > 0)[0]:
                        point = db.space.point(s)
                        assert any(
                            np.all(r.lo <= point) and np.all(point <= r.hi)
                            for r in covering
                        )

    def test_union_covers_span(self):
        rng = np.random.default_rng(47)
        db = random_instance(rng, n_states=5, branching=3, n_objects=3, span=6)
        idx = build(db)
        for o in db.objects:
            rects = sorted(
                (r for r in idx.rects if r.object_id == o.id),
                key=lambda r: r.t_start,
            )
            assert rects[0].t_start == o.first_time
            assert rects[-1].t_end == o.last_time
            for a, b in zip(rects, rects[1:]):
                assert b.t_start <= a.t_end

    def test_rejects_custom_metric(self):
        space = StateSpace(np.array([[0.0, 0.0], [1.0, 0.0]]),
                           metric=lambda a, b: 1.0)
        o = UncertainObject("a", ((0, 0),), UNIFORM2)
        with pytest.raises(ModelError):
            build(TrajectoryDatabase(space, 2, (o,)))

    def test_stats_keys(self):
        rng = np.random.default_rng(48)
        db = random_instance(rng, n_states=5, branching=3, n_objects=3, span=5)
        stats = build(db).stats()
        assert set(stats) == {"rect_count", "avg_box_volume", "height"}
        assert stats["rect_count"] == len(build(db).rects)


class TestPruningScenario:
    def test_candidates_and_influence(self):
        db = line_db()
        idx = build(db)
        T = tuple(range(2, 9))
        q = 0  # state at the line's origin
        assert idx.candidates_forall(q, T) == ["A"]
        influence = idx.influence_set(q, T)
        assert "B" in influence and "A" in influence
        assert "C" not in influence and "D" not in influence

    def test_pruned_equals_unpruned(self):
        db = line_db()
        idx = build(db)
        T = tuple(range(2, 9))
        pruned = pann_query(0, db, T, 0.0, index=idx)
        full = pann_query(0, db, T, 0.0)
        assert [oid for oid, _ in pruned] == [oid for oid, _ in full]
        for (_, a), (_, b) in zip(pruned, full):
            assert abs(a - b) <= 1e-12

    def test_single_object_db(self):
        space = StateSpace(np.array([[0.0, 0.0], [1.0, 0.0]]))
        o = UncertainObject("solo", ((0, 0), (2, 0)), UNIFORM2)
        db = TrajectoryDatabase(space, 4, (o,))
        idx = build(db)
        assert idx.candidates_forall(0, (0, 1, 2)) == ["solo"]
        assert idx.influence_set(0, (0, 1, 2)) == ["solo"]
        assert idx.candidates_exists(0, (0, 1, 2)) == ["solo"]


class TestPruningSoundness:
    def test_random_instances(self):
        rng = np.random.default_rng(53)
        for _ in range(15):
            db = random_instance(rng, n_states=6, branching=3,
                                 n_objects=int(rng.integers(2, 5)), span=6)
            idx = build(db)
            _, q, T = random_window(rng, db)
            cand = idx.candidates_forall(q, T)
            infl = idx.influence_set(q, T, candidate_ids=cand)
            assert set(cand) <= set(infl)
            assert set(cand) <= set(idx.candidates_exists(q, T))
            for o in db.covering(T):
                p_full = pann(o, q, db, T)
                if p_full > 0:
                    assert o.id in cand
                if o.id in cand:
                    p_pruned = pann(o, q, db, T, influence=infl)
                    assert p_pruned == p_full  # influence factors are exactly 1

    def test_save_load_round_trip_stays_sound(self, tmp_path):
        rng = np.random.default_rng(59)
        db = random_instance(rng, n_states=6, branching=3, n_objects=4, span=6)
        idx = build(db)
        path = tmp_path / "index.ust"
        idx.save(path)
        loaded = load_index(path, db.space)
        _, q, T = random_window(rng, db)
        # rectangle-only bounds are coarser but still conservative
        assert set(idx.candidates_forall(q, T)) <= set(loaded.candidates_forall(q, T))
        infl = loaded.influence_set(q, T)
        for oid in loaded.candidates_forall(q, T):
            o = db.by_id(oid)
            assert pann(o, q, db, T, influence=infl) == pann(o, q, db, T)

    def test_module_level_wrappers(self):
        db = line_db()
        idx = build(db)
        T = (2, 3, 4)
        assert candidates_forall(idx, 0, T) == idx.candidates_forall(0, T)
        assert influence_set(idx, 0, T) == idx.influence_set(0, T)
        assert candidates_exists(idx, 0, T) == idx.candidates_exists(0, T)

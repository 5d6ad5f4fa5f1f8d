"""Brute-force reference implementation on tiny instances."""

import numpy as np
import pytest

from instances import pinned_pair_db, random_instance, random_window
from ust.errors import ParameterError, TooLargeError
from ust.model import MarkovModel, StateSpace, TrajectoryDatabase, UncertainObject
from ust.oracle import (
    enumerate_paths,
    oracle_pann,
    oracle_pcnn,
    oracle_pcnn_object,
    oracle_penn,
    world_count,
)

UNIFORM2 = MarkovModel.homogeneous(np.array([[0.5, 0.5], [0.5, 0.5]]))


class TestEnumeratePaths:
    def test_deterministic_chain(self):
        swap = MarkovModel.homogeneous(np.array([[0.0, 1.0], [1.0, 0.0]]))
        o = UncertainObject("a", ((0, 0), (2, 0)), swap)
        assert enumerate_paths(o) == [((0, 1, 0), 1.0)]

    def test_uniform_two_paths(self):
        o = UncertainObject("a", ((0, 0), (2, 0)), UNIFORM2)
        paths = dict(enumerate_paths(o))
        assert paths == {(0, 0, 0): 0.5, (0, 1, 0): 0.5}

    def test_weights_sum_to_one(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            db = random_instance(rng, n_states=5, branching=3, n_objects=1, span=6)
            paths = enumerate_paths(db.objects[0])
            assert abs(sum(w for _, w in paths) - 1.0) <= 1e-12
            for path, _ in paths:
                for t, s in db.objects[0].observations:
                    assert path[t - db.objects[0].first_time] == s

    def test_guard(self):
        uniform = MarkovModel.homogeneous(np.full((4, 4), 0.25))
        o = UncertainObject("a", ((0, 0), (12, 0)), uniform)
        with pytest.raises(TooLargeError):
            enumerate_paths(o, guard=100)


class TestOracleQueries:
    def test_single_object_db(self):
        o = UncertainObject("a", ((0, 0), (2, 0)), UNIFORM2)
        db = TrajectoryDatabase(StateSpace(np.array([[0.0, 0.0], [1.0, 0.0]])),
                                4, (o,))
        assert oracle_pann(o, 0, db, (0, 1, 2)) == 1.0
        assert oracle_penn(o, 0, db, (0, 1, 2)) == 1.0

    def test_pinned_pair_values(self):
        db = pinned_pair_db()
        o = db.by_id("o")
        assert oracle_pann(o, 0, db, (1, 2)) == pytest.approx(0.25, abs=1e-12)
        assert oracle_penn(o, 0, db, (1, 2)) == pytest.approx(0.75, abs=1e-12)

    def test_exists_dominates_forall_for_certain_candidates(self):
        # with a pinned candidate the pairwise product equals the joint event,
        # so event containment applies
        rng = np.random.default_rng(12)
        for _ in range(10):
            db = random_instance(rng, n_states=4, branching=2, n_objects=3, span=4)
            pinned = UncertainObject(
                "pin",
                tuple((t, db.objects[0].observations[0].state) for t in range(5)),
                MarkovModel.homogeneous(np.eye(4)),
            )
            db2 = TrajectoryDatabase(db.space, db.horizon, db.objects + (pinned,))
            _, q, T = random_window(rng, db2)
            assert (
                oracle_penn(pinned, q, db2, T)
                >= oracle_pann(pinned, q, db2, T) - 1e-12
            )

    def test_object_order_invariance(self):
        rng = np.random.default_rng(19)
        db = random_instance(rng, n_states=5, branching=3, n_objects=3, span=4)
        o, q, T = random_window(rng, db)
        shuffled = TrajectoryDatabase(db.space, db.horizon, db.objects[::-1])
        assert oracle_pann(o, q, db, T) == oracle_pann(o, q, shuffled, T)
        assert oracle_penn(o, q, db, T) == oracle_penn(o, q, shuffled, T)

    def test_world_count_guard(self):
        rng = np.random.default_rng(21)
        db = random_instance(rng, n_states=5, branching=3, n_objects=3, span=5)
        with pytest.raises(TooLargeError):
            world_count(db, (0, 1), guard=1)


class TestOraclePcnn:
    def test_rejects_tau_zero(self):
        db = pinned_pair_db()
        with pytest.raises(ParameterError):
            oracle_pcnn_object(0, db.by_id("o"), db, (1, 2), 0.0)

    def test_pinned_pair_maximality(self):
        db = pinned_pair_db()
        o = db.by_id("o")
        # singletons have probability 1/2, the pair 1/4
        assert oracle_pcnn_object(0, o, db, (1, 2), 0.3) == [
            ((1,), 0.5), ((2,), 0.5)
        ]
        assert oracle_pcnn_object(0, o, db, (1, 2), 0.2) == [((1, 2), 0.25)]

    def test_rows_cover_all_objects(self):
        db = pinned_pair_db()
        rows = oracle_pcnn(0, db, (1, 2), 0.2)
        assert ("o", (1, 2), 0.25) in [(r[0], r[1], pytest.approx(r[2])) for r in rows]

"""Core model types, propagation, and database validation."""

import numpy as np
import pytest
from scipy import sparse

from instances import random_stochastic_matrix
from ust.errors import ModelError, SpanError
from ust.model import (
    MarkovModel,
    Query,
    StateSpace,
    TimeDomain,
    Trajectory,
    TrajectoryDatabase,
    UncertainObject,
    a_priori_distribution,
    propagate,
    validate,
)


class TestStateSpace:
    def test_rejects_duplicate_points(self):
        with pytest.raises(ModelError):
            StateSpace(np.array([[0.0, 0.0], [0.0, 0.0]]))

    def test_metric_axioms(self):
        space = StateSpace(np.array([[0.0, 0.0], [3.0, 4.0]]))
        assert space.distance(0, 0) == 0.0
        assert space.distance(0, 1) == space.distance(1, 0) == 5.0

    def test_distances_to(self):
        space = StateSpace(np.array([[0.0, 0.0], [1.0, 0.0]]))
        np.testing.assert_allclose(space.distances_to([0.0, 0.0]), [0.0, 1.0])

    def test_custom_metric(self):
        space = StateSpace(
            np.array([[0.0, 0.0], [2.0, 0.0]]),
            metric=lambda a, b: float(np.abs(a - b).sum()),
        )
        assert space.distance(0, 1) == 2.0


class TestPropagate:
    def test_identity(self):
        np.testing.assert_allclose(propagate([1.0, 0.0], np.eye(2)), [1.0, 0.0])

    def test_symmetric_row(self):
        out = propagate([1.0, 0.0], np.array([[0.5, 0.5], [0.5, 0.5]]))
        np.testing.assert_allclose(out, [0.5, 0.5])

    def test_hand_multiplication(self):
        out = propagate([0.5, 0.5], np.array([[0.9, 0.1], [0.3, 0.7]]))
        np.testing.assert_allclose(out, [0.6, 0.4], atol=1e-15)

    def test_dense_oracle_agreement(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            m = random_stochastic_matrix(rng, 6, 4)
            dist = rng.random(6)
            dist /= dist.sum()
            np.testing.assert_allclose(
                propagate(dist, m), m.toarray().T @ dist, atol=1e-12
            )

    def test_dimension_mismatch(self):
        with pytest.raises(ModelError):
            propagate([1.0, 0.0, 0.0], np.eye(2))
        with pytest.raises(ModelError):
            propagate([1.0, 0.0], sparse.eye(3, format="csr"))

    def test_mass_preserved_on_random_matrices(self):
        rng = np.random.default_rng(5)
        for _ in range(30):
            n = int(rng.integers(2, 9))
            m = random_stochastic_matrix(rng, n, 4)
            dist = rng.random(n)
            dist /= dist.sum()
            assert abs(propagate(dist, m).sum() - 1.0) <= 1e-9

    def test_k_fold_equals_matrix_power(self):
        rng = np.random.default_rng(6)
        for _ in range(10):
            n = int(rng.integers(2, 7))
            m = random_stochastic_matrix(rng, n, 3)
            k = int(rng.integers(1, 6))
            start = int(rng.integers(n))
            dist = np.zeros(n)
            dist[start] = 1.0
            for _ in range(k):
                dist = propagate(dist, m)
            power_row = np.linalg.matrix_power(m.toarray(), k)[start]
            np.testing.assert_allclose(dist, power_row, atol=1e-9)


def _uniform_object(obs, n=2):
    m = MarkovModel.homogeneous(np.full((n, n), 1.0 / n))
    return UncertainObject("u", obs, m)


class TestAPrioriDistribution:
    def test_point_mass_at_observation_time(self):
        o = _uniform_object(((2, 1), (4, 0)))
        np.testing.assert_allclose(a_priori_distribution(o, 2), [0.0, 1.0])
        np.testing.assert_allclose(a_priori_distribution(o, 4), [1.0, 0.0])

    def test_one_uniform_step(self):
        o = _uniform_object(((0, 0),))
        np.testing.assert_allclose(a_priori_distribution(o, 1), [0.5, 0.5])

    def test_future_observations_are_ignored(self):
        # conditioning on the t=2 observation is the adaptation module's job
        o = _uniform_object(((0, 0), (2, 0)))
        np.testing.assert_allclose(a_priori_distribution(o, 1), [0.5, 0.5])

    def test_before_first_observation(self):
        o = _uniform_object(((3, 0),))
        with pytest.raises(SpanError):
            a_priori_distribution(o, 2)


class TestObjectInvariants:
    def test_needs_observations(self):
        m = MarkovModel.homogeneous(np.eye(2))
        with pytest.raises(ModelError):
            UncertainObject("x", (), m)

    def test_strictly_increasing_times(self):
        m = MarkovModel.homogeneous(np.eye(2))
        with pytest.raises(ModelError):
            UncertainObject("x", ((1, 0), (1, 1)), m)
        with pytest.raises(ModelError):
            UncertainObject("x", ((2, 0), (1, 1)), m)

    def test_covers(self):
        o = _uniform_object(((2, 0), (5, 1)))
        assert o.covers((2, 3, 5))
        assert not o.covers((1, 3))
        assert not o.covers((5, 6))


class TestMarkovModel:
    def test_inhomogeneous_lookup(self):
        m = MarkovModel.inhomogeneous({0: np.eye(2), 1: np.full((2, 2), 0.5)})
        assert m.matrix_at(1)[0, 0] == 0.5
        with pytest.raises(ModelError):
            m.matrix_at(2)

    def test_support(self):
        m = MarkovModel.homogeneous(np.array([[0.5, 0.5], [0.0, 1.0]]))
        sup = m.support_at(0).toarray()
        assert sup.tolist() == [[True, True], [False, True]]


class TestQueryTypes:
    def test_times_sorted_and_deduplicated(self):
        assert Query(0, (5, 2, 2, 3)).times == (2, 3, 5)

    def test_tau_range(self):
        with pytest.raises(ModelError):
            Query(0, (1,), tau=1.5)

    def test_trajectory_lookup(self):
        tr = Trajectory("t", 3, [4, 5, 6])
        assert tr.end_time == 5
        assert tr.state_at(4) == 5
        with pytest.raises(SpanError):
            tr.state_at(6)

    def test_time_domain(self):
        domain = TimeDomain(4)
        assert 0 in domain and 4 in domain and 5 not in domain


def _db(objects, n=3):
    coords = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])[:n]
    return TrajectoryDatabase(StateSpace(coords), 10, tuple(objects))


class TestValidate:
    def test_well_formed(self):
        m = MarkovModel.homogeneous(np.full((3, 3), 1.0 / 3))
        db = _db([UncertainObject("a", ((0, 0), (2, 1)), m)])
        assert validate(db) == []

    def test_row_sum_violation_names_row(self):
        bad = sparse.csr_matrix(np.array([[0.5, 0.4, 0.0],
                                          [0.2, 0.3, 0.5],
                                          [0.0, 0.0, 1.0]]))
        m = MarkovModel.homogeneous(bad)
        db = _db([UncertainObject("a", ((0, 0),), m)])
        violations = validate(db)
        assert len(violations) == 1
        assert violations[0].kind == "row-sum"
        assert "row 0" in violations[0].message

    def test_unreachable_observation(self):
        m = MarkovModel.homogeneous(np.array([[1.0, 0.0, 0.0],
                                              [0.0, 0.5, 0.5],
                                              [0.0, 0.5, 0.5]]))
        db = _db([UncertainObject("a", ((0, 0), (1, 1)), m)])
        violations = validate(db)
        assert [v.kind for v in violations] == ["unreachable"]
        assert violations[0].time == 1

    def test_multi_step_reachability(self):
        # 0 -> 1 -> 2 takes exactly two steps; observing 2 one step after 0 is invalid
        chain = sparse.csr_matrix(
            (np.ones(3), ([0, 1, 2], [1, 2, 0])), shape=(3, 3)
        )
        m = MarkovModel.homogeneous(chain)
        ok = _db([UncertainObject("a", ((0, 0), (2, 2)), m)])
        assert validate(ok) == []
        bad = _db([UncertainObject("a", ((0, 0), (1, 2)), m)])
        assert [v.kind for v in validate(bad)] == ["unreachable"]

    def test_duplicate_ids(self):
        m = MarkovModel.homogeneous(np.full((3, 3), 1.0 / 3))
        o1 = UncertainObject("a", ((0, 0),), m)
        o2 = UncertainObject("a", ((1, 1),), m)
        kinds = [v.kind for v in validate(_db([o1, o2]))]
        assert "duplicate-id" in kinds

    def test_observation_outside_domain(self):
        m = MarkovModel.homogeneous(np.full((3, 3), 1.0 / 3))
        db = _db([UncertainObject("a", ((0, 0), (11, 1)), m)])
        assert any(v.kind == "obs-domain" for v in validate(db))

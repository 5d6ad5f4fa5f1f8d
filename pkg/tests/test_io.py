"""Text file formats: loaders, writers, and line-numbered rejection."""

import numpy as np
import pytest

from instances import random_instance
from ust.errors import LoadError
from ust.io import (
    load_database,
    load_ground_truth,
    load_observations,
    load_states,
    load_trajectory,
    load_transitions,
    parse_times,
    write_database,
    write_ground_truth,
)
from ust.model import Trajectory


def test_round_trip(tmp_path):
    db = random_instance(np.random.default_rng(3), n_states=6, n_objects=4)
    write_database(tmp_path, db)
    loaded = load_database(tmp_path)
    np.testing.assert_array_equal(loaded.space.coords, db.space.coords)
    np.testing.assert_allclose(
        loaded.objects[0].model.matrix_at(0).toarray(),
        db.objects[0].model.matrix_at(0).toarray(),
    )
    assert {o.id: o.observations for o in loaded.objects} == {
        o.id: o.observations for o in db.objects
    }


def test_comments_and_blank_lines(tmp_path):
    path = tmp_path / "states.txt"
    path.write_text("# header\n\n0 0.0 0.0\n1 1.0 0.0\n")
    assert load_states(path).n_states == 2


def test_states_errors(tmp_path):
    path = tmp_path / "states.txt"
    path.write_text("0 0.0 0.0\nx 1.0 0.0\n")
    with pytest.raises(LoadError, match="states.txt:2"):
        load_states(path)
    path.write_text("0 0.0 0.0\n2 1.0 0.0\n")
    with pytest.raises(LoadError, match="missing 1"):
        load_states(path)


def test_transitions_row_sum_error(tmp_path):
    path = tmp_path / "transitions.txt"
    path.write_text("0 0 0.5\n0 1 0.4\n1 1 1.0\n")
    with pytest.raises(LoadError, match="transitions.txt:1"):
        load_transitions(path, 2)


def test_transitions_range_and_duplicates(tmp_path):
    path = tmp_path / "transitions.txt"
    path.write_text("0 0 1.5\n")
    with pytest.raises(LoadError, match="outside"):
        load_transitions(path, 1)
    path.write_text("0 0 0.5\n0 0 0.5\n")
    with pytest.raises(LoadError, match="duplicate"):
        load_transitions(path, 1)


def test_duplicate_observation_times_rejected(tmp_path):
    path = tmp_path / "observations.txt"
    path.write_text("a 0 0\na 0 1\n")
    with pytest.raises(LoadError, match="two observations at t=0"):
        load_observations(path)


def test_unreachable_observation_line_number(tmp_path):
    (tmp_path / "states.txt").write_text("0 0.0 0.0\n1 1.0 0.0\n2 2.0 0.0\n")
    (tmp_path / "transitions.txt").write_text(
        "0 1 1.0\n1 2 1.0\n2 0 1.0\n"
    )
    (tmp_path / "observations.txt").write_text("a 0 0\na 1 2\n")
    with pytest.raises(LoadError, match="observations.txt:2"):
        load_database(tmp_path)


def test_trajectory_loader(tmp_path):
    path = tmp_path / "q.txt"
    path.write_text("2 4\n3 5\n4 6\n")
    tr = load_trajectory(path)
    assert tr.start_time == 2 and tr.state_at(4) == 6
    path.write_text("2 4\n4 5\n")
    with pytest.raises(LoadError, match="contiguous"):
        load_trajectory(path)


def test_ground_truth_round_trip(tmp_path):
    truths = {"a": Trajectory("a", 3, [0, 1, 2])}
    path = tmp_path / "groundtruth.txt"
    write_ground_truth(path, truths)
    loaded = load_ground_truth(path)
    assert loaded["a"].start_time == 3
    np.testing.assert_array_equal(loaded["a"].states, [0, 1, 2])


def test_parse_times():
    assert parse_times("2-4,7,1") == (1, 2, 3, 4, 7)
    assert parse_times("5") == (5,)
    with pytest.raises(ValueError):
        parse_times("9-3")
    with pytest.raises(ValueError):
        parse_times("")

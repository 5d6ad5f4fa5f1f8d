"""Plain-text database files: states, transitions, observations, trajectories.

All files are UTF-8, line oriented, space separated; ``#`` starts a comment
line and blank lines are ignored. Loaders reject malformed rows and invariant
violations with line-numbered errors.
"""

from __future__ import annotations

import os
from typing import Optional

import numpy as np
from scipy import sparse

from .errors import LoadError
from .model import (
    STOCHASTIC_TOL,
    MarkovModel,
    StateSpace,
    Trajectory,
    TrajectoryDatabase,
    UncertainObject,
    validate,
)

STATES_FILE = "states.txt"
TRANSITIONS_FILE = "transitions.txt"
OBSERVATIONS_FILE = "observations.txt"
GROUND_TRUTH_FILE = "groundtruth.txt"
INDEX_FILE = "index.ust"
ADAPTED_DIR = "adapted"


def _rows(path):
    """Yield (line_number, fields) for every non-comment, non-blank line."""
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            yield lineno, line.split()


def _parse_int(token, path, lineno, what):
    try:
        return int(token)
    except ValueError:
        raise LoadError(path, lineno, f"{what} must be an integer, got {token!r}")


def _parse_float(token, path, lineno, what):
    try:
        return float(token)
    except ValueError:
        raise LoadError(path, lineno, f"{what} must be a number, got {token!r}")


def load_states(path) -> StateSpace:
    """Read ``state_id x y ...`` rows into a StateSpace (ids must be 0..n-1)."""
    entries = {}
    dim = None
    for lineno, fields in _rows(path):
        if len(fields) < 2:
            raise LoadError(path, lineno, "expected: state_id coord [coord ...]")
        sid = _parse_int(fields[0], path, lineno, "state_id")
        coords = [_parse_float(f, path, lineno, "coordinate") for f in fields[1:]]
        if dim is None:
            dim = len(coords)
        elif len(coords) != dim:
            raise LoadError(path, lineno, f"expected {dim} coordinates")
        if sid in entries:
            raise LoadError(path, lineno, f"duplicate state_id {sid}")
        entries[sid] = (coords, lineno)
    if not entries:
        raise LoadError(path, 0, "no states defined")
    n = len(entries)
    if set(entries) != set(range(n)):
        missing = min(set(range(n)) - set(entries))
        raise LoadError(path, 0, f"state ids must be 0..{n - 1}; missing {missing}")
    coords = np.array([entries[i][0] for i in range(n)], dtype=float)
    if np.unique(coords, axis=0).shape[0] != n:
        raise LoadError(path, 0, "state coordinates must be pairwise distinct")
    return StateSpace(coords)


def load_transitions(path, n_states: int, tol=STOCHASTIC_TOL) -> sparse.csr_matrix:
    """Read ``from_id to_id prob`` rows; every source row must sum to 1."""
    rows, cols, data = [], [], []
    first_line_of_row = {}
    seen = set()
    for lineno, fields in _rows(path):
        if len(fields) != 3:
            raise LoadError(path, lineno, "expected: from_id to_id prob")
        i = _parse_int(fields[0], path, lineno, "from_id")
        j = _parse_int(fields[1], path, lineno, "to_id")
        p = _parse_float(fields[2], path, lineno, "prob")
        if not (0 <= i < n_states and 0 <= j < n_states):
            raise LoadError(path, lineno, f"state id out of range: {i} -> {j}")
        if not 0.0 <= p <= 1.0 + tol:
            raise LoadError(path, lineno, f"probability {p!r} outside [0, 1]")
        if (i, j) in seen:
            raise LoadError(path, lineno, f"duplicate transition {i} -> {j}")
        seen.add((i, j))
        first_line_of_row.setdefault(i, lineno)
        rows.append(i)
        cols.append(j)
        data.append(p)
    matrix = sparse.csr_matrix((data, (rows, cols)), shape=(n_states, n_states))
    sums = np.asarray(matrix.sum(axis=1)).ravel()
    bad = np.nonzero(np.abs(sums - 1.0) > tol)[0]
    if bad.size:
        row = int(bad[0])
        raise LoadError(
            path,
            first_line_of_row.get(row, 0),
            f"outgoing probabilities of state {row} sum to {sums[row]!r}, not 1",
        )
    return matrix


def load_observations(path):
    """Read ``object_id time state_id`` rows.

    Returns (ordered dict object_id -> [(time, state)], dict object_id ->
    {time: line_number}) with each object's observations sorted by time.
    """
    per_object = {}
    lines = {}
    for lineno, fields in _rows(path):
        if len(fields) != 3:
            raise LoadError(path, lineno, "expected: object_id time state_id")
        oid = fields[0]
        t = _parse_int(fields[1], path, lineno, "time")
        s = _parse_int(fields[2], path, lineno, "state_id")
        if t in lines.setdefault(oid, {}):
            raise LoadError(
                path, lineno, f"object {oid!r} has two observations at t={t}"
            )
        lines[oid][t] = lineno
        per_object.setdefault(oid, []).append((t, s))
    if not per_object:
        raise LoadError(path, 0, "no observations defined")
    for oid in per_object:
        per_object[oid].sort()
    return per_object, lines


def load_trajectory(path, object_id: Optional[str] = None) -> Trajectory:
    """Read a certain trajectory from ``time state_id`` rows (contiguous times)."""
    entries = []
    for lineno, fields in _rows(path):
        if len(fields) != 2:
            raise LoadError(path, lineno, "expected: time state_id")
        entries.append(
            (
                _parse_int(fields[0], path, lineno, "time"),
                _parse_int(fields[1], path, lineno, "state_id"),
                lineno,
            )
        )
    if not entries:
        raise LoadError(path, 0, "empty trajectory")
    entries.sort()
    times = [e[0] for e in entries]
    for (t0, _, _), (t1, _, ln) in zip(entries, entries[1:]):
        if t1 != t0 + 1:
            raise LoadError(path, ln, f"trajectory times must be contiguous ({t0} -> {t1})")
    return Trajectory(object_id, times[0], np.array([e[1] for e in entries]))


def load_ground_truth(path):
    """Read full certain trajectories keyed by object id."""
    per_object, _ = load_observations(path)
    out = {}
    for oid, obs in per_object.items():
        times = [t for t, _ in obs]
        if times != list(range(times[0], times[-1] + 1)):
            raise LoadError(path, 0, f"ground truth of {oid!r} is not contiguous")
        out[oid] = Trajectory(oid, times[0], np.array([s for _, s in obs]))
    return out


def load_database(directory, *, horizon: Optional[int] = None,
                  run_validation: bool = True) -> TrajectoryDatabase:
    """Load states/transitions/observations from a database directory.

    With ``run_validation`` (default) the assembled database is checked and
    the first violation is raised as a line-numbered error.
    """
    states_path = os.path.join(directory, STATES_FILE)
    trans_path = os.path.join(directory, TRANSITIONS_FILE)
    obs_path = os.path.join(directory, OBSERVATIONS_FILE)
    space = load_states(states_path)
    matrix = load_transitions(trans_path, space.n_states)
    model = MarkovModel.homogeneous(matrix)
    per_object, obs_lines = load_observations(obs_path)
    objects = tuple(
        UncertainObject(oid, tuple(obs), model) for oid, obs in per_object.items()
    )
    if horizon is None:
        horizon = max(o.last_time for o in objects)
    db = TrajectoryDatabase(space, horizon, objects)
    if run_validation:
        violations = validate(db)
        if violations:
            v = violations[0]
            line = 0
            if v.object_id in obs_lines and v.time is not None:
                line = obs_lines[v.object_id].get(v.time, 0)
            raise LoadError(obs_path if line else directory, line, str(v))
    return db


def write_states(path, space: StateSpace):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# state_id coordinates\n")
        for i, row in enumerate(space.coords):
            fh.write(f"{i} " + " ".join(f"{x:.17g}" for x in row) + "\n")


def write_transitions(path, matrix):
    m = sparse.coo_matrix(matrix)
    order = np.lexsort((m.col, m.row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# from_id to_id prob\n")
        for k in order:
            fh.write(f"{m.row[k]} {m.col[k]} {m.data[k]:.17g}\n")


def write_observations(path, db: TrajectoryDatabase):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# object_id time state_id\n")
        for o in db.objects:
            for obs in o.observations:
                fh.write(f"{o.id} {obs.time} {obs.state}\n")


def write_ground_truth(path, trajectories):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# object_id time state_id\n")
        for oid in sorted(trajectories):
            tr = trajectories[oid]
            for k, s in enumerate(tr.states):
                fh.write(f"{oid} {tr.start_time + k} {int(s)}\n")


def write_database(directory, db: TrajectoryDatabase, ground_truth=None):
    """Write the standard database directory layout."""
    os.makedirs(directory, exist_ok=True)
    write_states(os.path.join(directory, STATES_FILE), db.space)
    models = db.models()
    if len(models) != 1 or not models[0].is_homogeneous:
        raise LoadError(directory, 0, "only a single shared homogeneous model "
                                      "can be written to the text format")
    write_transitions(os.path.join(directory, TRANSITIONS_FILE), models[0].matrix_at(0))
    write_observations(os.path.join(directory, OBSERVATIONS_FILE), db)
    if ground_truth is not None:
        write_ground_truth(os.path.join(directory, GROUND_TRUTH_FILE), ground_truth)


def parse_times(text: str):
    """Parse a timestamp set like ``2-8,12,15`` into a sorted tuple."""
    times = set()
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = (int(x) for x in part.split("-", 1))
            if hi < lo:
                raise ValueError(f"invalid time range {part!r}")
            times.update(range(lo, hi + 1))
        else:
            times.add(int(part))
    if not times:
        raise ValueError(f"no timestamps in {text!r}")
    return tuple(sorted(times))

"""Bayesian conditioning of the a-priori chain on all of an object's
observations.

A forward sweep over the observation span turns the a-priori matrices into
time-reversed matrices R(t) (distribution of the previous state given the
current one and all past observations). A backward sweep over R then yields
a-posteriori forward matrices F(t) conditioned on past *and* future
observations, plus the posterior marginal distribution at every tick.
Trajectories drawn with F hit every observation by construction.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .errors import ConsistencyError, LoadError, SpanError
from .model import MASS_FLOOR, UncertainObject, point_mass


def _joint_step(matrix: sparse.csr_matrix, dist: np.ndarray) -> sparse.csr_matrix:
    """Joint one-step mass X[i, j] = matrix[j, i] * dist[j].

    Row i of X holds, for each state j the chain may have come from, the
    joint probability of (previous=j, current=i). Row sums therefore equal
    the propagated distribution.
    """
    return matrix.multiply(dist[:, None]).T.tocsr()


def _normalize_rows(joint: sparse.csr_matrix, row_mass: np.ndarray) -> sparse.csr_matrix:
    """Divide each row by its mass; rows with mass below MASS_FLOOR are dropped."""
    inv = np.zeros_like(row_mass)
    alive = row_mass > MASS_FLOOR
    inv[alive] = 1.0 / row_mass[alive]
    out = joint.copy()
    out.data = out.data * np.repeat(inv, np.diff(out.indptr))
    out.eliminate_zeros()
    return out


def forward_pass(o: UncertainObject):
    """Sweep forward over the observation span.

    Returns (backward matrices R keyed by target tick, forward marginals
    keyed by tick). R[t] maps a state at t to the distribution of the state
    at t-1 given observations before t. Marginals at observation times are
    the observed point masses.
    """
    n = o.model.n_states
    obs_at = {obs.time: obs.state for obs in o.observations}
    start, end = o.first_time, o.last_time
    dist = point_mass(n, o.observations[0].state)
    marginals = {start: dist}
    backward = {}
    for t in range(start + 1, end + 1):
        joint = _joint_step(o.model.matrix_at(t - 1), dist)
        mass = np.asarray(joint.sum(axis=1)).ravel()
        backward[t] = _normalize_rows(joint, mass)
        dist = mass
        if t in obs_at:
            if mass[obs_at[t]] <= MASS_FLOOR:
                raise ConsistencyError(o.id, t)
            dist = point_mass(n, obs_at[t])
        marginals[t] = dist
    return backward, marginals


def backward_pass(backward: dict, forward_marginals: dict, o: UncertainObject):
    """Sweep backward over R, starting from the final observation.

    Returns (a-posteriori forward matrices F keyed by source tick, posterior
    marginals keyed by tick). F[t] maps a state at t to the distribution of
    the state at t+1 given *all* observations.
    """
    n = o.model.n_states
    obs_at = {obs.time: obs.state for obs in o.observations}
    start, end = o.first_time, o.last_time
    dist = forward_marginals[end]
    posteriors = {end: dist}
    forward = {}
    for t in range(end - 1, start - 1, -1):
        joint = _joint_step(backward[t + 1], dist)
        mass = np.asarray(joint.sum(axis=1)).ravel()
        forward[t] = _normalize_rows(joint, mass)
        dist = mass
        if t in obs_at:
            # the sweep lands on the observed state automatically; re-apply
            # the exact point mass to shed floating-point residue
            if mass[obs_at[t]] <= MASS_FLOOR:
                raise ConsistencyError(o.id, t)
            dist = point_mass(n, obs_at[t])
        posteriors[t] = dist
    return forward, posteriors


@dataclass(eq=False)
class AdaptedModel:
    """Per-object output of the two sweeps, immutable once built."""

    object_id: str
    start: int
    end: int
    backward: dict  # t -> R(t), transition t -> t-1, defined on (start, end]
    forward: dict   # t -> F(t), transition t -> t+1, defined on [start, end)
    marginals: dict  # t -> posterior distribution, defined on [start, end]

    @property
    def span(self):
        return self.start, self.end

    def __contains__(self, t) -> bool:
        return self.start <= t <= self.end

    def posterior(self, t: int) -> np.ndarray:
        if t not in self:
            raise SpanError(
                f"t={t} outside adapted span [{self.start}, {self.end}] "
                f"of object {self.object_id!r}"
            )
        return self.marginals[t]


def adapt(o: UncertainObject) -> AdaptedModel:
    """Run both sweeps for one object."""
    backward, fwd_marginals = forward_pass(o)
    forward, posteriors = backward_pass(backward, fwd_marginals, o)
    return AdaptedModel(o.id, o.first_time, o.last_time, backward, forward, posteriors)


def posterior_distribution(adapted: AdaptedModel, t: int) -> np.ndarray:
    """Stored posterior marginal of the object at time t."""
    return adapted.posterior(t)


def observations_digest(o: UncertainObject) -> str:
    text = ";".join(f"{t}:{s}" for t, s in o.observations)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


class AdaptationCache:
    """Adapt each object once, keyed by (object id, observation digest).

    With a directory, adapted models are persisted as text dumps and picked
    up again by later runs when the digest still matches.
    """

    def __init__(self, directory=None):
        self.directory = directory
        self._memory = {}
        if directory:
            os.makedirs(directory, exist_ok=True)

    def _path(self, o: UncertainObject) -> str:
        return os.path.join(self.directory, f"{o.id}.adapted")

    def get(self, o: UncertainObject) -> AdaptedModel:
        key = (o.id, o.observations)
        hit = self._memory.get(key)
        if hit is not None:
            return hit
        digest = observations_digest(o)
        if self.directory and os.path.exists(self._path(o)):
            try:
                adapted, stored = load_adapted(self._path(o), o.model.n_states)
                if stored == digest:
                    self._memory[key] = adapted
                    return adapted
            except LoadError:
                pass  # stale or foreign file: recompute below
        adapted = adapt(o)
        self._memory[key] = adapted
        if self.directory:
            dump_adapted(adapted, self._path(o), digest)
        return adapted

    def __len__(self):
        return len(self._memory)


def _write_matrix_section(fh, name, matrices):
    fh.write(name + "\n")
    for t in sorted(matrices):
        m = matrices[t].tocoo()
        order = np.lexsort((m.col, m.row))
        for k in order:
            fh.write(f"{t} {m.row[k]} {m.col[k]} {m.data[k]:.17g}\n")


def dump_adapted(adapted: AdaptedModel, path, digest=""):
    """Text dump; round-trips float64 values exactly (17 significant digits)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(
            f"object {adapted.object_id} {adapted.start} {adapted.end} {digest}\n"
        )
        _write_matrix_section(fh, "R", adapted.backward)
        _write_matrix_section(fh, "F", adapted.forward)
        fh.write("marginal\n")
        for t in sorted(adapted.marginals):
            vec = adapted.marginals[t]
            for i in np.nonzero(vec)[0]:
                fh.write(f"{t} {i} {vec[i]:.17g}\n")


def load_adapted(path, n_states: int):
    """Read a dump back; returns (AdaptedModel, stored digest)."""
    sections = {"R": {}, "F": {}, "marginal": {}}
    current = None
    header = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if header is None:
                fields = line.split()
                if len(fields) < 4 or fields[0] != "object":
                    raise LoadError(path, lineno, "expected: object <id> <start> <end>")
                header = (
                    fields[1],
                    int(fields[2]),
                    int(fields[3]),
                    fields[4] if len(fields) > 4 else "",
                )
                continue
            if line in sections:
                current = line
                continue
            if current is None:
                raise LoadError(path, lineno, f"row outside any section: {line!r}")
            fields = line.split()
            if current == "marginal":
                if len(fields) != 3:
                    raise LoadError(path, lineno, "expected: t i prob")
                t, i, p = int(fields[0]), int(fields[1]), float(fields[2])
                sections[current].setdefault(t, {})[i] = p
            else:
                if len(fields) != 4:
                    raise LoadError(path, lineno, "expected: t i j prob")
                t, i, j = int(fields[0]), int(fields[1]), int(fields[2])
                sections[current].setdefault(t, []).append((i, j, float(fields[3])))
    if header is None:
        raise LoadError(path, 0, "empty adapted-model dump")
    object_id, start, end, digest = header

    def to_csr(entries):
        rows = np.array([e[0] for e in entries])
        cols = np.array([e[1] for e in entries])
        data = np.array([e[2] for e in entries])
        return sparse.csr_matrix((data, (rows, cols)), shape=(n_states, n_states))

    backward = {t: to_csr(v) for t, v in sections["R"].items()}
    forward = {t: to_csr(v) for t, v in sections["F"].items()}
    marginals = {}
    for t, entries in sections["marginal"].items():
        vec = np.zeros(n_states)
        for i, p in entries.items():
            vec[i] = p
        marginals[t] = vec
    adapted = AdaptedModel(object_id, start, end, backward, forward, marginals)
    return adapted, digest

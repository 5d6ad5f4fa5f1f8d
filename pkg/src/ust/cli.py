"""Command line front end: data generation, indexing, adaptation, queries,
parameter sweeps, and calibration runs against retained ground truth.

Exit codes: 0 success, 2 validation or parameter error, 3 instance too
large for exhaustive evaluation, 4 I/O failure. Result files depend only on
the database files and the given seed; timing lines go to stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import datagen, exact, oracle
from . import index as index_mod
from . import io as io_mod
from . import sampling
from .adaptation import AdaptationCache
from .errors import (
    ConsistencyError,
    GenerationError,
    LoadError,
    ModelError,
    ParameterError,
    SpanError,
    TooLargeError,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_TOO_LARGE = 3
EXIT_IO = 4

DEFAULT_SAMPLES = 10_000
DEFAULT_DELTA = 0.05


class _Timer:
    """Wall-clock phase accumulator, reported as key<TAB>value milliseconds."""

    def __init__(self):
        self.ms = {"ts": 0.0, "sa": 0.0, "ex": 0.0}

    class _Phase:
        def __init__(self, timer, key):
            self.timer, self.key = timer, key

        def __enter__(self):
            self.t0 = time.perf_counter()

        def __exit__(self, *exc):
            self.timer.ms[self.key] += (time.perf_counter() - self.t0) * 1e3

    def phase(self, key):
        return self._Phase(self, key)

    def report(self, stream=sys.stderr):
        for key in ("ts", "sa", "ex"):
            stream.write(f"phase_{key}_ms\t{self.ms[key]:.3f}\n")
        stream.write(f"total_ms\t{sum(self.ms.values()):.3f}\n")


def _load_query_position(args, db):
    if args.q_traj is not None:
        return io_mod.load_trajectory(args.q_traj, "query")
    if args.q_state is None:
        raise ParameterError("need --q-state or --q-traj")
    if not 0 <= args.q_state < db.space.n_states:
        raise ParameterError(f"query state {args.q_state} outside state space")
    return int(args.q_state)


def _resolve_samples(args):
    if args.samples is not None and args.epsilon is not None:
        raise ParameterError("--samples and --epsilon/--delta are mutually exclusive")
    delta = args.delta if args.delta is not None else DEFAULT_DELTA
    if args.epsilon is not None:
        return sampling.hoeffding_samples(args.epsilon, delta), delta
    return (args.samples if args.samples is not None else DEFAULT_SAMPLES), delta


def _get_index(args, db):
    if getattr(args, "no_prune", False):
        return None
    path = os.path.join(args.db, io_mod.INDEX_FILE)
    if os.path.exists(path):
        return index_mod.load_index(path, db.space)
    return index_mod.build(db)


def _emit(rows, kind, args):
    fmt = args.format
    if kind == "pcnn":
        if fmt == "jsonlines":
            lines = [
                json.dumps(
                    {"object_id": oid, "times": list(ts), "probability": p},
                    sort_keys=True,
                )
                for oid, ts, p in rows
            ]
        else:
            lines = exact.format_pcnn_rows(rows)
    else:
        if fmt == "jsonlines":
            lines = [
                json.dumps({"object_id": oid, "probability": p}, sort_keys=True)
                for oid, p in rows
            ]
        else:
            lines = exact.format_probability_rows(rows)
    text = "\n".join(lines) + ("\n" if lines else "")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# gen


def cmd_gen(args):
    cfg = datagen.GenConfig(
        states=args.states,
        branching=args.branching,
        objects=args.objects,
        lifetime=args.lifetime,
        horizon=args.horizon,
        spacing=args.spacing,
        lag=args.lag,
        wrong_turn_period=args.wrong_turn_period,
        lag_mode=args.lag_mode,
        seed=args.seed,
    )
    db, truths = datagen.gen_database(cfg)
    io_mod.write_database(args.out, db, ground_truth=truths)
    n_obs = sum(len(o.observations) for o in db.objects)
    sys.stderr.write(
        f"wrote {db.space.n_states} states, {len(db)} objects, "
        f"{n_obs} observations to {args.out}\n"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# index


def cmd_index_build(args):
    db = io_mod.load_database(args.db)
    idx = index_mod.build(db, fanout=args.fanout)
    out = args.out or os.path.join(args.db, io_mod.INDEX_FILE)
    idx.save(out)
    for key, value in idx.stats().items():
        sys.stdout.write(f"{key}\t{value}\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# adapt


def cmd_adapt(args):
    db = io_mod.load_database(args.db)
    out = args.out or os.path.join(args.db, io_mod.ADAPTED_DIR)
    timer = _Timer()
    cache = AdaptationCache(out)
    with timer.phase("ts"):
        for o in db.objects:
            cache.get(o)
    sys.stderr.write(f"adapted {len(db)} objects into {out}\n")
    timer.report()
    return EXIT_OK


# ---------------------------------------------------------------------------
# query


def run_query(args):
    """Prune via the index, then refine candidates with the chosen estimator."""
    db = io_mod.load_database(args.db)
    q = _load_query_position(args, db)
    T = io_mod.parse_times(args.T)
    tau = args.tau
    kind = args.kind
    estimator = args.estimator or ("posterior" if kind == "penn" else "exact")
    n, delta = _resolve_samples(args)
    timer = _Timer()

    idx = _get_index(args, db)
    if kind == "penn":
        candidate_ids = sorted(
            idx.candidates_exists(q, T) if idx is not None
            else (o.id for o in db.covering(T))
        )
        influence = candidate_ids if idx is not None else None
    else:
        candidate_ids = sorted(
            idx.candidates_forall(q, T) if idx is not None
            else (o.id for o in db.covering(T))
        )
        influence = idx.influence_set(q, T) if idx is not None else None

    if estimator == "exact":
        if kind == "pann":
            with timer.phase("ex"):
                rows = exact.pann_query(q, db, T, tau, index=idx,
                                        threads=args.threads)
        elif kind == "pcnn":
            with timer.phase("ex"):
                rows = exact.pcnn_query(q, db, T, tau, index=idx,
                                        threads=args.threads)
        else:  # penn has no polynomial exact path; guarded enumeration only
            rows = []
            with timer.phase("ex"):
                for oid in candidate_ids:
                    p = exact.penn_exact_oracle(db.by_id(oid), q, db, T)
                    if p >= tau and p > 0.0:
                        rows.append((oid, p))
            rows.sort(key=lambda r: (-r[1], r[0]))
    elif estimator == "ss":
        if kind != "pann":
            raise ParameterError("the snapshot-product baseline only answers pann")
        rows = []
        with timer.phase("ex"):
            for oid in candidate_ids:
                p = sampling.snapshot_product_estimator(
                    db.by_id(oid), q, db, T, influence=influence
                )
                if p >= tau and p > 0.0:
                    rows.append((oid, p))
        rows.sort(key=lambda r: (-r[1], r[0]))
    elif estimator in ("posterior", "ts1", "ts2"):
        cache = AdaptationCache()
        if estimator == "posterior":
            with timer.phase("ts"):
                needed = set(candidate_ids) | set(influence or candidate_ids)
                for oid in needed:
                    cache.get(db.by_id(oid))
        rows = []
        with timer.phase("sa"):
            if kind == "pcnn":
                pcnn_rows = []
                for oid in candidate_ids:
                    for subset, p in sampling.estimate_pcnn(
                        q, db.by_id(oid), db, T, tau, n, args.seed,
                        influence=influence, cache=cache,
                    ):
                        pcnn_rows.append((oid, subset, p))
                pcnn_rows.sort(key=lambda r: (-r[2], r[0], r[1]))
                rows = pcnn_rows
            else:
                mc_kind = "forall" if kind == "pann" else "exists"
                for oid in candidate_ids:
                    report = sampling.estimate(
                        mc_kind, db.by_id(oid), q, db, T, n, args.seed,
                        influence=influence, sampler=estimator,
                        delta=delta, cache=cache,
                    )
                    if report.estimate >= tau and report.estimate > 0.0:
                        rows.append((oid, report.estimate))
                rows.sort(key=lambda r: (-r[1], r[0]))
    else:
        raise ParameterError(f"unknown estimator {estimator!r}")

    _emit(rows, kind, args)
    timer.report()
    return EXIT_OK


# ---------------------------------------------------------------------------
# oracle


def cmd_oracle(args):
    db = io_mod.load_database(args.db)
    q = _load_query_position(args, db)
    T = io_mod.parse_times(args.T)
    tau = args.tau
    if args.kind == "pcnn":
        rows = oracle.oracle_pcnn(q, db, T, tau)
        _emit(rows, "pcnn", args)
        return EXIT_OK
    fn = oracle.oracle_pann if args.kind == "pann" else oracle.oracle_penn
    rows = []
    for o in sorted(db.covering(T), key=lambda o: o.id):
        p = fn(o, q, db, T)
        if p >= tau and p > 0.0:
            rows.append((o.id, p))
    rows.sort(key=lambda r: (-r[1], r[0]))
    _emit(rows, args.kind, args)
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench


def _pick_query(db, rng, t_len):
    """Random query state plus a window inside a random object's span."""
    candidates = [o for o in db.objects
                  if o.last_time - o.first_time + 1 >= t_len]
    o = candidates[int(rng.integers(len(candidates)))]
    t0 = int(rng.integers(o.first_time, o.last_time - t_len + 2))
    q = int(rng.integers(db.space.n_states))
    return q, tuple(range(t0, t0 + t_len))


def bench(args):
    """Sweep one generator/query parameter; emit a tab-separated table."""
    base = dict(states=args.states, branching=args.branching,
                objects=args.objects, lifetime=args.lifetime,
                horizon=args.horizon, spacing=args.spacing, lag=args.lag,
                seed=args.seed)
    values = [float(v) if args.sweep in ("branching", "tau", "lag") else int(v)
              for v in args.values.split(",")]
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        out.write("param\tvalue\tts_ms\tsa_ms\tex_ms\tcandidates\tinfluence\n")
        for value in values:
            cfg_kw = dict(base)
            tau = args.tau
            t_len = args.T_length
            if args.sweep in ("states", "branching", "objects", "lifetime",
                              "spacing", "lag"):
                cfg_kw[args.sweep] = value
            elif args.sweep == "tau":
                tau = value
            elif args.sweep == "T":
                t_len = int(value)
            else:
                raise ParameterError(f"unknown sweep parameter {args.sweep!r}")
            cfg = datagen.GenConfig(**cfg_kw)
            db, _ = datagen.gen_database(cfg)
            idx = index_mod.build(db)
            timer = _Timer()
            cache = AdaptationCache()
            n_cand = n_infl = 0
            rng = sampling.object_stream(args.seed, f"bench-{args.sweep}-{value}")
            with timer.phase("ts"):
                for o in db.objects:
                    cache.get(o)
            for _ in range(args.queries):
                q, T = _pick_query(db, rng, t_len)
                cand = idx.candidates_forall(q, T)
                infl = idx.influence_set(q, T, candidate_ids=cand)
                n_cand += len(cand)
                n_infl += len(infl)
                with timer.phase("ex"):
                    if args.kind == "pann":
                        exact.pann_query(q, db, T, tau, index=idx)
                    else:
                        exact.pcnn_query(q, db, T, max(tau, 0.1), index=idx)
                with timer.phase("sa"):
                    for oid in cand:
                        sampling.estimate("forall", db.by_id(oid), q, db, T,
                                          args.samples, args.seed,
                                          influence=infl, cache=cache)
            k = max(1, args.queries)
            out.write(
                f"{args.sweep}\t{value}\t{timer.ms['ts']:.1f}\t"
                f"{timer.ms['sa']:.1f}\t{timer.ms['ex']:.1f}\t"
                f"{n_cand / k:.2f}\t{n_infl / k:.2f}\n"
            )
    finally:
        if args.out:
            out.close()
    return EXIT_OK


# ---------------------------------------------------------------------------
# calibrate


def calibrate(args):
    """Reliability table: predicted probability vs ground-truth hit rate."""
    db = io_mod.load_database(args.db)
    truth_path = os.path.join(args.db, io_mod.GROUND_TRUTH_FILE)
    truths = io_mod.load_ground_truth(truth_path)
    idx = index_mod.build(db)
    cache = AdaptationCache()
    tuples = []
    for k in range(args.queries):
        rng = sampling.object_stream(args.seed, f"calibrate-{k}")
        q, T = _pick_query(db, rng, args.T_length)
        cand = idx.candidates_forall(q, T)
        if not cand:
            continue
        infl = idx.influence_set(q, T, candidate_ids=cand)
        covering = [o.id for o in db.covering(T)]
        dq = db.space.distances_to(db.space.point(q))
        true_dist = {
            oid: np.array([dq[truths[oid].state_at(t)] for t in T])
            for oid in covering
        }
        for oid in cand:
            report = sampling.estimate(
                "forall", db.by_id(oid), q, db, T, args.samples, args.seed,
                influence=infl, cache=cache,
            )
            if not 0.0 < report.estimate < 1.0:
                continue
            others = np.array(
                [true_dist[c] for c in covering if c != oid]
            )
            hit = bool(
                np.all(true_dist[oid] <= others.min(axis=0))
            ) if others.size else True
            tuples.append((report.estimate, hit))
    buckets = args.buckets
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        out.write("bucket_lo\tbucket_hi\tcount\texpected\tobserved\tflag\n")
        for b in range(buckets):
            lo, hi = b / buckets, (b + 1) / buckets
            grabbed = [(p, hit) for p, hit in tuples
                       if lo <= p < hi or (b == buckets - 1 and p == hi)]
            count = len(grabbed)
            expected = (lo + hi) / 2
            observed = (sum(hit for _, hit in grabbed) / count) if count else 0.0
            flag = "ok" if count >= args.min_tuples else "low"
            out.write(
                f"{lo:.2f}\t{hi:.2f}\t{count}\t{expected:.4f}\t"
                f"{observed:.4f}\t{flag}\n"
            )
    finally:
        if args.out:
            out.close()
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_query_options(p, with_estimator=True):
    p.add_argument("--db", required=True, help="database directory")
    p.add_argument("--q-state", type=int, help="query state id")
    p.add_argument("--q-traj", help="file with a certain query trajectory")
    p.add_argument("--T", required=True, help="query times, e.g. 2-8,12,15")
    p.add_argument("--tau", type=float, default=0.0, help="probability threshold")
    p.add_argument("--format", choices=("tsv", "jsonlines"), default="tsv")
    p.add_argument("--out", help="result file (default: stdout)")
    if with_estimator:
        p.add_argument("--estimator",
                       choices=("exact", "posterior", "ts1", "ts2", "ss"))
        p.add_argument("--samples", type=int)
        p.add_argument("--epsilon", type=float)
        p.add_argument("--delta", type=float)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--no-prune", action="store_true",
                       help="evaluate against the full database")
        p.add_argument("--threads", type=int, default=None)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ust",
        description="Probabilistic nearest-neighbor queries over uncertain "
                    "trajectory databases.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic database")
    p.add_argument("--states", type=int, required=True)
    p.add_argument("--branching", type=float, default=6.0)
    p.add_argument("--objects", type=int, required=True)
    p.add_argument("--lifetime", type=int, default=100)
    p.add_argument("--horizon", type=int, default=1000)
    p.add_argument("--spacing", type=int, default=10)
    p.add_argument("--lag", type=float, default=1.0)
    p.add_argument("--wrong-turn-period", type=int, default=10)
    p.add_argument("--lag-mode", choices=datagen.LAG_MODES, default="spacing")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("index", help="index operations")
    isub = p.add_subparsers(dest="index_command", required=True)
    pb = isub.add_parser("build", help="build and save the rectangle index")
    pb.add_argument("--db", required=True)
    pb.add_argument("--out", help="index file (default: <db>/index.ust)")
    pb.add_argument("--fanout", type=int, default=index_mod.DEFAULT_FANOUT)
    pb.set_defaults(func=cmd_index_build)

    p = sub.add_parser("adapt", help="precompute adapted models")
    p.add_argument("--db", required=True)
    p.add_argument("--out", help="cache directory (default: <db>/adapted)")
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("query", help="run a probabilistic NN query")
    p.add_argument("kind", choices=("pann", "penn", "pcnn"))
    _add_query_options(p)
    p.set_defaults(func=run_query)

    p = sub.add_parser("oracle", help="brute-force reference evaluation")
    p.add_argument("kind", choices=("pann", "penn", "pcnn"))
    _add_query_options(p, with_estimator=False)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("bench", help="sweep a parameter, tabulate cost/counts")
    p.add_argument("--sweep", required=True,
                   choices=("states", "branching", "objects", "lifetime",
                            "spacing", "lag", "tau", "T"))
    p.add_argument("--values", required=True, help="comma separated sweep values")
    p.add_argument("--states", type=int, default=2000)
    p.add_argument("--branching", type=float, default=6.0)
    p.add_argument("--objects", type=int, default=100)
    p.add_argument("--lifetime", type=int, default=40)
    p.add_argument("--horizon", type=int, default=200)
    p.add_argument("--spacing", type=int, default=5)
    p.add_argument("--lag", type=float, default=1.0)
    p.add_argument("--queries", type=int, default=10)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--T-length", type=int, default=5, dest="T_length")
    p.add_argument("--tau", type=float, default=0.0)
    p.add_argument("--kind", choices=("pann", "pcnn"), default="pann")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=bench)

    p = sub.add_parser("calibrate", help="reliability of predicted probabilities")
    p.add_argument("--db", required=True)
    p.add_argument("--queries", type=int, default=2500)
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--T-length", type=int, default=5, dest="T_length")
    p.add_argument("--buckets", type=int, default=10)
    p.add_argument("--min-tuples", type=int, default=200, dest="min_tuples")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=calibrate)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except TooLargeError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_TOO_LARGE
    except (LoadError, ModelError, ConsistencyError, ParameterError,
            SpanError, GenerationError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_VALIDATION
    except OSError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

"""Command-line front end.

Exit codes: 0 success, 2 usage error (bad flags or values), 3 runtime failure.
CSV outputs start with ``#``-prefixed ``key=value`` lines holding the fully
resolved configuration, including the master seed.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import time

import numpy as np

from . import fl_harness as fl
from . import fuse_filter as ff
from . import privacy_eval as pe
from . import protocol as proto
from .dmcfe import scheme
from .errors import EncClusterError, InvalidArgument

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3


class UsageError(Exception):
    pass


def write_atomic(path: str | None, text: str):
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def header(command: str, settings: dict) -> str:
    lines = [f"# command={command}"] + [f"# {k}={v}" for k, v in settings.items()]
    return "\n".join(lines) + "\n"


def _positive(kind):
    def parse(text):
        try:
            v = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"not a valid {kind.__name__}: {text!r}") from None
        if v <= 0:
            raise argparse.ArgumentTypeError(f"must be positive: {text!r}")
        return v
    return parse


def _timings(fn, repeat: int):
    fn()  # warm-up
    out = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        out.append(1e3 * (time.perf_counter() - t))
    return out


def _summary(ms):
    return {"median_ms": float(np.median(ms)), "p10_ms": float(np.percentile(ms, 10)),
            "p90_ms": float(np.percentile(ms, 90))}


# ----------------------------------------------------------------- commands


def cmd_simulate(args) -> int:
    try:
        cfg = fl.ExperimentConfig.from_text(open(args.config).read()) if args.config else fl.ExperimentConfig()
    except (InvalidArgument, OSError) as exc:
        raise UsageError(f"bad config file: {exc}") from None
    overrides = {"clients": args.clients, "rounds": args.rounds, "epochs": args.epochs,
                 "participation": args.participation, "kappa": args.clusters, "bpe": args.bpe,
                 "key_size": args.key_size, "mode": args.mode, "seed": args.seed, "samples": args.samples}
    for k, v in overrides.items():
        if v is not None:
            setattr(cfg, k, v)
    if args.dirichlet is not None:
        cfg.partition, cfg.alpha = "dirichlet", args.dirichlet
    elif args.iid:
        cfg.partition = "iid"
    try:
        cfg.validate()
    except InvalidArgument as exc:
        raise UsageError(str(exc)) from None
    metrics = fl.run_experiment(cfg)
    settings = {f"{k}": v for k, v in (line.split("=", 1) for line in cfg.to_text().splitlines())}
    write_atomic(args.out, header("simulate", settings) + metrics.to_csv())
    return EXIT_OK


def cmd_bench_encrypt(args) -> int:
    kappa, d, ks = args.clusters, args.dims, args.key_size
    if kappa > d:
        raise UsageError("clusters must not exceed dims")
    try:
        pp = scheme.setup(ks, 2, args.seed)
    except InvalidArgument as exc:
        raise UsageError(str(exc)) from None
    kp = scheme.keygen_all(pp, args.seed)[0]
    rng = np.random.default_rng(args.seed)
    codec = proto.FixedPointCodec()
    weights = rng.normal(0.0, 0.1, d)
    centroids = np.sort(rng.choice(weights, kappa, replace=False))
    mapping = rng.integers(0, kappa, d)
    slot_values, _ = codec.encode(centroids, 100)
    full_values, _ = codec.encode(weights, 100)
    parts = {"encrypt": [], "filter": []}

    def clustered_path():
        t = time.perf_counter()
        scheme.encrypt(kp, slot_values, 1, bound=codec.slot_bound)
        t2 = time.perf_counter()
        ff.build_from_mapping(mapping, 4, args.bpe, args.seed)
        parts["encrypt"].append(1e3 * (t2 - t))
        parts["filter"].append(1e3 * (time.perf_counter() - t2))

    a = _timings(clustered_path, args.repeat)
    report = {"config": {"clusters": kappa, "key_size": ks, "dims": d, "repeat": args.repeat,
                         "bpe": args.bpe, "seed": args.seed, "group": pp.group.name},
              **_summary(a),
              "encrypt_median_ms": float(np.median(parts["encrypt"][1:])),
              "filter_median_ms": float(np.median(parts["filter"][1:])),
              "ratio": None}
    if not args.no_full:
        b = _timings(lambda: scheme.encrypt(kp, full_values, 1, bound=codec.slot_bound), args.repeat)
        report["full"] = _summary(b)
        report["ratio"] = report["full"]["median_ms"] / report["median_ms"]
    write_atomic(args.out, json.dumps(report, indent=2) + "\n")
    return EXIT_OK


def cmd_bench_filter(args) -> int:
    rng = np.random.default_rng(args.seed)
    mapping = rng.integers(0, args.clusters, args.dims)
    holder = {}

    def build():
        holder["f"] = ff.build_from_mapping(mapping, args.arity, args.bpe, args.seed)

    ms = _timings(build, args.repeat)
    filt = holder["f"]
    probes = args.probes
    pos = rng.integers(0, args.dims, probes)
    # a wrong cluster id is a guaranteed non-member
    cid = (mapping[pos] + rng.integers(1, max(args.clusters, 2), probes)) % max(args.clusters, 2)
    nonmember = cid != mapping[pos]
    fp = int(filt.contains(pos[nonmember], cid[nonmember]).sum())
    report = {"config": {"dims": args.dims, "clusters": args.clusters, "bpe": args.bpe, "arity": args.arity,
                         "repeat": args.repeat, "seed": args.seed, "probes": probes},
              **_summary(ms), "ratio": None,
              "bits_per_key": filt.bits_per_key, "serialized_bytes": ff.serialized_size(filt),
              "fpr": fp / max(int(nonmember.sum()), 1), "fpr_nominal": 2.0 ** -args.bpe,
              "false_negatives": int((~filt.contains(np.arange(args.dims), mapping)).sum())}
    write_atomic(args.out, json.dumps(report, indent=2) + "\n")
    return EXIT_OK


def cmd_attack_eval(args) -> int:
    settings = ["iid", "noniid"] if args.setting == "both" else [args.setting]
    results = []
    for s in range(args.seeds):
        seed = args.seed + s
        for setting in settings:
            results.append(pe.run_attack(setting, seed, clients=args.clients, rounds=args.rounds,
                                         kappa=args.kappa, alpha=args.alpha, probe=args.probe))
    meta = {"setting": args.setting, "seeds": args.seeds, "seed": args.seed, "clients": args.clients,
            "rounds": args.rounds, "kappa": args.kappa, "alpha": args.alpha, "probe": args.probe}
    text = header("attack-eval", meta) + pe.attack_results_to_csv(results)
    if args.setting == "both":
        by = {(r.seed, r.setting): r for r in results}
        for metric in ("mse_weight_space", "mse_embedding_space"):
            wins = sum(getattr(by[(args.seed + s, "noniid")], metric) > getattr(by[(args.seed + s, "iid")], metric)
                       for s in range(args.seeds))
            print(f"{metric}: non-IID > IID in {wins}/{args.seeds} pairs, "
                  f"sign-test p = {pe.sign_test_p(wins, args.seeds):.4g}", file=sys.stderr)
    write_atomic(args.out, text)
    return EXIT_OK


def cmd_bound_check(args) -> int:
    rows = []
    for t in range(args.trials):
        _, agg = pe.bound_trial(t, args.dims, args.kappa, args.bpe, args.clients, args.seed)
        rows.append((t, agg))
    meta = {"trials": args.trials, "dims": args.dims, "kappa": args.kappa, "bpe": args.bpe,
            "clients": args.clients, "seed": args.seed}
    held = sum(r.holds for _, r in rows)
    print(f"bounds hold in {held}/{args.trials} trials", file=sys.stderr)
    write_atomic(args.out, header("bound-check", meta) + pe.bound_reports_to_csv(rows))
    return EXIT_OK


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="enccluster", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    pos_int, pos_float = _positive(int), _positive(float)

    p = sub.add_parser("simulate", help="run a federated-learning experiment, write metrics CSV")
    p.add_argument("--config", help="flat key=value file; flags override it")
    p.add_argument("--clients", type=pos_int)
    p.add_argument("--rounds", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--participation", type=pos_float)
    p.add_argument("--clusters", type=pos_int)
    p.add_argument("--bpe", type=int, choices=(8, 16, 32))
    p.add_argument("--key-size", type=int)
    p.add_argument("--samples", type=pos_int)
    part = p.add_mutually_exclusive_group()
    part.add_argument("--dirichlet", type=pos_float, metavar="ALPHA")
    part.add_argument("--iid", action="store_true")
    p.add_argument("--mode", choices=fl.MODES)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bench-encrypt", help="time clustered vs. full encryption, write JSON")
    p.add_argument("--clusters", type=pos_int, default=128)
    p.add_argument("--key-size", type=int, default=256)
    p.add_argument("--dims", type=pos_int, default=100_000)
    p.add_argument("--repeat", type=_positive(int), default=5)
    p.add_argument("--bpe", type=int, choices=(8, 16, 32), default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-full", action="store_true", help="skip encrypting all d values")
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench_encrypt)

    p = sub.add_parser("bench-filter", help="time filter construction and measure FPR, write JSON")
    p.add_argument("--dims", type=pos_int, default=100_000)
    p.add_argument("--clusters", type=pos_int, default=128)
    p.add_argument("--bpe", type=int, choices=(8, 16, 32), default=8)
    p.add_argument("--arity", type=int, choices=(3, 4), default=4)
    p.add_argument("--repeat", type=pos_int, default=5)
    p.add_argument("--probes", type=pos_int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench_filter)

    p = sub.add_parser("attack-eval", help="perfect-estimation attack, write CSV")
    p.add_argument("--setting", choices=("iid", "noniid", "both"), default="both")
    p.add_argument("--seeds", type=pos_int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kappa", type=pos_int, default=128)
    p.add_argument("--clients", type=_positive(int), default=10)
    p.add_argument("--rounds", type=pos_int, default=3)
    p.add_argument("--alpha", type=pos_float, default=0.1)
    p.add_argument("--probe", choices=("test", "target"), default="test")
    p.add_argument("--out")
    p.set_defaults(func=cmd_attack_eval)

    p = sub.add_parser("bound-check", help="Monte-Carlo check of the estimation-error bounds, write CSV")
    p.add_argument("--trials", type=pos_int, default=100)
    p.add_argument("--dims", type=pos_int, default=10_000)
    p.add_argument("--kappa", type=pos_int, default=16)
    p.add_argument("--bpe", type=int, choices=(8, 16, 32), default=8)
    p.add_argument("--clients", type=pos_int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bound_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with 2 on bad flags
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"enccluster {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (EncClusterError, OSError) as exc:
        print(f"enccluster {args.command}: runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

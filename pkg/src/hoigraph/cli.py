"""Command-line interface.

Exit codes: 0 success, 1 configuration or usage error, 2 malformed data.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bank as pb, fcm, formats, oinfo, pipeline
from .errors import ConfigurationError, DataError, HoiGraphError

log = logging.getLogger("hoigraph")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _round(obj):
    """Floats to 9 significant digits; NaN/inf to null."""
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return float(f"{v:.9g}") if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, dict):
        return {str(k): _round(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_round(v) for v in obj]
    return obj


def _dump_json(obj, path):
    text = json.dumps(_round(obj), indent=2, sort_keys=False) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _read_features(args_path, from_csv=False):
    path = Path(args_path)
    if not path.is_file():
        raise ConfigurationError(f"feature file not found: {path}")
    return formats.read_features_csv(path) if from_csv else formats.read_features(path)


def _load_bank(path):
    if path is None or not Path(path).is_file():
        raise ConfigurationError(f"bank file not found: {path}")
    return pb.load(path)


def _load_config(path):
    if path is None:
        return formats.RunConfig()
    if not Path(path).is_file():
        raise ConfigurationError(f"config file not found: {path}")
    return formats.read_run_config(path)


def _seed(args, run=None):
    if args.seed is not None:
        return args.seed
    return run.seed if run is not None else 0


def _threads(n):
    if n < 0:
        raise ConfigurationError("--threads must be >= 0")
    return n


# ---------------------------------------------------------------- commands

def cmd_cluster(args):
    X = _read_features(args.features, args.from_csv)
    cfg = fcm.FcmConfig(m=args.m, max_iters=args.max_iters)
    k = args.k if args.k is not None else max(1, round(0.5 * X.shape[1]))
    samples = []
    for b in range(X.shape[0]):
        seed = pipeline.derive_seed(_seed(args), b)
        init = fcm.KMeansCentroids(seed) if args.init == "kmeans" else fcm.RandomMembership(seed)
        res = fcm.run(X[b], k, init, cfg)
        samples.append({
            "index": b,
            "objective": res.objective,
            "iterations": res.iterations_run,
            "converged": res.converged,
            "row_sum_max_dev": float(np.max(np.abs(res.membership.sum(axis=1) - 1.0))),
        })
    _dump_json({"k": k, "m": args.m, "samples": samples}, args.out)
    return 0


def _batches(n, size, seed, epoch):
    order = np.random.default_rng(pipeline.derive_seed(seed, epoch)).permutation(n)
    return [order[i:i + size] for i in range(0, n, size)]


def cmd_train_bank(args):
    run = _load_config(args.config)
    if args.batch_size is not None:
        run.batch_size = args.batch_size
    seed = _seed(args, run)
    feats = [_read_features(p).astype(np.float64) for p in args.features]
    n = feats[0].shape[0]
    if any(f.shape[0] != n for f in feats):
        raise ConfigurationError("all feature files must hold the same number of samples")
    if n == 0:
        raise DataError("feature file holds no samples")
    labels = formats.read_labels(args.labels, n)
    bad = [lid for lid in run.layer_overrides if lid >= len(feats)]
    if bad:
        raise ConfigurationError(f"config overrides layers {bad} but only {len(feats)} feature file(s) given")
    configs = [run.layer_config(i) for i in range(len(feats))]
    epochs = args.epochs if args.epochs is not None else run.total_epochs
    if epochs < 0:
        raise ConfigurationError("--epochs must be >= 0")

    def batch_dict(idx):
        return {i: f[idx] for i, f in enumerate(feats)}

    bank = pb.PrototypeBank({}, run.mu, run.gamma, run.schedule_state())
    first = _batches(n, run.batch_size, seed, 0)[0]
    bank = pipeline.bootstrap_bank(bank, batch_dict(first), configs, seed, _threads(args.threads))
    all_stats = []
    for epoch in range(epochs):
        batches = [(batch_dict(idx), labels[idx]) for idx in _batches(n, run.batch_size, seed, epoch)]
        bank, stats = pipeline.train_epoch(batches, bank, epoch, configs, seed, _threads(args.threads))
        all_stats.append(stats.to_dict())
        log.info("epoch %d: gate pass rate %.3f, mean J %.4g", epoch, stats.gate_pass_rate, stats.mean_objective)
    pb.save(bank, args.bank_out)
    stats_out = args.stats_out or str(args.bank_out) + ".stats.json"
    _dump_json({"epochs": all_stats}, stats_out)
    return 0


def _eval_layers(args, bank, run, feats):
    """Evaluation-phase forward of every sample through every given layer."""
    phase = pb.schedule(bank.schedule, bank.schedule.current_epoch, evaluation=True)
    results = {}
    for lid, X in enumerate(feats):
        layer = bank.layer(lid).require()
        if X.shape[2] != layer.dim:
            raise DataError(f"layer {lid}: features have D={X.shape[2]}, bank has D={layer.dim}")
        if layer.k > X.shape[1]:
            raise ConfigurationError(f"layer {lid}: bank K={layer.k} exceeds N={X.shape[1]}")
        cfg = replace(run.layer_config(lid), k=layer.k)
        seeds = [pipeline.derive_seed(_seed(args, run), lid, b) for b in range(X.shape[0])]
        outputs, _, _ = pipeline.forward_batch(X, layer, cfg, phase, seeds, None, _threads(args.threads))
        results[lid] = outputs
    return results


def cmd_forward(args):
    bank = _load_bank(args.bank)
    run = _load_config(args.config)
    feats = [_read_features(p).astype(np.float64) for p in args.features]
    results = _eval_layers(args, bank, run, feats)
    n = feats[0].shape[0]
    samples = [{"index": b, "layers": {str(lid): outs[b].diagnostics() for lid, outs in results.items()}}
               for b in range(n)]
    cardinality = {}
    for lid, outs in results.items():
        hist = outs[0].cardinality
        for o in outs[1:]:
            hist = hist.merge(o.cardinality)
        cardinality[str(lid)] = hist.to_dict()
    _dump_json({"samples": samples, "cardinality": cardinality}, args.stats_out)
    return 0


def cmd_gap(args):
    bank = _load_bank(args.bank)
    run = _load_config(args.config)
    X = _read_features(args.features).astype(np.float64)
    layer = bank.layer(args.layer)
    phase = pb.schedule(bank.schedule, bank.schedule.current_epoch, evaluation=True)
    layer.require()
    cfg = replace(run.layer_config(args.layer), k=layer.k)
    if X.shape[2] != layer.dim:
        raise DataError(f"features have D={X.shape[2]}, bank has D={layer.dim}")
    seeds = [pipeline.derive_seed(_seed(args, run), args.layer, b) for b in range(X.shape[0])]
    outputs, _, _ = pipeline.forward_batch(X, layer, cfg, phase, seeds, None, _threads(args.threads))
    scores = [pipeline.gap_score(o.centroids, layer) for o in outputs]
    labels, threshold = pipeline.gap_classify([s.gap for s in scores])

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", "s_bp", "s_bn", "s_sp", "s_sn", "gap", "label", "threshold"])
    for b, (s, y) in enumerate(zip(scores, labels)):
        w.writerow([b] + [f"{v:.9g}" for v in (s.s_bp, s.s_bn, s.s_sp, s.s_sn, s.gap)]
                   + [int(y), f"{threshold:.9g}"])
    if args.out in (None, "-"):
        sys.stdout.write(buf.getvalue())
    else:
        Path(args.out).write_text(buf.getvalue(), encoding="utf-8")
    return 0


def cmd_analyze_oinfo(args):
    path = Path(args.system)
    if not path.is_file():
        raise ConfigurationError(f"system file not found: {path}")
    try:
        desc = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise DataError(f"malformed JSON in {path}: {exc}") from None
    system = oinfo.system_from_dict(desc)
    _dump_json(oinfo.o_information(system).to_dict(), args.out)
    return 0


# ---------------------------------------------------------------- entry point

def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, help="base random seed (default: config seed, else 0)")
    common.add_argument("--threads", type=int, default=1, help="worker threads, 0 = auto (default 1)")

    p = _Parser(prog="hoigraph", description="Hypergraph high-order relation toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("cluster", parents=[common], help="run FCM on every sample")
    c.add_argument("features")
    c.add_argument("--k", type=int, help="hyperedges per sample (default round(N/2))")
    c.add_argument("--m", type=float, default=2.0)
    c.add_argument("--max-iters", type=int, default=5)
    c.add_argument("--init", choices=("random", "kmeans"), default="random")
    c.add_argument("--from-csv", action="store_true", help="read a node,dim0,... CSV instead")
    c.add_argument("--out", help="JSON output path (default stdout)")
    c.set_defaults(func=cmd_cluster)

    t = sub.add_parser("train-bank", parents=[common], help="learn a prototype bank")
    t.add_argument("features", nargs="+", help="one feature file per layer")
    t.add_argument("--labels", required=True)
    t.add_argument("--config")
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--bank-out", required=True)
    t.add_argument("--stats-out")
    t.set_defaults(func=cmd_train_bank)

    f = sub.add_parser("forward", parents=[common], help="evaluation forward pass with a frozen bank")
    f.add_argument("features", nargs="+", help="one feature file per layer")
    f.add_argument("--bank", required=True)
    f.add_argument("--config")
    f.add_argument("--stats-out", help="JSON output path (default stdout)")
    f.set_defaults(func=cmd_forward)

    g = sub.add_parser("gap", parents=[common], help="gap scores and two-means classification")
    g.add_argument("features")
    g.add_argument("--bank", required=True)
    g.add_argument("--config")
    g.add_argument("--layer", type=int, default=0)
    g.add_argument("--out", help="CSV output path (default stdout)")
    g.set_defaults(func=cmd_gap)

    o = sub.add_parser("analyze-oinfo", parents=[common], help="O-information of a system description")
    o.add_argument("system")
    o.add_argument("--out", help="JSON output path (default stdout)")
    o.set_defaults(func=cmd_analyze_oinfo)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"hoigraph: error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"hoigraph: error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"hoigraph: data error: {exc}", file=sys.stderr)
        return 2
    except HoiGraphError as exc:
        print(f"hoigraph: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

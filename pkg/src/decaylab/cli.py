"""Command-line interface.

Subcommands: gen, extend, track, train-gate, bench, dynamics, eval.
Exit codes: 0 success, 1 config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import gate, harness
from .errors import ConfigError, DataError, NumericError
from .metrics import TrackResult, evaluate
from .synthvid import extend_long, read_sequence, write_sequence
from .trackers import SiameseConfig, run_tracker


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are config errors (exit 1)
        raise ConfigError(message)


def _cmd_gen(args) -> None:
    cfg = harness.load_json(args.config)
    if args.root_seed is not None:
        cfg["root_seed"] = args.root_seed
    if args.repetitions is not None:
        cfg["repetitions"] = args.repetitions
    spec = harness.CorpusSpec.from_dict(cfg)
    built = harness.build_corpus(spec, args.out)
    for name, seq in built:
        print(f"{name}: {len(seq)} frames, tags={sorted(seq.tags)}")


def _cmd_extend(args) -> None:
    seq = read_sequence(args.seq)
    write_sequence(extend_long(seq, args.repetitions), args.out)
    print(f"extended {args.seq} x{args.repetitions} -> {args.out}")


def _cmd_track(args) -> None:
    seq = read_sequence(args.seq)
    clf = gate.load_checkpoint(args.gate) if args.gate else None
    run = run_tracker(
        args.tracker,
        seq,
        siamese_config=SiameseConfig(global_T=args.global_T),
        alpha=args.alpha,
        sim_threshold=args.sim_threshold,
        gate=clf,
        gate_threshold=args.gate_threshold,
    )
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    harness.write_predictions(args.out, run)
    print(f"{args.tracker} on {args.seq}: {len(run.boxes)} predictions -> {args.out}")


def _cmd_eval(args) -> None:
    seq = read_sequence(args.seq)
    boxes, _, _ = harness.read_predictions(args.pred)
    if len(boxes) != len(seq):
        raise DataError(
            f"{len(boxes)} predictions vs {len(seq)} frames in {args.seq}"
        )
    result = TrackResult(
        pred=boxes,
        truth=list(seq.truth),
        tags=seq.tags,
        repetition_boundaries=list(seq.repetition_boundaries),
    )
    report = evaluate(result)
    report.write(args.out)
    if args.curve:
        report.write_curve_csv(args.curve)
    print(f"auc={report.auc!r} tpr={report.tpr!r} f={report.f!r} -> {args.out}")


def _cmd_train_gate(args) -> None:
    seqs = [read_sequence(d) for d in args.seqs]
    clf, losses = harness.train_gate_from_sequences(
        seqs,
        history=args.history,
        steps=args.steps,
        batch_size=args.batch_size,
        lr=args.lr,
        momentum=args.momentum,
        seed=args.seed,
    )
    gate.save_checkpoint(clf, args.out)
    print(f"trained {args.steps} steps, final loss {losses[-1]!r} -> {args.out}")


def _cmd_bench(args) -> None:
    cfg_dict = harness.load_json(args.config)
    if args.roster:
        cfg_dict["roster"] = [t.strip() for t in args.roster.split(",") if t.strip()]
    if args.gate:
        cfg_dict["gate_checkpoint"] = args.gate
    if args.alpha is not None:
        cfg_dict["alpha"] = args.alpha
    if args.gate_threshold is not None:
        cfg_dict["gate_threshold"] = args.gate_threshold
    if args.root_seed is not None:
        cfg_dict["root_seed"] = args.root_seed
    cfg = harness.BenchmarkConfig.from_dict(cfg_dict)
    reports = harness.run_benchmark(cfg, args.out)
    for tracker in cfg.roster:
        aucs = [r.auc for r in reports[tracker].values()]
        mean = sum(aucs) / len(aucs)
        print(f"{tracker}: mean auc {mean!r}")


def _cmd_dynamics(args) -> None:
    cfg = harness.DynamicsConfig(
        sigmas=[float(s) for s in args.sigma.split(",")],
        seeds=args.seeds,
        eta=args.eta,
        root_seed=args.root_seed,
        length=args.length,
        sequence_dir=args.seq,
    )
    means = harness.run_dynamics(cfg, args.out)
    for sigma in cfg.sigmas:
        print(f"sigma={sigma!r}: mean terminal cumulative bias {means[float(sigma)]!r}")


def build_parser() -> _Parser:
    p = _Parser(prog="decaylab", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a corpus of synthetic sequences")
    g.add_argument("--config", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--root-seed", type=int, default=None, dest="root_seed")
    g.add_argument("--repetitions", type=int, default=None)
    g.set_defaults(func=_cmd_gen)

    e = sub.add_parser("extend", help="extend a sequence by repetitions")
    e.add_argument("--seq", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("-R", "--repetitions", type=int, required=True)
    e.set_defaults(func=_cmd_extend)

    t = sub.add_parser("track", help="run one tracker over one sequence")
    t.add_argument("--tracker", required=True)
    t.add_argument("--seq", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--gate", default=None)
    t.add_argument("--alpha", type=float, default=0.05)
    t.add_argument("--sim-threshold", type=float, default=0.5, dest="sim_threshold")
    t.add_argument("--gate-threshold", type=float, default=0.9, dest="gate_threshold")
    t.add_argument("--global-T", type=int, default=15, dest="global_T")
    t.set_defaults(func=_cmd_track)

    ev = sub.add_parser("eval", help="evaluate a prediction stream")
    ev.add_argument("--seq", required=True)
    ev.add_argument("--pred", required=True)
    ev.add_argument("--out", required=True)
    ev.add_argument("--curve", default=None)
    ev.set_defaults(func=_cmd_eval)

    tg = sub.add_parser("train-gate", help="train the decay recognition network")
    tg.add_argument("--seqs", nargs="+", required=True)
    tg.add_argument("--out", required=True)
    tg.add_argument("--history", type=int, default=8)
    tg.add_argument("--steps", type=int, default=400)
    tg.add_argument("--batch-size", type=int, default=32, dest="batch_size")
    tg.add_argument("--lr", type=float, default=0.01)
    tg.add_argument("--momentum", type=float, default=0.9)
    tg.add_argument("--seed", type=int, default=0)
    tg.set_defaults(func=_cmd_train_gate)

    b = sub.add_parser("bench", help="run a full benchmark")
    b.add_argument("--config", required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--roster", default=None, help="comma-separated tracker list")
    b.add_argument("--gate", default=None)
    b.add_argument("--alpha", type=float, default=None)
    b.add_argument("--gate-threshold", type=float, default=None, dest="gate_threshold")
    b.add_argument("--root-seed", type=int, default=None, dest="root_seed")
    b.set_defaults(func=_cmd_bench)

    d = sub.add_parser("dynamics", help="run decay-dynamics experiments")
    d.add_argument("--out", required=True)
    d.add_argument("--sigma", default="0.5,1.0,2.0")
    d.add_argument("--seeds", type=int, default=10)
    d.add_argument("--eta", type=float, default=0.005)
    d.add_argument("--root-seed", type=int, default=0, dest="root_seed")
    d.add_argument("--length", type=int, default=120)
    d.add_argument("--seq", default=None)
    d.set_defaults(func=_cmd_dynamics)

    return p


def main(argv=None) -> int:
    from . import kernels

    kernels.tune_allocator()
    try:
        args = build_parser().parse_args(argv)
        args.func(args)
        return 0
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

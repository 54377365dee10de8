"""Command-line interface: ``python3 -m collarnet <subcommand> ...``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import analysis, stream
from .core import (
    CollarNetError, ConfigurationError, Dims, Variant, load_model, param_count,
    read_dataset_csv, save_model, write_dataset_csv,
)
from .evaluator import EvalReport, cross_dataset_eval, evaluate, loao_cv
from .synthgen import default_config, gen_dataset, shift_means
from .trainer import DTYPES, Hyper, gradcheck, predict, profile, train, write_loss_csv

log = logging.getLogger("collarnet")


@dataclass
class RunConfig:
    subcommand: str
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    hyper: Hyper | None = None
    seed: int = 0
    variant: Variant = Variant.NONLINEAR
    precision: str = "float64"

    def validate(self) -> None:
        for name, p in self.inputs.items():
            if p is not None and not Path(p).is_file():
                raise ConfigurationError(f"--{name}: no such file: {p}")
        for name, p in self.outputs.items():
            if p is not None and not Path(p).parent.is_dir():
                raise ConfigurationError(f"--{name}: directory does not exist: {Path(p).parent}")


# --- argument parsing -----------------------------------------------------------

def _add_training_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training")
    g.add_argument("--profile", choices=["5class", "6class"], default="5class",
                   help="hyperparameter profile (default: 5class)")
    g.add_argument("--variant", choices=["nonlinear", "linear", "ablated"], default="nonlinear")
    g.add_argument("--lr", type=float, help="learning rate override")
    g.add_argument("--wd", type=float, help="weight decay override")
    g.add_argument("--batch-size", type=int)
    g.add_argument("--iterations", type=int)
    g.add_argument("--precision", choices=sorted(DTYPES), default="float32")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--k1", type=int)
    g.add_argument("--k2", type=int)
    g.add_argument("--l", type=int, dest="hidden")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="collarnet",
        description="Learnable-filter behavior classifier for triaxial accelerometer segments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="<command>")

    p = sub.add_parser("synth", help="generate a synthetic labeled dataset CSV")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--animals", type=int)
    p.add_argument("--mean-shift", type=float, nargs=3, metavar=("DX", "DY", "DZ"),
                   help="add a constant offset to every class mean (e.g. another collar fit)")
    p.add_argument("--dataset-id", default="synth")

    p = sub.add_parser("train", help="train a model on a dataset CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--model-out", required=True)
    p.add_argument("--loss-out")
    _add_training_flags(p)

    p = sub.add_parser("eval", help="evaluate a model on a dataset CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="report JSON (default: stdout)")

    p = sub.add_parser("loao", help="leave-one-animal-out cross-validation")
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="report JSON (default: stdout)")
    _add_training_flags(p)

    p = sub.add_parser("crossval-datasets", help="train on one dataset, test on another")
    p.add_argument("--train", required=True, dest="train_data")
    p.add_argument("--test", required=True, dest="test_data")
    p.add_argument("--out", help="report JSON (default: stdout)")
    _add_training_flags(p)

    p = sub.add_parser("infer", help="classify every segment of a dataset CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="predictions CSV (default: stdout)")

    p = sub.add_parser("stream", help="per-sample streaming inference over a t,ax,ay,az CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--samples", required=True)
    p.add_argument("--out", help="segment_index,class_index,f1..f9 CSV (default: stdout)")
    p.add_argument("--precision", choices=sorted(DTYPES), default="float64")

    p = sub.add_parser("analyze", help="ASD, FIR frequency response and feature export CSVs")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--six", action="store_true", help="export only f1 and f2 (6 features)")
    p.add_argument("--n-points", type=int, default=512, help="frequency-response grid size")

    p = sub.add_parser("complexity", help="parameter and operation counts for given dims")
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--k1", type=int, default=8)
    p.add_argument("--k2", type=int, default=8)
    p.add_argument("--l", type=int, default=6, dest="hidden")
    p.add_argument("--c", type=int, default=5)
    p.add_argument("--measured", action="store_true",
                   help="also run the instrumented streaming engine and show its counts")

    p = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--variant", choices=["nonlinear", "linear", "ablated", "all"], default="all")
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--tol", type=float, default=1e-5)
    return parser


def _hyper_and_dims(args, N: int, C: int) -> tuple[Hyper, Dims]:
    hyper, dims = profile(args.profile, N)
    if dims.C != C:
        raise ConfigurationError(f"profile {args.profile} is for {dims.C} classes, data has {C}")
    overrides = {"learning_rate": args.lr, "weight_decay": args.wd,
                 "batch_size": args.batch_size, "iterations": args.iterations}
    hyper = replace(hyper, seed=args.seed, precision=args.precision,
                    **{k: v for k, v in overrides.items() if v is not None})
    dims = replace(dims, **{k: v for k, v in
                            {"K1": args.k1, "K2": args.k2, "L": args.hidden}.items() if v is not None})
    return hyper, dims


def _emit(text: str, out) -> None:
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _load(path):
    return load_model(Path(path).read_bytes())


# --- subcommands ----------------------------------------------------------------

def cmd_synth(args) -> None:
    RunConfig("synth", outputs={"out": args.out}, seed=args.seed).validate()
    cfg = default_config(args.seed)
    if args.animals:
        cfg = replace(cfg, animals=args.animals)
    if args.mean_shift:
        cfg = shift_means(cfg, args.mean_shift)
    cfg = replace(cfg, dataset_id=args.dataset_id)
    ds = gen_dataset(cfg)
    write_dataset_csv(ds, args.out)
    print(f"wrote {len(ds)} segments, {len(ds.animals())} animals, classes {ds.class_names}")


def cmd_train(args) -> None:
    RunConfig("train", inputs={"data": args.data},
              outputs={"model-out": args.model_out, "loss-out": args.loss_out}).validate()
    ds = read_dataset_csv(args.data)
    hyper, dims = _hyper_and_dims(args, ds.N, ds.C)
    t0 = time.time()
    params, history = train(ds, hyper, dims, args.variant)
    Path(args.model_out).write_bytes(save_model(params))
    if args.loss_out:
        write_loss_csv(history, args.loss_out)
    tail = history[-min(100, len(history)):].mean() if len(history) else float("nan")
    print(f"trained {args.variant} model, {hyper.iterations} iterations in "
          f"{time.time() - t0:.1f} s, final mean loss {tail:.4f}")


def cmd_eval(args) -> None:
    RunConfig("eval", inputs={"model": args.model, "data": args.data},
              outputs={"out": args.out}).validate()
    report = evaluate(_load(args.model), read_dataset_csv(args.data))
    _emit(report.to_json(indent=2), args.out)
    if args.out:
        print(report.summary())


def _report_cmd(args, make_report) -> None:
    report: EvalReport = make_report()
    _emit(report.to_json(indent=2), args.out)
    if args.out:
        print(report.summary())


def cmd_loao(args) -> None:
    RunConfig("loao", inputs={"data": args.data}, outputs={"out": args.out}).validate()
    ds = read_dataset_csv(args.data)
    hyper, dims = _hyper_and_dims(args, ds.N, ds.C)
    _report_cmd(args, lambda: loao_cv(ds, hyper, dims, args.variant))


def cmd_crossval(args) -> None:
    RunConfig("crossval-datasets", inputs={"train": args.train_data, "test": args.test_data},
              outputs={"out": args.out}).validate()
    tr, te = read_dataset_csv(args.train_data), read_dataset_csv(args.test_data)
    hyper, dims = _hyper_and_dims(args, tr.N, tr.C)
    _report_cmd(args, lambda: cross_dataset_eval(tr, te, hyper, dims, args.variant))


def cmd_infer(args) -> None:
    RunConfig("infer", inputs={"model": args.model, "data": args.data},
              outputs={"out": args.out}).validate()
    params, ds = _load(args.model), read_dataset_csv(args.data)
    if ds.N != params.dims.N:
        raise ConfigurationError(f"segments have N={ds.N}, model expects N={params.dims.N}")
    preds = predict(ds.readings, params)
    lines = ["segment_index,class_index"] + [f"{i},{int(c)}" for i, c in enumerate(preds)]
    _emit("\n".join(lines), args.out)


def cmd_stream(args) -> None:
    RunConfig("stream", inputs={"model": args.model, "samples": args.samples},
              outputs={"out": args.out}).validate()
    params = _load(args.model)
    rows = stream.stream_segments(params, stream.read_samples_csv(args.samples),
                                  DTYPES[args.precision])
    if args.out:
        n = stream.write_stream_csv(rows, args.out)
        print(f"wrote {n} segment predictions")
    else:
        w = csv.writer(sys.stdout)
        w.writerow(["segment_index", "class_index"] + [f"f{i}" for i in range(1, 10)])
        for index, cls, f in rows:
            w.writerow([index, cls] + [repr(float(v)) for v in f])


def cmd_analyze(args) -> None:
    RunConfig("analyze", inputs={"model": args.model, "data": args.data}).validate()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    params, ds = _load(args.model), read_dataset_csv(args.data)
    stages = ["normalized", "iir_filtered"]
    if params.variant != Variant.ABLATED:
        stages.append("nonlinear_filtered")
        analysis.write_freqz_csv(params, out / "freqz.csv", args.n_points)
    curves = [c for s in stages for c in analysis.asd(ds, params, s)]
    analysis.write_asd_csv(curves, out / "asd.csv")
    header, rows = analysis.export_features(ds, params, six=args.six)
    analysis.write_features_csv(header, rows, out / "features.csv")
    print(f"wrote {', '.join(sorted(p.name for p in out.glob('*.csv')))} to {out}")


def cmd_complexity(args) -> None:
    dims = Dims(N=args.n, K1=args.k1, K2=args.k2, L=args.hidden, C=args.c)
    _, total_params = param_count(dims)
    total = stream.op_count_report(dims)["total"]
    print(stream.complexity_table(dims))
    print(f"total params {total_params}")
    for k, v in total.as_dict().items():
        print(f"{k} {v}")
    if args.measured:
        from .core import NormStats, init_model
        params = init_model(dims, 0, Variant.NONLINEAR, NormStats.identity())
        engine = stream.StreamEngine(params, count_ops=True)
        for _ in range(dims.N):
            engine.push((0, 0, 0))
        print("instrumented streaming engine:")
        for stage in (*stream.STAGES, "total"):
            measured = engine.last_ops[stage].as_dict()
            formula = stream.op_count_report(dims)[stage].as_dict()
            diff = {k: measured[k] - formula[k] for k in measured if measured[k] != formula[k]}
            print(f"  {stage:<15s} {measured}" + (f"  differs by {diff}" if diff else ""))


def cmd_gradcheck(args) -> int:
    variants = ["nonlinear", "linear", "ablated"] if args.variant == "all" else [args.variant]
    worst = 0.0
    for v in variants:
        res = gradcheck(args.seed, v, eps=args.eps)
        d = res.dims
        print(f"{v}: N={d.N} K1={d.K1} K2={d.K2} L={d.L} C={d.C} batch={res.batch_size} "
              f"max rel err {res.max_rel_error:.3e}")
        for name, err in res.per_param.items():
            print(f"  {name:<12s} {err:.3e}")
        worst = max(worst, res.max_rel_error)
    print(f"max relative error {worst:.3e}")
    return 0 if worst < args.tol else 1


COMMANDS = {
    "synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "loao": cmd_loao,
    "crossval-datasets": cmd_crossval, "infer": cmd_infer, "stream": cmd_stream,
    "analyze": cmd_analyze, "complexity": cmd_complexity, "gradcheck": cmd_gradcheck,
}


def run(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed its message
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        rc = COMMANDS[args.command](args)
    except (CollarNetError, OSError, ValueError) as exc:
        print(f"collarnet {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return int(rc or 0)


def main() -> None:
    sys.exit(run())

"""Command-line interface: ``unicls <subcommand> [flags]``.

Exit codes: 0 on success, 2 on a usage error, 1 on a runtime error (the
message goes to stderr).  Every written report carries the full resolved
configuration under its ``extra`` key.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from pathlib import Path

from .core import LabeledDataset, MetricBatch, UniclsError, compute_metrics
from .data_io import (
    FORMAT_VERSION,
    SyntheticSpec,
    dumps_tree,
    generate_synthetic,
    load_features_csv,
    load_head,
    load_report,
    save_features_csv,
    save_histogram_csv,
    save_report,
    split_dataset,
)
from .evaluation import distribution_report, evaluate
from .losses import EXTRA_LOSS_NAMES, TABLE_LOSS_NAMES, LossSpec
from .theory import (
    BoundedMetricModel,
    corollary_condition,
    loss_floor,
    numeric_stationary_bias,
    stationary_bias,
)
from .trainer import Model, TrainConfig, TrainRun, learned_threshold_accuracy, sweep_bias_init, sweep_gamma, train

OUT_ENV = "UNICLS_OUT"
DEFAULT_OUT = "unicls-out"
HELP_WIDTH = 100


def _formatter(prog):
    # fixed width keeps --help output independent of the terminal
    return argparse.HelpFormatter(prog, width=HELP_WIDTH)


def _loss_name(value: str) -> str:
    if value in TABLE_LOSS_NAMES or value in EXTRA_LOSS_NAMES:
        return value
    raise argparse.ArgumentTypeError(
        f"unknown loss {value!r}; valid names: {', '.join(TABLE_LOSS_NAMES)}"
        f" (also accepted: {', '.join(EXTRA_LOSS_NAMES)})")


def _int_list(value: str) -> list[int]:
    if not value.strip():
        return []
    try:
        return [int(v) for v in value.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {value!r}") from None


def _float_list(value: str) -> list[float]:
    try:
        out = [float(v) for v in value.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {value!r}") from None
    if not out:
        raise argparse.ArgumentTypeError("empty list")
    return out


def _bias_mode_arg(value: str) -> int:
    try:
        v = int(value)
    except ValueError:
        v = -1
    if not 0 <= v <= 7:
        raise argparse.ArgumentTypeError(f"bias init mode must be an integer in 0..7, got {value!r}")
    return v


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("data source (exactly one of --features / --synthetic)")
    src = g.add_mutually_exclusive_group(required=True)
    src.add_argument("--features", metavar="CSV", help="feature CSV with header id,label,f0,...")
    src.add_argument("--synthetic", action="store_true", help="generate Gaussian clusters instead")
    g.add_argument("--classes", type=int, default=16, help="number of classes N (default: %(default)s)")
    g.add_argument("--dim", type=int, default=32, help="feature dimension M (default: %(default)s)")
    g.add_argument("--samples-per-class", type=int, default=100, help="default: %(default)s")
    g.add_argument("--center-scale", type=float, default=10.0, help="cluster center radius (default: %(default)s)")
    g.add_argument("--noise", type=float, default=1.0, help="per-coordinate noise sigma (default: %(default)s)")
    g.add_argument("--center-offset", type=float, default=0.0,
                   help="constant added to every coordinate (default: %(default)s)")
    g.add_argument("--data-seed", type=int, default=0, help="seed of the synthetic data (default: %(default)s)")
    g.add_argument("--test-fraction", type=float, default=0.0,
                   help="stratified held-out fraction used for evaluation; 0 evaluates on the "
                        "training data (default: %(default)s)")
    g.add_argument("--split-seed", type=int, default=0, help="default: %(default)s")


def _add_train_flags(p: argparse.ArgumentParser, loss_required: bool = True) -> None:
    g = p.add_argument_group("training")
    g.add_argument("--loss", type=_loss_name, required=loss_required, metavar="NAME",
                   help=f"one of {', '.join(TABLE_LOSS_NAMES)}")
    g.add_argument("--gamma", type=float, default=96.0, help="normalized-head scale (default: %(default)s)")
    g.add_argument("--epochs", type=int, default=50, help="default: %(default)s")
    g.add_argument("--batch-size", type=int, default=64, help="default: %(default)s")
    g.add_argument("--lr", type=float, default=0.1, help="initial learning rate (default: %(default)s)")
    g.add_argument("--momentum", type=float, default=0.9, help="default: %(default)s")
    g.add_argument("--weight-decay", type=float, default=0.0, help="default: %(default)s")
    g.add_argument("--hidden", type=_int_list, default=[], metavar="W1,W2,...",
                   help="hidden layer widths; empty for a linear model (default: none)")
    g.add_argument("--bias-init", type=_bias_mode_arg, default=0, metavar="0..7",
                   help="bias initialization mode (default: %(default)s)")
    g.add_argument("--seed", type=int, default=0, help="training seed (default: %(default)s)")


def _add_out(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", metavar="DIR",
                   help=f"output directory (default: ${OUT_ENV} or ./{DEFAULT_OUT})")


def _add_head_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--features", metavar="CSV", required=True, help="feature CSV with header id,label,f0,...")
    p.add_argument("--head", metavar="JSON", required=True,
                   help="head.json (bare or report tree) or run.json from train")
    p.add_argument("--raw", action="store_true", help="evaluate metrics without the learned bias")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="unicls", formatter_class=_formatter,
                                     description="Uniform classification losses, accuracies and theory checks.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    p = sub.add_parser("train", formatter_class=_formatter, help="train one model and report accuracies",
                       description="Train one model; writes report.json, run.json and head.json.")
    _add_data_flags(p)
    _add_train_flags(p)
    _add_out(p)

    p = sub.add_parser("evaluate", formatter_class=_formatter, help="accuracies of a saved head on a feature CSV",
                       description="Evaluate a saved head on a feature CSV; prints and writes report.json.")
    _add_head_flags(p)
    _add_out(p)

    p = sub.add_parser("sweep-gamma", formatter_class=_formatter, help="train once per scale factor",
                       description="Train a normalized-family loss once per gamma; writes sweep.json and sweep.csv.")
    _add_data_flags(p)
    _add_train_flags(p)
    p.add_argument("--gammas", type=_float_list, default=[1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 96.0],
                   metavar="G1,G2,...", help="default: 1,2,4,8,16,32,64,96")
    p.add_argument("--workers", type=int, default=1, help="worker threads (default: %(default)s)")
    _add_out(p)

    p = sub.add_parser("sweep-bias-init", formatter_class=_formatter, help="train once per bias init mode",
                       description="Train once per bias initialization mode; writes sweep.json and sweep.csv.")
    _add_data_flags(p)
    _add_train_flags(p)
    p.add_argument("--modes", type=_int_list, default=list(range(8)), metavar="M1,M2,...",
                   help="default: 0,1,2,3,4,5,6,7")
    p.add_argument("--workers", type=int, default=1, help="worker threads (default: %(default)s)")
    _add_out(p)

    p = sub.add_parser("dist-export", formatter_class=_formatter, help="export metric distribution statistics",
                       description="Positive/negative metric statistics over sample-wise correct samples; "
                                   "writes distribution.json and histogram.csv.")
    _add_head_flags(p)
    p.add_argument("--bins", type=int, default=50, help="histogram bins (default: %(default)s)")
    _add_out(p)

    p = sub.add_parser("theory-check", formatter_class=_formatter, help="stationary bias and its feasibility",
                       description="Print one row per (N, gamma) pair: the bias feasibility condition, the "
                                   "closed-form and numeric stationary bias, their difference and the loss floor.")
    p.add_argument("--classes", type=_int_list, required=True, metavar="N1,N2,...", help="numbers of classes N")
    bounds = p.add_mutually_exclusive_group(required=True)
    bounds.add_argument("--gamma", type=_float_list, metavar="G1,G2,...",
                        help="normalized head scales: metrics in [-gamma, gamma]")
    bounds.add_argument("--bounds", type=_float_list, metavar="A,B", help="explicit metric range [A, B]")

    p = sub.add_parser("gen-data", formatter_class=_formatter, help="write a synthetic feature CSV",
                       description="Write a synthetic dataset as features.csv in the output directory.")
    p.add_argument("--classes", type=int, default=16, help="default: %(default)s")
    p.add_argument("--dim", type=int, default=32, help="default: %(default)s")
    p.add_argument("--samples-per-class", type=int, default=100, help="default: %(default)s")
    p.add_argument("--center-scale", type=float, default=10.0, help="default: %(default)s")
    p.add_argument("--noise", type=float, default=1.0, help="default: %(default)s")
    p.add_argument("--center-offset", type=float, default=0.0, help="default: %(default)s")
    p.add_argument("--data-seed", type=int, default=0, help="default: %(default)s")
    _add_out(p)
    return parser


# -- helpers -------------------------------------------------------------

def _out_dir(args) -> Path:
    return Path(args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT)


def _echo(args) -> dict:
    d = {k: v for k, v in vars(args).items() if not callable(v)}
    d["out"] = str(_out_dir(args)) if "out" in d else None
    d["format_version"] = FORMAT_VERSION
    return {"config": d}


def _synthetic_spec(args) -> SyntheticSpec:
    return SyntheticSpec(args.classes, args.dim, args.samples_per_class, args.center_scale,
                         args.noise, args.data_seed, args.center_offset)


def load_data(args) -> tuple[LabeledDataset, LabeledDataset]:
    """(train, eval) datasets described by the data flags."""
    if args.features:
        data = load_features_csv(args.features)
        for w in data.warnings:
            print(f"warning: {w}", file=sys.stderr)
    else:
        data = generate_synthetic(_synthetic_spec(args))
    if args.test_fraction > 0:
        return split_dataset(data, args.test_fraction, args.split_seed)
    return data, data


def train_config(args, loss: str | None = None) -> TrainConfig:
    return TrainConfig(LossSpec.from_name(loss or args.loss, args.gamma), epochs=args.epochs,
                       batch_size=args.batch_size, lr0=args.lr, momentum=args.momentum, seed=args.seed,
                       hidden_dims=list(args.hidden), bias_init_mode=args.bias_init,
                       weight_decay=args.weight_decay)


def _load_model(path) -> Model:
    """A saved run gives the full model; a saved head gives a head-only model."""
    try:
        obj = load_report(path)
    except UniclsError:
        obj = None
    if isinstance(obj, TrainRun):
        return obj.final_model
    return Model([], load_head(path))


def _eval_metrics(args) -> MetricBatch:
    data = load_features_csv(args.features)
    model = _load_model(args.head)
    if data.num_classes < model.head.num_classes:
        data = LabeledDataset(data.features, data.labels, model.head.num_classes)
    if data.num_classes != model.head.num_classes:
        raise UniclsError(f"features have {data.num_classes} classes, head has {model.head.num_classes}")
    if model.layers:
        return model.metrics(data, include_bias=not args.raw)
    return compute_metrics(model.head, data, include_bias=not args.raw)


def _fmt(x) -> str:
    return f"{float(x):.6g}"


def _print_report(rep) -> None:
    print(f"a_sw={_fmt(rep.a_sw)} a_cw={_fmt(rep.a_cw)} a_uni={_fmt(rep.a_uni)} t_star={_fmt(rep.t_star)}")


def _sweep_outputs(rows, label: str, out: Path, echo: dict) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([label, "condition", "a_sw", "a_cw", "a_uni", "t_star", "final_loss"])
    tree_rows = []
    for r in rows:
        cond = "" if r.condition is None else str(r.condition).lower()
        w.writerow([repr(r.value), cond, repr(r.report.a_sw), repr(r.report.a_cw), repr(r.report.a_uni),
                    repr(r.t_star), repr(r.final_loss)])
        tree_rows.append({label: r.value, "condition": r.condition, "a_sw": r.report.a_sw,
                          "a_cw": r.report.a_cw, "a_uni": r.report.a_uni, "t_star": r.t_star,
                          "final_loss": r.final_loss, "learned_bias": r.learned_bias})
        print(f"{label}={_fmt(r.value)} condition={cond or '-'} a_sw={_fmt(r.report.a_sw)} "
              f"a_uni={_fmt(r.report.a_uni)} t_star={_fmt(r.t_star)}")
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.csv").write_text(buf.getvalue())
    tree = {"kind": "Sweep", "version": FORMAT_VERSION, "data": {"parameter": label, "rows": tree_rows},
            "extra": echo}
    (out / "sweep.json").write_text(dumps_tree(tree))


# -- subcommands ---------------------------------------------------------

def cmd_train(args) -> int:
    data, eval_data = load_data(args)
    cfg = train_config(args)
    run = train(cfg, data, eval_data)
    rep = run.eval_history[-1] if run.eval_history else evaluate(run.final_model.metrics(eval_data))
    out = _out_dir(args)
    extra = _echo(args)
    extra["train_config"] = cfg.to_dict()
    extra["learned_bias"] = run.final_head.bias.tolist()
    extra["final_loss"] = run.loss_curve[-1] if run.loss_curve else None
    if run.final_head.bias_mode == "unified":
        at_learned, at_star = learned_threshold_accuracy(run, eval_data)
        extra["a_uni_at_learned_threshold"] = at_learned
        extra["a_uni_raw_at_t_star"] = at_star
    save_report(rep, out / "report.json", extra)
    save_report(run, out / "run.json", _echo(args))
    save_report(run.final_head, out / "head.json", _echo(args))
    _print_report(rep)
    b = run.final_head.bias
    print(f"learned_bias: mean={_fmt(b.mean())} min={_fmt(b.min())} max={_fmt(b.max())}")
    print(f"wrote {out / 'report.json'}, {out / 'run.json'}, {out / 'head.json'}")
    return 0


def cmd_evaluate(args) -> int:
    rep = evaluate(_eval_metrics(args))
    _print_report(rep)
    if args.out or os.environ.get(OUT_ENV):
        out = _out_dir(args)
        save_report(rep, out / "report.json", _echo(args))
        print(f"wrote {out / 'report.json'}")
    return 0


def cmd_sweep_gamma(args) -> int:
    data, eval_data = load_data(args)
    cfg = train_config(args)
    rows = sweep_gamma(cfg, args.gammas, data, eval_data, workers=args.workers)
    echo = _echo(args)
    echo["train_config"] = cfg.to_dict()
    _sweep_outputs(rows, "gamma", _out_dir(args), echo)
    return 0


def cmd_sweep_bias_init(args) -> int:
    for m in args.modes:
        if not 0 <= m <= 7:
            raise UniclsError(f"bias init mode {m} outside 0..7")
    data, eval_data = load_data(args)
    cfg = train_config(args)
    rows = sweep_bias_init(cfg, args.modes, data, eval_data, workers=args.workers)
    echo = _echo(args)
    echo["train_config"] = cfg.to_dict()
    _sweep_outputs(rows, "bias_init", _out_dir(args), echo)
    return 0


def cmd_dist_export(args) -> int:
    rep = distribution_report(_eval_metrics(args), num_bins=args.bins)
    out = _out_dir(args)
    save_report(rep, out / "distribution.json", _echo(args))
    save_histogram_csv(rep, out / "histogram.csv")
    print(f"min_pos={_fmt(rep.min_pos)} max_neg={_fmt(rep.max_neg)} overlap_width={_fmt(rep.overlap_width)} "
          f"std_min_pos={_fmt(rep.std_min_pos)} std_max_neg={_fmt(rep.std_max_neg)}")
    print(f"wrote {out / 'distribution.json'}, {out / 'histogram.csv'}")
    return 0


def _theory_row(model: BoundedMetricModel, gamma: float | None) -> str:
    cond = corollary_condition(model)
    b = stationary_bias(model)
    b_num = numeric_stationary_bias(model)
    cells = [f"N={model.num_classes_N}"]
    if gamma is not None:
        cells.append(f"gamma={_fmt(gamma)}")
    cells += [f"A={_fmt(model.lower_bound_A)}", f"B={_fmt(model.upper_bound_B)}",
              f"condition={str(cond).lower()}", f"stationary_bias={b!r}", f"numeric_bias={b_num!r}",
              f"abs_diff={abs(b - b_num):.3e}",
              f"bias_inside_range={str(model.lower_bound_A < b < model.upper_bound_B).lower()}",
              f"loss_floor={loss_floor(model)!r}"]
    return " ".join(cells)


def cmd_theory_check(args) -> int:
    if args.bounds is not None and len(args.bounds) != 2:
        raise UniclsError("--bounds takes exactly two numbers A,B")
    if not args.classes:
        raise UniclsError("--classes needs at least one value")
    for n in args.classes:
        if args.gamma is not None:
            for g in args.gamma:
                print(_theory_row(BoundedMetricModel.normalized(g, n), g))
        else:
            print(_theory_row(BoundedMetricModel(args.bounds[0], args.bounds[1], n), None))
    return 0


def cmd_gen_data(args) -> int:
    data = generate_synthetic(_synthetic_spec(args))
    path = _out_dir(args) / "features.csv"
    save_features_csv(data, path)
    print(f"wrote {path} ({len(data)} samples, N={data.num_classes}, M={data.dim})")
    return 0


COMMANDS = {
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "sweep-gamma": cmd_sweep_gamma,
    "sweep-bias-init": cmd_sweep_bias_init,
    "dist-export": cmd_dist_export,
    "theory-check": cmd_theory_check,
    "gen-data": cmd_gen_data,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return COMMANDS[args.command](args)
    except (UniclsError, ArithmeticError, OSError) as exc:
        print(f"unicls: error: {exc}", file=sys.stderr)
        return 1


run_cli = main


if __name__ == "__main__":
    sys.exit(main())

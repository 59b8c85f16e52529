"""
heatcast command line.

    heatcast generate      synthetic hourly CSV
    heatcast train         model file from a CSV and a plan
    heatcast predict       prediction CSV from a model and a CSV
    heatcast evaluate      evaluation report from a prediction CSV
    heatcast sweep | data-study | factor-study

Exit codes: 0 success, 2 invalid input or configuration, 1 file system error.
"""

import argparse
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

import common.slog as slog
from heatcast import experiments
from heatcast.config import ExperimentPlan, apply_overrides, load_plan, load_shard
from heatcast.dataset import (
    DatasetVariant,
    SuperVectorSet,
    build_supervectors,
    compute_stats,
    filter_working_days,
    load_csv,
    load_holidays,
)
from heatcast.enn import fit, init_model, load_model, predict_pairs, save_model
from heatcast.errors import ConfigurationError, EmptyDatasetError, HeatcastError
from heatcast.evaluation import build_report
from heatcast.report import read_predictions, write_evaluation_report, write_json, write_predictions
from heatcast.synth import export_csv, generate

SERIES_FILE = "hourly.csv"
MODEL_FILE = "model.json"
PREDICTIONS_FILE = "predictions.csv"
TRACE_FILE = "trace.json"

EXIT_OK = 0
EXIT_IO = 1
EXIT_INVALID = 2


def _plan(args: argparse.Namespace) -> ExperimentPlan:
    plan = load_plan(args.config)
    return apply_overrides(
        plan,
        seed=None if args.command == "generate" else args.seed,
        out=args.out,
        concurrency=getattr(args, "concurrency", None),
        trials=getattr(args, "trials", None),
        epochs=getattr(args, "epochs", None),
        learning_rate=getattr(args, "learning_rate", None),
        patience=getattr(args, "patience", None),
        csv=getattr(args, "csv", None),
        windows=getattr(args, "window", None),
        layers=getattr(args, "layers", None),
        variants=getattr(args, "variant", None),
        train_range=getattr(args, "train_range", None),
        validation_range=getattr(args, "validation_range", None),
    )


def _working_table(plan: ExperimentPlan):
    if not plan.data.csv:
        raise ConfigurationError("No input CSV; pass --csv or set data.csv in the plan.")
    table = load_csv(plan.data.csv)
    holidays = load_holidays(plan.data.holidays) if plan.data.holidays else None
    return filter_working_days(table, holidays)


# === Commands ===


def cmd_generate(args: argparse.Namespace) -> int:
    plan = _plan(args)
    synth = plan.data.synth
    if args.seed is not None:
        synth = replace(synth, seed=args.seed)
    if args.years is not None:
        synth = replace(synth, years=args.years)
    path = Path(plan.core.out) / SERIES_FILE
    export_csv(generate(synth), path)
    slog.info("Synthetic CSV written.", context={"path": path, "seed": synth.seed, "years": synth.years})
    return EXIT_OK


def _validation_set(table, variant: DatasetVariant, window: int, stats) -> Optional[SuperVectorSet]:
    try:
        return build_supervectors(table, variant, window, 1, stats)
    except EmptyDatasetError:
        slog.warn("No validation hours; training without early stopping.", context={"window": window})
        return None


def cmd_train(args: argparse.Namespace) -> int:
    plan = _plan(args)
    window, layers = plan.grid.windows[0], plan.grid.hidden_layers[0]
    variant = DatasetVariant.parse(plan.grid.variants[0])
    table = _working_table(plan)

    train_table = table.between(plan.split.train.start, plan.split.train.end)
    validation_table = table.between(plan.split.validation.start, plan.split.validation.end)
    stats = compute_stats(train_table, variant.channels)
    train_set = build_supervectors(
        train_table, variant, window, plan.grid.stride(window), stats, hourly_context=plan.grid.hourly_context
    )
    validation_set = _validation_set(validation_table, variant, window, stats)

    cfg = replace(plan.train, seed=plan.core.seed)
    model = init_model(layers, train_set.input_size, cfg.hidden_size, cfg.seed, init_bound=cfg.init_bound)
    with slog.timed("Training finished.", {"window": window, "layers": layers, "variant": variant.label}) as ctx:
        trace = fit(model, train_set, validation_set, cfg)
        ctx.update(epochs=trace.final_epoch, final_loss=trace.losses[-1])

    out = Path(plan.core.out)
    save_model(model, out / MODEL_FILE)
    write_json({"plan": plan.to_dict(), "trace": trace.to_dict()}, out / TRACE_FILE)
    slog.info("Model written.", context={"path": out / MODEL_FILE, "input_size": model.input_size})
    return EXIT_OK


def _model_variant(factor_order) -> DatasetVariant:
    for variant in DatasetVariant:
        if variant.factors == tuple(factor_order):
            return variant
    raise ConfigurationError(f"Model factors {list(factor_order)} match no dataset variant.")


def cmd_predict(args: argparse.Namespace) -> int:
    plan = _plan(args)
    model = load_model(args.model)
    if model.norm_stats is None:
        raise ConfigurationError(f"Model file {args.model} carries no normalization statistics.")
    variant = _model_variant(model.factor_order)
    if args.variant and DatasetVariant.parse(args.variant[0]) is not variant:
        raise ConfigurationError(f"Model was trained on variant {variant.label}, not {args.variant[0]}.")
    window = args.window[0] if args.window else model.window_length

    table = _working_table(plan)
    data = build_supervectors(table, variant, window, 1, model.norm_stats)
    pairs = predict_pairs(model, data)
    path = Path(plan.core.out) / PREDICTIONS_FILE
    write_predictions(pairs, path)
    slog.info("Predictions written.", context={"path": path, "count": len(pairs)})
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    plan = _plan(args)
    width = args.bin_width if args.bin_width is not None else plan.core.histogram_bin_width
    report = build_report(read_predictions(args.predictions), width)
    write_evaluation_report(report, plan.core.out)
    return EXIT_OK


def cmd_study(args: argparse.Namespace) -> int:
    plan = _plan(args)
    shard = load_shard(args.shard)
    report = experiments.run_study(args.command, plan, shard)
    if report is None:
        slog.info("Shard finished; other shards still pending.", context={"shard": args.shard})
    return EXIT_OK


# === Parser ===


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="plan JSON (a study report is accepted too)")
    p.add_argument("--seed", type=int, help="master seed (synthetic seed for generate)")
    p.add_argument("--out", help="output directory")


def _model_shape(p: argparse.ArgumentParser, many: bool) -> None:
    nargs = "+" if many else 1
    p.add_argument("--window", type=int, nargs=nargs, help="window length(s) in hours")
    p.add_argument("--layers", type=int, nargs=nargs, help="hidden layer count(s)")
    p.add_argument("--variant", nargs=nargs, help="dataset variant(s) A-D")


def _training(p: argparse.ArgumentParser) -> None:
    p.add_argument("--csv", help="hourly CSV; overrides data.csv")
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--patience", type=int, help="early-stop patience in epochs, 0 disables")
    p.add_argument("--train-range", nargs=2, metavar=("START", "END"))
    p.add_argument("--validation-range", nargs=2, metavar=("START", "END"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="heatcast", description="Hourly district-heat demand forecasting.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic hourly CSV")
    _common(p)
    p.add_argument("--years", type=int)
    p.set_defaults(handler=cmd_generate)

    p = sub.add_parser("train", help="train one model")
    _common(p)
    _training(p)
    _model_shape(p, many=False)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("predict", help="predict every hour of a CSV")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--csv", help="hourly CSV; overrides data.csv")
    _model_shape(p, many=False)
    p.set_defaults(handler=cmd_predict)

    p = sub.add_parser("evaluate", help="score a prediction CSV")
    _common(p)
    p.add_argument("--predictions", required=True)
    p.add_argument("--bin-width", type=float)
    p.set_defaults(handler=cmd_evaluate)

    for name in experiments.STUDIES:
        p = sub.add_parser(name, help=f"run the {name.replace('-', ' ')}")
        _common(p)
        _training(p)
        _model_shape(p, many=True)
        p.add_argument("--shard", help="shard file {id, count}")
        p.add_argument("--trials", type=int)
        p.add_argument("--concurrency", type=int)
        p.set_defaults(handler=cmd_study)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except HeatcastError as exc:
        slog.error(
            "Command failed.",
            context={"command": args.command, "error_type": type(exc).__name__, "error_message": str(exc)},
        )
        return EXIT_INVALID
    except OSError as exc:
        slog.error(
            "File system error.",
            context={"command": args.command, "error_type": type(exc).__name__, "error_message": str(exc)},
            exc_info=True,
        )
        return EXIT_IO

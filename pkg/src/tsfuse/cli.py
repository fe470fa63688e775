"""Command-line entry point: ``python -m tsfuse <subcommand> [options]``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, read_checkpoint, save_checkpoint
from .checks import gradcheck_suite
from .config import ConfigError, ExperimentConfig, load_config, parse_overrides
from .kdtp import RetrievalError, build_index, load_corpus
from .series import SeriesError
from .training import (ablation_csv, anomaly_eval, dataset_name, evaluate, forecast_eval,
                       imputation_eval, prepare_data, run_ablation, train)

log = logging.getLogger("tsfuse")

GRADCHECK_TOL = 1e-4


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI-style experiment config file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--task", choices=("forecasting", "imputation", "anomaly"))
    p.add_argument("--dataset", help="'synth' or a CSV path")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--few-shot", dest="few_shot_fraction", type=float, metavar="FRACTION")
    p.add_argument("--ablation", action="append", choices=("no_fatm", "no_kdtp", "no_llm"))
    p.add_argument("--corpus", help="document directory, JSON-lines file or saved index")
    p.add_argument("--query")
    p.add_argument("--alpha", type=float)
    p.add_argument("--missing-rate", dest="missing_rate", type=float)
    p.add_argument("--out", default="runs", help="output directory (default: runs)")


def _with_checkpoint(p: argparse.ArgumentParser) -> None:
    _common(p)
    p.add_argument("--checkpoint", help="load this model instead of training one")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tsfuse", description=(
        "Prompt-fused frozen-transformer models for forecasting, imputation and "
        "anomaly detection."))
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    _common(sub.add_parser("train", help="train, evaluate, save checkpoint and metrics CSV"))
    _with_checkpoint(sub.add_parser("evaluate", help="MAE/MSE of a model on the test split"))
    _with_checkpoint(sub.add_parser("forecast", help="roll out forecasts and plot the last one"))
    _with_checkpoint(sub.add_parser("impute", help="fill masked test windows and plot one"))
    _with_checkpoint(sub.add_parser("detect", help="score test windows and flag anomalies"))
    _common(sub.add_parser("ablate", help="full model vs each single-module ablation"))
    g = sub.add_parser("gradcheck", help="finite-difference check of every component")
    g.add_argument("--points", type=int, default=10)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--tol", type=float, default=GRADCHECK_TOL)
    ix = sub.add_parser("index", help="embed a document corpus into a reusable index")
    ix.add_argument("corpus", help="directory of .txt files or a JSON-lines file")
    ix.add_argument("-o", "--output", default="index.json")
    return parser


def resolve_config(args: argparse.Namespace, base: ExperimentConfig | None = None) -> ExperimentConfig:
    overrides = parse_overrides(args.overrides)
    for key in ("task", "dataset", "seed", "epochs", "few_shot_fraction", "corpus", "query",
                "alpha", "missing_rate"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "ablation", None):
        overrides["ablation"] = tuple(args.ablation)
    if base is not None:
        if args.config:
            raise ConfigError("--config cannot be combined with --checkpoint; use --set")
        return base.replace(**overrides).validate()
    return load_config(args.config, overrides)


def _model_and_data(args):
    """Either load ``--checkpoint`` or train a fresh model from the config."""
    if getattr(args, "checkpoint", None):
        manifest, _ = read_checkpoint(args.checkpoint)
        cfg = resolve_config(args, ExperimentConfig.from_dict(manifest["config"]))
        model = load_checkpoint(args.checkpoint)
        data = prepare_data(cfg)
        if hasattr(model, "stats"):
            data.stats = model.stats
        return model, cfg, data, None
    cfg = resolve_config(args)
    data = prepare_data(cfg)
    model, report = train(cfg, data)
    return model, cfg, data, report


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    data = prepare_data(cfg)
    model, report = train(cfg, data)
    evaluate(model, cfg, data, report)
    out = _outdir(args)
    report.write_csv(out / "metrics.csv", timing=cfg.timing)
    save_checkpoint(model, out / "model.ckpt")
    print(f"dataset: {dataset_name(cfg)}  task: {cfg.task}  seed: {cfg.seed}")
    print(f"training steps: {report.train_steps}  iterations: {report.iterations}")
    print(f"loss: first epoch {report.epoch_losses[0]:.6f}  last epoch {report.epoch_losses[-1]:.6f}")
    print(f"parameters: trainable {report.trainable_params}  total {report.total_params}  "
          f"fraction {report.trainable_fraction:.4f}")
    print(f"test MAE {report.mae:.6f}  MSE {report.mse:.6f}  "
          f"(baseline MAE {report.baseline_mae:.6f}  MSE {report.baseline_mse:.6f})")
    if report.precision is not None:
        print(f"precision {report.precision:.3f}  recall {report.recall:.3f}")
    print(f"wrote {out / 'metrics.csv'} and {out / 'model.ckpt'}")
    return 0


def cmd_evaluate(args) -> int:
    model, cfg, data, report = _model_and_data(args)
    report = evaluate(model, cfg, data, report)
    print(f"test MAE {report.mae:.6f}  MSE {report.mse:.6f}  "
          f"(baseline MAE {report.baseline_mae:.6f}  MSE {report.baseline_mse:.6f})")
    if report.precision is not None:
        print(f"precision {report.precision:.3f}  recall {report.recall:.3f}")
    return 0


def cmd_forecast(args) -> int:
    from .plots import plot_forecast
    if not getattr(args, "task", None):
        args.task = "forecasting"
    model, cfg, data, _ = _model_and_data(args)
    ev = forecast_eval(model, data, cfg.horizon)
    out = _outdir(args)
    with open(out / "forecast.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["origin", "channel", "step", "prediction", "truth", "naive"])
        for i, t in enumerate(ev.origins):
            for c in range(ev.predictions.shape[1]):
                for h in range(ev.predictions.shape[2]):
                    w.writerow([int(t), c, h + 1, repr(float(ev.predictions[i, c, h])),
                                repr(float(ev.truth[i, c, h])), repr(float(ev.naive[i, c, h]))])
    t = int(ev.origins[-1])
    hist = data.full.values[0, max(0, t - model.context):t]
    plot_forecast(hist, ev.truth[-1, 0], ev.predictions[-1, 0], out / "forecast.svg")
    mse = float(np.mean((ev.predictions - ev.truth) ** 2))
    naive = float(np.mean((ev.naive - ev.truth) ** 2))
    print(f"{len(ev.origins)} forecast origins, horizon {cfg.horizon}: MSE {mse:.6f} "
          f"(naive last value {naive:.6f})")
    print(f"wrote {out / 'forecast.csv'} and {out / 'forecast.svg'}")
    return 0


def cmd_impute(args) -> int:
    from .plots import plot_imputation
    if not getattr(args, "task", None):
        args.task = "imputation"
    model, cfg, data, _ = _model_and_data(args)
    ev = imputation_eval(model, data, cfg.missing_rate, cfg.seed)
    out = _outdir(args)
    plot_imputation(ev.clean[0, 0], ev.mask[0, 0], ev.imputed[0, 0], out / "imputation.svg")
    print(f"missing rate {cfg.missing_rate}: masked MSE {ev.model_mse:.6f} "
          f"(mean fill {ev.baseline_mse:.6f})")
    print(f"wrote {out / 'imputation.svg'}")
    return 0


def cmd_detect(args) -> int:
    from .plots import plot_anomaly
    if not getattr(args, "task", None):
        args.task = "anomaly"
    model, cfg, data, _ = _model_and_data(args)
    ev = anomaly_eval(model, data, cfg.alpha)
    rep = ev.report
    out = _outdir(args)
    plot_anomaly(rep.starts, rep.scores, rep.threshold, out / "anomaly.svg",
                 truth_starts=data.annotations.get("anomaly_starts"))
    flagged = [int(rep.starts[i]) for i in rep.flagged]
    print(f"alpha {cfg.alpha}  tau {rep.threshold:.6g}")
    print("flagged window starts: " + (" ".join(map(str, flagged)) or "(none)"))
    if ev.precision is not None:
        print(f"precision {ev.precision:.3f}  recall {ev.recall:.3f}")
    print(f"wrote {out / 'anomaly.svg'}")
    return 0


def cmd_ablate(args) -> int:
    cfg = resolve_config(args)
    rows = run_ablation(cfg)
    out = _outdir(args)
    table = ablation_csv(rows)
    (out / "ablation.csv").write_text(table, encoding="utf-8")
    print(table, end="")
    print(f"wrote {out / 'ablation.csv'}")
    return 0


def cmd_gradcheck(args) -> int:
    errs = gradcheck_suite(points=args.points, seed=args.seed)
    for name, err in errs.items():
        print(f"{name:22s} max rel err {err:.3e}  {'ok' if err <= args.tol else 'FAIL'}")
    return 0 if max(errs.values()) <= args.tol else 1


def cmd_index(args) -> int:
    index = build_index(load_corpus(args.corpus))
    index.save(args.output)
    print(f"indexed {len(index)} documents ({index.skipped} empty skipped) -> {args.output}")
    return 0


COMMANDS = {"train": cmd_train, "evaluate": cmd_evaluate, "forecast": cmd_forecast,
            "impute": cmd_impute, "detect": cmd_detect, "ablate": cmd_ablate,
            "gradcheck": cmd_gradcheck, "index": cmd_index}


def run_cli(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, CheckpointError, SeriesError, RetrievalError, FileNotFoundError) as exc:
        parser.print_usage(sys.stderr)
        print(f"tsfuse {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, FloatingPointError) as exc:
        print(f"tsfuse {args.command}: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_cli())

"""Data preparation, training under the frozen-backbone contract, evaluation and ablations."""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import make_rng
from .config import ExperimentConfig
from .heads import (AnomalyReport, anomaly_forward, anomaly_score_and_flag,
                    autoregressive_forecast, scan_with_replacement, segment_scores,
                    task_loss, total_loss)
from .kdtp import DocumentIndex, build_index, build_prompt, load_corpus
from .model import PromptFusionModel
from .series import (NormStats, TimeSeries, few_shot_subset, load_csv, random_mask,
                     segment_array, synth_series)

log = logging.getLogger(__name__)

METRICS_HEADER = ["task", "dataset", "seed", "epoch", "loss", "mae", "mse",
                  "trainable_params", "total_params", "sec_per_iter"]
ABLATION_VARIANTS = (("full", ()), ("w/o FATM", ("no_fatm",)),
                     ("w/o KDTP", ("no_kdtp",)), ("w/o LLM", ("no_llm",)))


class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"non-finite loss {loss} at epoch {epoch}")
        self.epoch = epoch


@dataclass
class PreparedData:
    full: TimeSeries  # raw values, whole series
    train: TimeSeries  # raw training split (after any few-shot subsetting)
    test_start: int
    stats: NormStats
    annotations: dict = field(default_factory=dict)

    @property
    def full_norm(self) -> np.ndarray:
        return self.stats.normalize(self.full.values)

    @property
    def train_norm(self) -> np.ndarray:
        return self.stats.normalize(self.train.values)


@dataclass
class MetricsReport:
    task: str
    dataset: str
    seed: int
    epoch_losses: list[float] = field(default_factory=list)
    mae: float = float("nan")
    mse: float = float("nan")
    baseline_mae: float = float("nan")
    baseline_mse: float = float("nan")
    precision: float | None = None
    recall: float | None = None
    threshold: float | None = None
    flagged_starts: list[int] = field(default_factory=list)
    trainable_params: int = 0
    total_params: int = 0
    sec_per_iter: float = 0.0
    train_steps: int = 0
    iterations: int = 0
    context_len: int = 0

    @property
    def trainable_fraction(self) -> float:
        return self.trainable_params / self.total_params if self.total_params else 0.0

    def to_csv(self, timing: bool = False) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        last = len(self.epoch_losses)
        for epoch, loss in enumerate(self.epoch_losses, 1):
            final = epoch == last
            w.writerow([self.task, self.dataset, self.seed, epoch, repr(float(loss)),
                        repr(float(self.mae)) if final else "",
                        repr(float(self.mse)) if final else "",
                        self.trainable_params, self.total_params,
                        f"{self.sec_per_iter:.6f}" if timing else ""])
        return buf.getvalue()

    def write_csv(self, path: str | Path, timing: bool = False) -> None:
        Path(path).write_text(self.to_csv(timing), encoding="utf-8")


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------

def dataset_name(cfg: ExperimentConfig) -> str:
    if cfg.dataset == "synth":
        kind = "anomaly-injected" if cfg.task == "anomaly" else cfg.synth_kind
        return f"synth:{kind}"
    return Path(cfg.dataset).name


def prepare_data(cfg: ExperimentConfig) -> PreparedData:
    """Load or synthesize, split chronologically, subset for few-shot, fit z-score on train."""
    notes: dict = {}
    if cfg.dataset == "synth":
        rng = make_rng(cfg.seed, 0)
        if cfg.task == "anomaly":
            series, notes = synth_series("anomaly-injected", cfg.synth_length, rng,
                                         period=cfg.synth_period, noise=cfg.synth_noise,
                                         spike_region=(cfg.train_fraction + 0.05, 0.97))
        else:
            series, notes = synth_series(cfg.synth_kind, cfg.synth_length, rng,
                                         period=cfg.synth_period, slope=cfg.synth_slope,
                                         noise=cfg.synth_noise)
    else:
        series = load_csv(cfg.dataset)
    train, _ = series.split(cfg.train_fraction)
    test_start = train.length
    if cfg.few_shot_fraction is not None:
        train = few_shot_subset(train, cfg.few_shot_fraction)
    stats = NormStats.fit(train)
    return PreparedData(series, train, test_start, stats, notes)


def load_index(cfg: ExperimentConfig) -> DocumentIndex | None:
    if not cfg.corpus:
        return None
    path = Path(cfg.corpus)
    if path.suffix == ".json" and path.is_file():
        return DocumentIndex.load(path)
    return build_index(load_corpus(path))


def make_prompt_text(cfg: ExperimentConfig, data: PreparedData,
                     index: DocumentIndex | None = None) -> str:
    if "no_kdtp" in cfg.ablation:
        return cfg.query
    if index is None:
        index = load_index(cfg)
    return build_prompt(cfg.query, data.train, index, cfg.top_k).text


def context_length(cfg: ExperimentConfig, train_len: int) -> int:
    """Model context in points: (n - 1) * stride + patch_len, shrunk to fit the train split."""
    p, s = cfg.patch_len, cfg.stride
    if cfg.task == "anomaly":
        return 2 * p
    n_cfg = (cfg.context_len - p) // s + 1
    room = train_len - (p if cfg.task == "forecasting" else 0)
    if room < p:
        raise ValueError(f"training split of {train_len} points cannot hold a "
                         f"{cfg.task} window with patch length {p}")
    n = min(n_cfg, (room - p) // s + 1)
    return (n - 1) * s + p


def forecasting_windows(values: np.ndarray, ctx: int, patch_len: int, stride: int
                        ) -> tuple[np.ndarray, np.ndarray]:
    """Inputs (B, n, P) and next-patch targets (B, n, P); token i targets the
    ``patch_len`` points right after patch i."""
    c, length = values.shape
    span = ctx + patch_len
    starts = range(0, length - span + 1, stride)
    wins = np.stack([values[:, s:s + span] for s in starts], axis=0).reshape(-1, span)
    inputs = segment_array(wins[:, :ctx], patch_len, stride)
    targets = segment_array(wins[:, patch_len:], patch_len, stride)
    return inputs, targets


def calibration_start(cfg: ExperimentConfig, data: PreparedData) -> int:
    """First index of the held-out tail of the training split used to set tau."""
    length = data.train.length
    return length - int(round(cfg.calib_fraction * length))


def imputation_windows(values: np.ndarray, ctx: int, stride: int) -> np.ndarray:
    c, length = values.shape
    starts = range(0, length - ctx + 1, stride)
    return np.stack([values[:, s:s + ctx] for s in starts], axis=0).reshape(-1, ctx)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def fit_kernels(cfg: ExperimentConfig, n_patches: int) -> ExperimentConfig:
    """Drop kernel sizes wider than 2n - 1 for an n-patch context.

    Wider taps would only ever see zero padding.
    """
    keep = tuple(k for k in cfg.kernel_sizes if k <= 2 * n_patches - 1)
    if not keep:
        raise ValueError(f"no kernel size in {cfg.kernel_sizes} fits {n_patches} patches")
    if keep != tuple(cfg.kernel_sizes):
        log.info("kernel sizes %s reduced to %s for %d patches", cfg.kernel_sizes, keep, n_patches)
        cfg = cfg.replace(kernel_sizes=keep)
    return cfg


def build_model(cfg: ExperimentConfig, data: PreparedData | None = None,
                prompt_text: str | None = None) -> PromptFusionModel:
    if prompt_text is None:
        prompt_text = make_prompt_text(cfg, data) if data is not None else cfg.query
    ctx = None
    if data is not None:
        ctx = context_length(cfg, data.train.length)
        cfg = fit_kernels(cfg, (ctx - cfg.patch_len) // cfg.stride + 1)
    model = PromptFusionModel(cfg, prompt_text)
    if data is not None:
        model.stats = data.stats
        model.context = ctx
    return model


def train(cfg: ExperimentConfig, data: PreparedData | None = None,
          model: PromptFusionModel | None = None) -> tuple[PromptFusionModel, MetricsReport]:
    """Fit the trainable adapters; the backbone is checked bit-exact afterwards."""
    cfg.validate()
    data = data if data is not None else prepare_data(cfg)
    model = model if model is not None else build_model(cfg, data)
    model.stats = data.stats
    ctx = model.context = context_length(cfg, data.train.length)
    p, s = cfg.patch_len, cfg.stride
    x = data.train_norm
    if cfg.task == "anomaly":
        x = x[:, :calibration_start(cfg, data)]
    causal = model.backbone is None or model.backbone.causal

    if cfg.task == "imputation":
        windows = imputation_windows(x, ctx, s)
        count = len(windows)
    else:
        inputs, targets = forecasting_windows(x, ctx, p, s)
        count = len(inputs)
    if count == 0:
        raise ValueError("no training windows; lengthen the training split")

    before = model.backbone_checksum()
    opt = ad.Adam(model.trainable_parameters(), lr=cfg.lr)
    rng = make_rng(cfg.seed, 3)
    trainable, total = model.param_counts()
    report = MetricsReport(cfg.task, dataset_name(cfg), cfg.seed,
                           trainable_params=trainable, total_params=total,
                           train_steps=data.train.length, context_len=ctx)
    iters, elapsed = 0, 0.0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(count)
        running, seen = 0.0, 0
        for lo in range(0, count, cfg.batch):
            idx = order[lo:lo + cfg.batch]
            t0 = time.perf_counter()
            if cfg.task == "imputation":
                clean = windows[idx]
                mask = np.concatenate([random_mask(ctx, cfg.missing_rate, rng) for _ in idx])
                out = model(model.patches(clean * mask))
                target = model.patches(clean)
                l_reg = task_loss("imputation", out.pred, target, model.patches(mask))
            else:
                out = model(inputs[idx])
                pred, target = out.pred, targets[idx]
                if not causal:
                    # bidirectional attention would see the targets of earlier tokens
                    pred, target = pred[:, -1:, :], target[:, -1:, :]
                l_reg = task_loss(cfg.task, pred, target)
            loss = total_loss(l_reg, out.prompt_rows, out.fused, cfg.lam)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(epoch, value)
            loss.backward()
            try:
                opt.step()
            except ad.NonFiniteGradientError:
                raise TrainingDiverged(epoch, value) from None
            elapsed += time.perf_counter() - t0
            iters += 1
            running += value * len(idx)
            seen += len(idx)
        report.epoch_losses.append(running / seen)
    report.iterations = iters
    report.sec_per_iter = elapsed / max(iters, 1)
    if model.backbone_checksum() != before:
        raise RuntimeError("frozen backbone parameters changed during training")
    return model, report


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

@dataclass
class ForecastEval:
    origins: np.ndarray
    predictions: np.ndarray  # (W, C, H) raw units
    truth: np.ndarray
    naive: np.ndarray


@dataclass
class ImputationEval:
    starts: np.ndarray
    clean: np.ndarray  # (W, C, ctx) raw
    mask: np.ndarray
    imputed: np.ndarray
    mean_fill: np.ndarray

    @property
    def model_mse(self) -> float:
        miss = self.mask == 0
        return float(np.mean((self.imputed[miss] - self.clean[miss]) ** 2))

    @property
    def baseline_mse(self) -> float:
        miss = self.mask == 0
        return float(np.mean((self.mean_fill[miss] - self.clean[miss]) ** 2))


def forecast_eval(model: PromptFusionModel, data: PreparedData, horizon: int) -> ForecastEval:
    cfg = model.cfg
    ctx = model.context
    raw = data.full.values
    xn = data.full_norm
    length = raw.shape[1]
    origins = np.arange(max(data.test_start, ctx), length - horizon + 1, cfg.stride)
    if origins.size == 0:
        raise ValueError("empty test split: no forecast origin fits the horizon")
    contexts = np.stack([xn[:, t - ctx:t] for t in origins])
    result = autoregressive_forecast(model.predict_next, contexts, horizon, cfg.patch_len, ctx)
    pred = result.predictions * data.stats.std[None, :, None] + data.stats.mean[None, :, None]
    truth = np.stack([raw[:, t:t + horizon] for t in origins])
    naive = np.repeat(np.stack([raw[:, t - 1:t] for t in origins]), horizon, axis=-1)
    return ForecastEval(origins, pred, truth, naive)


def imputation_eval(model: PromptFusionModel, data: PreparedData, missing_rate: float,
                    seed: int) -> ImputationEval:
    ctx = model.context
    raw = data.full.values
    xn = data.full_norm
    starts = np.arange(data.test_start, raw.shape[1] - ctx + 1, ctx)
    if starts.size == 0:
        raise ValueError("empty test split: no imputation window fits")
    rng = make_rng(seed, 4)
    clean = np.stack([raw[:, s:s + ctx] for s in starts])
    norm = np.stack([xn[:, s:s + ctx] for s in starts])
    mask = np.stack([random_mask(ctx, missing_rate, rng, channels=raw.shape[0]) for _ in starts])
    rec = model.reconstruct(norm * mask)
    rec = rec * data.stats.std[None, :, None] + data.stats.mean[None, :, None]
    imputed = np.where(mask == 1, clean, rec)
    observed_mean = (clean * mask).sum(-1, keepdims=True) / np.maximum(mask.sum(-1, keepdims=True), 1)
    mean_fill = np.where(mask == 1, clean, observed_mean)
    return ImputationEval(starts, clean, mask, imputed, mean_fill)


@dataclass
class AnomalyEval:
    report: AnomalyReport
    train_scores: np.ndarray
    predictions: np.ndarray
    truth: np.ndarray
    precision: float | None
    recall: float | None


def anomaly_eval(model: PromptFusionModel, data: PreparedData, alpha: float) -> AnomalyEval:
    cfg = model.cfg
    k, m = 2 * cfg.patch_len, cfg.patch_len
    tr = data.train_norm
    starts_tr, pred_tr = anomaly_forward(model.predict_next, tr, k, m)
    held_out = starts_tr >= calibration_start(cfg, data) if cfg.calib_fraction > 0 else slice(None)
    train_scores = segment_scores(pred_tr[held_out], tr, starts_tr[held_out])

    starts, preds, scores = scan_with_replacement(model.predict_next, data.full_norm, k, m,
                                                  float(train_scores.max()), data.test_start)
    report = anomaly_score_and_flag(scores, train_scores, alpha, starts=starts)

    truth = np.stack([data.full.values[:, s:s + m] for s in starts])
    raw_pred = preds * data.stats.std[None, :, None] + data.stats.mean[None, :, None]
    precision = recall = None
    gt = data.annotations.get("anomaly_starts")
    if gt is not None:
        width = len(data.annotations["anomaly_indices"]) // max(len(gt), 1)
        events = [set(range(g, g + width)) for g in gt]
        positive = np.array([any(s <= i < s + m for ev in events for i in ev) for s in starts])
        flagged = report.flags.astype(bool)
        hits = int(np.sum(flagged & positive))
        precision = hits / int(flagged.sum()) if flagged.any() else 0.0
        detected = sum(any(flagged[j] and any(s <= i < s + m for i in ev)
                           for j, s in enumerate(starts)) for ev in events)
        recall = detected / len(events) if events else None
    return AnomalyEval(report, train_scores, raw_pred, truth, precision, recall)


def error_metrics(pred: np.ndarray, truth: np.ndarray) -> tuple[float, float]:
    """(MAE, MSE) over every element."""
    err = np.asarray(pred, dtype=np.float64) - np.asarray(truth, dtype=np.float64)
    return float(np.mean(np.abs(err))), float(np.mean(err ** 2))


def evaluate(model: PromptFusionModel, cfg: ExperimentConfig, data: PreparedData | None = None,
             report: MetricsReport | None = None) -> MetricsReport:
    """MAE/MSE on the denormalized test split (plus baselines and anomaly P/R)."""
    data = data if data is not None else prepare_data(cfg)
    if not hasattr(model, "context"):
        model.context = context_length(cfg, data.train.length)
    if report is None:
        trainable, total = model.param_counts()
        report = MetricsReport(cfg.task, dataset_name(cfg), cfg.seed,
                               trainable_params=trainable, total_params=total,
                               train_steps=data.train.length, context_len=model.context)
    if cfg.task == "forecasting":
        ev = forecast_eval(model, data, cfg.horizon)
        report.mae, report.mse = error_metrics(ev.predictions, ev.truth)
        report.baseline_mae, report.baseline_mse = error_metrics(ev.naive, ev.truth)
    elif cfg.task == "imputation":
        ev = imputation_eval(model, data, cfg.missing_rate, cfg.seed)
        miss = ev.mask == 0
        report.mae, report.mse = error_metrics(ev.imputed[miss], ev.clean[miss])
        report.baseline_mae, report.baseline_mse = error_metrics(ev.mean_fill[miss], ev.clean[miss])
    else:
        ev = anomaly_eval(model, data, cfg.alpha)
        report.mae, report.mse = error_metrics(ev.predictions, ev.truth)
        report.threshold = ev.report.threshold
        report.flagged_starts = [int(ev.report.starts[i]) for i in ev.report.flagged]
        report.precision, report.recall = ev.precision, ev.recall
    return report


def run_experiment(cfg: ExperimentConfig) -> tuple[PromptFusionModel, MetricsReport, PreparedData]:
    data = prepare_data(cfg)
    model, report = train(cfg, data)
    evaluate(model, cfg, data, report)
    return model, report, data


# ---------------------------------------------------------------------------
# ablations and sweeps
# ---------------------------------------------------------------------------

@dataclass
class AblationRow:
    variant: str
    flags: tuple[str, ...]
    seed: int
    dataset: str
    mae: float
    mse: float
    trainable_params: int
    total_params: int
    frozen_params: int
    prompt_tokens: int
    prompt_text: str


def run_ablation(cfg: ExperimentConfig) -> list[AblationRow]:
    """Train and evaluate the full model and each single-module ablation on one seed/dataset."""
    rows = []
    data = prepare_data(cfg)
    for name, flags in ABLATION_VARIANTS:
        vcfg = cfg.replace(ablation=flags)
        model, report = train(vcfg, data, build_model(vcfg, data))
        evaluate(model, vcfg, data, report)
        trainable, total = model.param_counts()
        rows.append(AblationRow(name, flags, vcfg.seed, report.dataset, report.mae, report.mse,
                                trainable, total, total - trainable, model.t_p, model.prompt_text))
    return rows


def ablation_csv(rows: list[AblationRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["variant", "seed", "dataset", "mae", "mse", "trainable_params", "total_params", "frozen_params",
                "prompt_tokens"])
    for r in rows:
        w.writerow([r.variant, r.seed, r.dataset, repr(r.mae), repr(r.mse), r.trainable_params, r.total_params,
                    r.frozen_params, r.prompt_tokens])
    return buf.getvalue()


def imputation_sweep(cfg: ExperimentConfig, rates=(0.125, 0.25, 0.375, 0.5),
                     seeds=(0,)) -> list[dict]:
    rows = []
    for seed in seeds:
        for rate in rates:
            rcfg = cfg.replace(task="imputation", missing_rate=rate, seed=seed)
            data = prepare_data(rcfg)
            model, _ = train(rcfg, data)
            ev = imputation_eval(model, data, rate, seed)
            rows.append({"missing_rate": rate, "seed": seed,
                         "model_mse": ev.model_mse, "meanfill_mse": ev.baseline_mse})
    return rows


def sweep_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["missing_rate", "seed", "model_mse", "meanfill_mse"])
    for r in rows:
        w.writerow([r["missing_rate"], r["seed"], repr(r["model_mse"]), repr(r["meanfill_mse"])])
    return buf.getvalue()

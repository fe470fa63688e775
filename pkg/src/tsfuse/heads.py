"""Feature enhancement / decoding head, task losses and the combined objective."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Linear, Module, Tensor

log = logging.getLogger(__name__)

TASKS = ("forecasting", "imputation", "anomaly")


class EnhancementHead(Module):
    """d_model -> d_model/4 -> GELU -> patch_len values per token."""

    def __init__(self, d_model: int, patch_len: int, rng: np.random.Generator | None = None,
                 d_red: int | None = None, zero: bool = False):
        d_red = d_red or max(d_model // 4, 1)
        self.down = Linear(d_model, d_red, rng, zero=zero)
        self.out = Linear(d_red, patch_len, rng, zero=zero)

    def forward(self, hidden: Tensor) -> Tensor:
        if hidden.shape[-1] != self.down.weight.shape[0]:
            raise ad.ShapeError(f"head: hidden width {hidden.shape[-1]} != d_model "
                                f"{self.down.weight.shape[0]}")
        return self.out(ad.gelu(self.down(hidden)))


def stitch(patches: np.ndarray) -> np.ndarray:
    """(..., n, P) non-overlapping patches -> (..., n*P) series."""
    return patches.reshape(*patches.shape[:-2], -1)


def enhance_and_decode(hidden: Tensor, head: EnhancementHead, stats=None) -> np.ndarray:
    """Project each token to a patch, stitch patches, optionally denormalize.

    ``hidden`` is (channels, n, d_model) when ``stats`` is given.
    """
    series = stitch(head(hidden).data)
    return stats.denormalize(series) if stats is not None else series


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def forecasting_loss(pred, target) -> Tensor:
    """(1/T) sum_t (pred_t - target_t)^2 over all elements."""
    pred, target = ad.as_tensor(pred), ad.as_tensor(target)
    if pred.shape != target.shape:
        raise ad.ShapeError(f"forecasting_loss: prediction {pred.shape} vs target {target.shape}")
    if pred.size < 1:
        raise ValueError("forecasting_loss needs T >= 1")
    return ad.mean(ad.square(ad.sub(pred, target)))


anomaly_loss = forecasting_loss


def imputation_loss(X, X_hat, mask) -> Tensor:
    """Squared error averaged over the masked (mask == 0) entries only."""
    X, X_hat = ad.as_tensor(X), ad.as_tensor(X_hat)
    mask = np.asarray(mask, dtype=np.float64)
    if not (X.shape == X_hat.shape == mask.shape):
        raise ad.ShapeError(f"imputation_loss: shapes {X.shape}, {X_hat.shape}, {mask.shape}")
    missing = 1.0 - mask
    count = int(np.count_nonzero(missing))
    if count == 0:
        raise ValueError("imputation_loss: no masked positions")
    return ad.scale(ad.tsum(ad.mul(missing, ad.square(ad.sub(X, X_hat)))), 1.0 / count)


def cosine_rows(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise cosine similarity over the last axis; zero-norm rows give 0."""
    a, b = ad.as_tensor(a), ad.as_tensor(b)
    na = np.sqrt((a.data ** 2).sum(-1))
    nb = np.sqrt((b.data ** 2).sum(-1))
    dead = (na == 0) | (nb == 0)
    if dead.any():
        log.warning("cosine similarity: %d zero-norm row(s) treated as 0", int(dead.sum()))
    dot = ad.tsum(ad.mul(a, b), axis=-1)
    norms = ad.mul(ad.tsum(ad.square(a), axis=-1), ad.tsum(ad.square(b), axis=-1))
    if dead.any():
        norms = ad.add(norms, dead.astype(np.float64))  # avoids 0/0 and sqrt'(0); dot is 0 there
    return ad.div(dot, ad.sqrt(norms))


def alignment_penalty(prompt_rows: Tensor, fused_rows: Tensor) -> Tensor:
    """1 - mean_i CosSim(P_i, F_i), averaged over any batch axes too."""
    return ad.sub(1.0, ad.mean(cosine_rows(prompt_rows, fused_rows)))


def total_loss(l_reg: Tensor, prompt_rows: Tensor | None, fused_rows: Tensor | None,
               lam: float) -> Tensor:
    """L_reg + lam * (1 - mean cosine(P_i, F_i)); the term vanishes without a prompt."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    if lam == 0.0 or prompt_rows is None:
        return l_reg
    if prompt_rows.shape[-2] != fused_rows.shape[-2]:
        raise ad.ShapeError(f"total_loss: {prompt_rows.shape[-2]} prompt rows vs "
                            f"{fused_rows.shape[-2]} fused rows")
    return ad.add(l_reg, ad.scale(alignment_penalty(prompt_rows, fused_rows), lam))


def task_loss(task: str, pred, target, mask=None) -> Tensor:
    """Dispatch the primary loss by task name."""
    if task == "forecasting":
        return forecasting_loss(pred, target)
    if task == "imputation":
        return imputation_loss(target, pred, mask)
    if task == "anomaly":
        return anomaly_loss(pred, target)
    raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")


# ---------------------------------------------------------------------------
# forecasting rollout and anomaly scoring
# ---------------------------------------------------------------------------

@dataclass
class ForecastResult:
    predictions: np.ndarray  # (..., H)
    token_predictions: list[np.ndarray]  # one (..., P) block per rollout step
    iterations: int


def autoregressive_forecast(predict_next, context: np.ndarray, horizon: int, patch_len: int,
                            context_len: int | None = None) -> ForecastResult:
    """Roll the next-patch predictor forward until ``horizon`` points exist.

    ``predict_next(window)`` maps (..., context_len) normalized values to the
    next (..., patch_len) values. Each prediction is appended and the window
    slides forward by one patch; the result is truncated to ``horizon``.
    """
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    context = np.asarray(context, dtype=np.float64)
    context_len = context_len or context.shape[-1]
    if context.shape[-1] < patch_len or context.shape[-1] < context_len:
        raise ValueError(f"context of {context.shape[-1]} points is shorter than one patch "
                         f"({patch_len}) or the model context ({context_len})")
    window = context[..., -context_len:]
    steps = math.ceil(horizon / patch_len)
    blocks = []
    for _ in range(steps):
        nxt = np.asarray(predict_next(window))
        blocks.append(nxt)
        window = np.concatenate([window, nxt], axis=-1)[..., -context_len:]
    preds = np.concatenate(blocks, axis=-1)[..., :horizon]
    return ForecastResult(preds, blocks, steps)


@dataclass
class AnomalyReport:
    scores: np.ndarray
    threshold: float
    flags: np.ndarray
    alpha: float
    starts: np.ndarray | None = None  # first index of each scored segment

    @property
    def flagged(self) -> list[int]:
        return [int(i) for i in np.nonzero(self.flags)[0]]


def window_starts(length: int, observed: int, predicted: int) -> np.ndarray:
    """Start index of each predicted segment: observed, observed + m, ..."""
    if length < observed + predicted:
        return np.zeros(0, dtype=np.int64)
    return np.arange(observed, length - predicted + 1, predicted, dtype=np.int64)


def anomaly_forward(predict_next, values: np.ndarray, observed: int, predicted: int
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Predict every stride-``predicted`` segment from the ``observed`` points before it.

    ``values`` is (channels, L) normalized. Returns (starts, predictions) with
    predictions shaped (windows, channels, predicted).
    """
    values = np.asarray(values, dtype=np.float64)
    if observed < 1 or predicted < 1:
        raise ValueError("observed and predicted window sizes must be positive")
    starts = window_starts(values.shape[-1], observed, predicted)
    if starts.size == 0:
        raise ValueError(f"series of {values.shape[-1]} points is too short for a "
                         f"{observed}+{predicted} window")
    windows = np.stack([values[:, s - observed:s] for s in starts])
    preds = np.asarray(predict_next(windows))[..., :predicted]
    return starts, preds


def scan_with_replacement(predict_next, values: np.ndarray, observed: int, predicted: int,
                          replace_above: float, start_at: int = 0
                          ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Score windows left to right, replacing implausible segments by their prediction.

    A segment whose score exceeds ``replace_above`` (normally the largest
    score seen on normal data) is overwritten with the model's prediction, so
    later windows condition on that estimate rather than on the anomaly. The
    rule does not involve alpha, so the scores (and hence the flag sets for
    nested thresholds) stay comparable across alpha. Returns (starts,
    predictions, scores) for windows starting at or after ``start_at``.
    """
    work = np.array(values, dtype=np.float64, copy=True)
    starts = window_starts(work.shape[-1], observed, predicted)
    starts = starts[starts >= start_at]
    if starts.size == 0:
        raise ValueError(f"series of {work.shape[-1]} points is too short for a "
                         f"{observed}+{predicted} window")
    preds, scores = [], []
    for s in starts:
        p = np.asarray(predict_next(work[None, :, s - observed:s]))[0, :, :predicted]
        score = float(np.mean((p - work[:, s:s + predicted]) ** 2))
        if score > replace_above:
            work[:, s:s + predicted] = p
        preds.append(p)
        scores.append(score)
    return starts, np.stack(preds), np.array(scores)


def segment_scores(preds: np.ndarray, values: np.ndarray, starts: np.ndarray) -> np.ndarray:
    """Per-segment MSE between predictions (W, C, m) and the truth."""
    m = preds.shape[-1]
    truth = np.stack([values[:, s:s + m] for s in starts])
    return ((preds - truth) ** 2).reshape(len(starts), -1).mean(axis=1)


def quantile_threshold(train_scores: np.ndarray, alpha: float) -> float:
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return float(np.quantile(np.asarray(train_scores, dtype=np.float64), alpha))


def flag(scores: np.ndarray, tau: float) -> np.ndarray:
    return (np.asarray(scores) > tau).astype(np.int64)


def anomaly_score_and_flag(scores: np.ndarray, train_scores: np.ndarray | None = None,
                           alpha: float = 0.99, tau: float | None = None,
                           starts: np.ndarray | None = None) -> AnomalyReport:
    """Flag segments whose score exceeds tau, the alpha-quantile of normal-split scores.

    An explicit ``tau`` bypasses the quantile (alpha is still validated).
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if tau is None:
        if train_scores is None:
            raise ValueError("need train_scores or an explicit tau")
        tau = quantile_threshold(train_scores, alpha)
    scores = np.asarray(scores, dtype=np.float64)
    return AnomalyReport(scores, float(tau), flag(scores, tau), alpha, starts)

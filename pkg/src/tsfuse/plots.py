"""Static SVG line plots for forecasts, imputations and anomaly scores."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed ids and no timestamp so identical data gives identical files
plt.rcParams["svg.hashsalt"] = "tsfuse"
_META = {"Date": None}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)
    return path


def plot_forecast(history: np.ndarray, truth: np.ndarray, pred: np.ndarray,
                  path: str | Path, title: str = "forecast") -> Path:
    """1-D arrays: context, ground-truth horizon, predicted horizon."""
    fig, ax = plt.subplots(figsize=(8, 3))
    t0 = len(history)
    ax.plot(np.arange(t0), history, color="0.4", lw=1, label="context")
    ax.plot(np.arange(t0, t0 + len(truth)), truth, color="k", lw=1, label="truth")
    ax.plot(np.arange(t0, t0 + len(pred)), pred, color="tab:red", lw=1.2, label="forecast")
    ax.axvline(t0, color="0.7", ls=":")
    ax.set_title(title)
    ax.legend(loc="upper left", fontsize=8)
    return _save(fig, path)


def plot_imputation(clean: np.ndarray, mask: np.ndarray, imputed: np.ndarray,
                    path: str | Path, title: str = "imputation") -> Path:
    fig, ax = plt.subplots(figsize=(8, 3))
    t = np.arange(len(clean))
    ax.plot(t, clean, color="k", lw=1, label="truth")
    ax.plot(t, imputed, color="tab:blue", lw=1, alpha=0.8, label="imputed")
    miss = mask == 0
    ax.scatter(t[miss], imputed[miss], s=8, color="tab:red", zorder=3, label="filled")
    ax.set_title(title)
    ax.legend(loc="upper left", fontsize=8)
    return _save(fig, path)


def plot_anomaly(starts: np.ndarray, scores: np.ndarray, tau: float, path: str | Path,
                 truth_starts=None, title: str = "anomaly score") -> Path:
    fig, ax = plt.subplots(figsize=(8, 3))
    ax.plot(starts, scores, color="k", lw=1, marker=".", label="score")
    ax.axhline(tau, color="tab:red", ls="--", lw=1, label=f"tau = {tau:.4g}")
    for s in truth_starts or ():
        ax.axvline(s, color="tab:orange", alpha=0.4, lw=1)
    ax.set_yscale("log")
    ax.set_title(title)
    ax.legend(loc="upper left", fontsize=8)
    return _save(fig, path)

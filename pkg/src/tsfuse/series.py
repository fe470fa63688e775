"""Loading, normalizing, segmenting, masking and synthesizing time series."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

EPS_STD = 1e-8
MISSING_RATES = (0.125, 0.25, 0.375, 0.5)


class SeriesError(ValueError):
    pass


@dataclass
class TimeSeries:
    """Multichannel observations, ``values`` has shape (channels, L)."""

    values: np.ndarray
    timestamps: np.ndarray | None = None
    names: list[str] | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim == 1:
            v = v[None, :]
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise SeriesError(f"values must be (channels, L) with both positive, got {v.shape}")
        if np.isnan(v).any():
            raise SeriesError("values contain NaN; represent missing entries with a Mask")
        self.values = v
        if self.timestamps is not None:
            ts = np.asarray(self.timestamps, dtype=np.float64)
            if ts.shape != (v.shape[1],):
                raise SeriesError(f"timestamps length {ts.shape} does not match L={v.shape[1]}")
            if ts.size > 1 and not np.all(np.diff(ts) > 0):
                raise SeriesError("timestamps must strictly increase")
            self.timestamps = ts

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return self.length

    def slice(self, start: int, stop: int) -> "TimeSeries":
        ts = None if self.timestamps is None else self.timestamps[start:stop]
        return TimeSeries(self.values[:, start:stop].copy(), ts, self.names)

    def split(self, train_fraction: float) -> tuple["TimeSeries", "TimeSeries"]:
        cut = int(math.floor(train_fraction * self.length))
        return self.slice(0, cut), self.slice(cut, self.length)


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def normalize(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean[:, None]) / self.std[:, None]

    def denormalize(self, values: np.ndarray) -> np.ndarray:
        return values * self.std[:, None] + self.mean[:, None]

    def apply(self, x: TimeSeries) -> TimeSeries:
        return TimeSeries(self.normalize(x.values), x.timestamps, x.names)

    def invert(self, x: TimeSeries) -> TimeSeries:
        return TimeSeries(self.denormalize(x.values), x.timestamps, x.names)

    @classmethod
    def fit(cls, x: TimeSeries) -> "NormStats":
        if x.length < 2:
            raise SeriesError(f"z-score needs L >= 2, got {x.length}")
        mean = x.values.mean(axis=1)
        std = np.maximum(x.values.std(axis=1), EPS_STD)
        return cls(mean, std)


def zscore_normalize(x: TimeSeries) -> tuple[TimeSeries, NormStats]:
    """Per-channel population z-score. Constant channels map to zero."""
    stats = NormStats.fit(x)
    return stats.apply(x), stats


@dataclass
class PatchSequence:
    patches: np.ndarray  # (channels, n, patch_len)
    patch_len: int
    stride: int
    embed: object = None  # Tensor (channels, n, d_model) once projected

    @property
    def n(self) -> int:
        return self.patches.shape[-2]


def num_patches(length: int, patch_len: int, stride: int) -> int:
    return (length - patch_len) // stride + 1


def segment_array(values: np.ndarray, patch_len: int, stride: int) -> np.ndarray:
    """Cut the last axis into patches: (..., L) -> (..., n, patch_len)."""
    length = values.shape[-1]
    if patch_len > length:
        raise SeriesError(f"patch length {patch_len} exceeds series length {length}")
    if stride < 1 or patch_len < 1:
        raise SeriesError(f"patch length and stride must be positive, got {patch_len}, {stride}")
    n = num_patches(length, patch_len, stride)
    idx = stride * np.arange(n)[:, None] + np.arange(patch_len)[None, :]
    return values[..., idx]


def segment(x: TimeSeries | np.ndarray, patch_len: int = 16, stride: int = 16,
            embedding=None) -> PatchSequence:
    """Split into ``floor((L - P)/S) + 1`` patches; the trailing remainder is dropped.

    When ``embedding`` (a callable module) is given, the patches are also
    projected to token vectors.
    """
    values = x.values if isinstance(x, TimeSeries) else np.asarray(x, dtype=np.float64)
    patches = segment_array(values, patch_len, stride)
    seq = PatchSequence(patches, patch_len, stride)
    if embedding is not None:
        seq.embed = embedding(patches)
    return seq


def unpatch(patches: np.ndarray, stride: int) -> np.ndarray:
    """Inverse of ``segment_array``; overlapping positions are averaged."""
    n, p = patches.shape[-2:]
    length = (n - 1) * stride + p
    out = np.zeros(patches.shape[:-2] + (length,))
    count = np.zeros(length)
    for i in range(n):
        out[..., i * stride:i * stride + p] += patches[..., i, :]
        count[i * stride:i * stride + p] += 1
    return out / count


def apply_mask(x, m):
    """Elementwise ``x * m``; accepts TimeSeries or arrays."""
    xv = x.values if isinstance(x, TimeSeries) else np.asarray(x, dtype=np.float64)
    mv = m.values if isinstance(m, TimeSeries) else np.asarray(m, dtype=np.float64)
    if xv.shape != mv.shape:
        raise SeriesError(f"mask shape {mv.shape} does not match series shape {xv.shape}")
    if not np.all((mv == 0) | (mv == 1)):
        raise SeriesError("mask entries must be 0 or 1")
    out = np.where(mv == 1, xv, 0.0)
    return TimeSeries(out, x.timestamps, x.names) if isinstance(x, TimeSeries) else out


def random_mask(length: int, missing_rate: float, rng: np.random.Generator,
                channels: int = 1) -> np.ndarray:
    """Binary mask with exactly ``round(rate * L)`` zeros per channel."""
    if not 0.0 < missing_rate < 1.0:
        raise SeriesError(f"missing rate must lie in (0, 1), got {missing_rate}")
    k = int(round(missing_rate * length))
    mask = np.ones((channels, length))
    for c in range(channels):
        mask[c, rng.choice(length, size=k, replace=False)] = 0.0
    return mask


SYNTH_KINDS = ("sine", "sine+trend", "sine+noise", "sine+trend+noise", "anomaly-injected")


def synth_series(kind: str, length: int, rng: np.random.Generator, *, amplitude: float = 1.0,
                 period: float = 24.0, phase: float = 0.0, slope: float | None = None,
                 noise: float | None = None, channels: int = 1, n_spikes: int = 3,
                 spike_sigma: float = 8.0, spike_width: int = 1,
                 spike_region: tuple[float, float] = (0.5, 1.0)) -> tuple[TimeSeries, dict]:
    """Deterministic synthetic series plus ground-truth annotations.

    ``anomaly-injected`` adds ``n_spikes`` segments of ``spike_width`` points
    raised by ``spike_sigma`` standard deviations of the clean series, placed
    inside ``spike_region`` (fractions of L) and at least two periods apart.
    """
    if kind not in SYNTH_KINDS:
        raise SeriesError(f"unknown synthetic kind {kind!r}; expected one of {SYNTH_KINDS}")
    if length < 32:
        raise SeriesError(f"synthetic series need L >= 32, got {length}")
    if slope is None:
        slope = 0.01 if "trend" in kind else 0.0
    if noise is None:
        noise = 0.1 if ("noise" in kind or kind == "anomaly-injected") else 0.0

    t = np.arange(length, dtype=np.float64)
    phases = phase + np.arange(channels) * (2 * np.pi / max(channels, 1)) / 4
    values = amplitude * np.sin(2 * np.pi * t[None, :] / period + phases[:, None])
    values = values + slope * t[None, :]
    if noise > 0:
        values = values + rng.normal(0.0, noise, size=values.shape)
    notes: dict = {"kind": kind, "slope": slope, "noise": noise, "period": period,
                   "amplitude": amplitude}

    if kind == "anomaly-injected":
        sigma = float(values.std())
        lo = int(spike_region[0] * length)
        hi = int(spike_region[1] * length) - spike_width
        gap = max(int(2 * period), spike_width + 1)
        starts: list[int] = []
        for _ in range(10_000):
            if len(starts) == n_spikes:
                break
            s = int(rng.integers(lo, hi))
            if all(abs(s - o) >= gap for o in starts):
                starts.append(s)
        if len(starts) < n_spikes:
            raise SeriesError("could not place spikes; lengthen the series or widen the region")
        starts.sort()
        magnitude = spike_sigma * sigma
        indices = []
        for s in starts:
            values[:, s:s + spike_width] += magnitude
            indices.extend(range(s, s + spike_width))
        notes.update(anomaly_starts=starts, anomaly_indices=indices,
                     spike_magnitudes=[magnitude] * len(starts), sigma=sigma)
    return TimeSeries(values), notes


def few_shot_subset(train: TimeSeries, fraction: float) -> TimeSeries:
    """Contiguous prefix holding ``floor(fraction * L)`` time steps."""
    if not 0.0 < fraction <= 1.0:
        raise SeriesError(f"few-shot fraction must lie in (0, 1], got {fraction}")
    keep = int(math.floor(fraction * train.length))
    if keep < 1:
        raise SeriesError(f"few-shot fraction {fraction} leaves no time steps from L={train.length}")
    return train.slice(0, keep)


def load_csv(path: str | Path) -> TimeSeries:
    """Read a header-first CSV; a leading ``timestamp`` column is optional."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SeriesError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if any(cell.strip() for cell in r)]
    if not body:
        raise SeriesError(f"{path}: empty series (header only)")
    has_ts = header[0].lower() == "timestamp"
    data = np.empty((len(body), len(header)))
    for i, row in enumerate(body):
        rowno = i + 2
        if len(row) != len(header):
            raise SeriesError(f"{path}: row {rowno} has {len(row)} cells, expected {len(header)}")
        for j, cell in enumerate(row):
            try:
                data[i, j] = float(cell)
            except ValueError:
                raise SeriesError(f"{path}: row {rowno}, column {header[j]!r}: "
                                  f"non-numeric value {cell!r}") from None
            if math.isnan(data[i, j]):
                raise SeriesError(f"{path}: row {rowno}, column {header[j]!r}: NaN not allowed")
    if has_ts:
        if len(header) < 2:
            raise SeriesError(f"{path}: no value columns besides timestamp")
        return TimeSeries(data[:, 1:].T.copy(), data[:, 0].copy(), header[1:])
    return TimeSeries(data.T.copy(), None, header)


def save_csv(x: TimeSeries, path: str | Path) -> None:
    names = x.names or [f"ch{c}" for c in range(x.channels)]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow((["timestamp"] if x.timestamps is not None else []) + list(names))
        for i in range(x.length):
            row = [repr(float(v)) for v in x.values[:, i]]
            if x.timestamps is not None:
                row.insert(0, repr(float(x.timestamps[i])))
            w.writerow(row)

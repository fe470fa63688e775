import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from tsfuse.autodiff import make_rng
from tsfuse.series import (EPS_STD, NormStats, SeriesError, TimeSeries, apply_mask,
                           few_shot_subset, load_csv, num_patches, random_mask, save_csv,
                           segment, segment_array, synth_series, unpatch, zscore_normalize)


def test_zscore_constant_channel():
    z, stats = zscore_normalize(TimeSeries(np.array([[5.0, 5.0, 5.0]])))
    np.testing.assert_array_equal(z.values, [[0, 0, 0]])
    assert stats.std[0] == EPS_STD


def test_zscore_already_standard():
    z, _ = zscore_normalize(TimeSeries(np.array([[-1.0, 1.0]])))
    np.testing.assert_array_equal(z.values, [[-1, 1]])


def test_zscore_population_std():
    z, _ = zscore_normalize(TimeSeries(np.array([[2.0, 4.0, 6.0]])))
    np.testing.assert_allclose(z.values[0], [-1.2247, 0, 1.2247], atol=1e-4)


def test_zscore_needs_two_points():
    with pytest.raises(SeriesError):
        zscore_normalize(TimeSeries(np.array([[1.0]])))


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 50), st.integers(1, 3), st.integers(0, 10_000))
def test_normalize_round_trip(length, channels, seed):
    x = TimeSeries(np.random.default_rng(seed).normal(3, 7, size=(channels, length)))
    z, stats = zscore_normalize(x)
    np.testing.assert_allclose(stats.invert(z).values, x.values, atol=1e-9)


@pytest.mark.parametrize("length,p,s,n", [(96, 16, 16, 6), (10, 4, 2, 4), (5, 5, 1, 1)])
def test_patch_counts(length, p, s, n):
    assert num_patches(length, p, s) == n
    seq = segment(np.arange(float(length)), p, s)
    assert seq.patches.shape[-2:] == (n, p)
    for i in range(n):
        np.testing.assert_array_equal(seq.patches[..., i, :].ravel(), np.arange(i * s, i * s + p))


def test_patch_starts_and_whole_series():
    starts = segment_array(np.arange(10.0), 4, 2)[:, 0]
    np.testing.assert_array_equal(starts, [0, 2, 4, 6])
    np.testing.assert_array_equal(segment_array(np.arange(5.0), 5, 1)[0], np.arange(5.0))


def test_segment_too_short():
    with pytest.raises(SeriesError):
        segment_array(np.arange(3.0), 4, 1)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.integers(1, 6), st.integers(0, 7))
def test_non_overlapping_patches_reconstruct(p, n, extra):
    x = np.random.default_rng(p * 100 + n).normal(size=p * n + extra)
    patches = segment_array(x, p, p)
    covered = patches.shape[0] * p
    assert covered == (len(x) // p) * p
    np.testing.assert_array_equal(patches.reshape(-1), x[:covered])
    np.testing.assert_array_equal(unpatch(patches, p), x[:covered])


def test_unpatch_averages_overlaps():
    x = np.arange(10.0)
    np.testing.assert_allclose(unpatch(segment_array(x, 4, 2), 2), x)


def test_mask_examples():
    x = np.array([1.0, 2.0, 3.0])
    np.testing.assert_array_equal(apply_mask(x, np.ones(3)), x)
    np.testing.assert_array_equal(apply_mask(x, np.zeros(3)), 0)
    np.testing.assert_array_equal(apply_mask(x, np.array([1, 0, 1])), [1, 0, 3])


def test_mask_idempotent_and_binary_check():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 20))
    m = random_mask(20, 0.3, rng, channels=2)
    once = apply_mask(x, m)
    np.testing.assert_array_equal(apply_mask(once, m), once)
    with pytest.raises(SeriesError):
        apply_mask(x[0, :3], np.array([1, 0.5, 1]))


def test_random_mask_counts():
    assert (random_mask(8, 0.25, make_rng(0)) == 0).sum() == 2
    assert (random_mask(1000, 0.125, make_rng(0)) == 0).sum() == 125
    a, b = random_mask(8, 0.5, make_rng(1)), random_mask(8, 0.5, make_rng(2))
    assert (a == 0).sum() == (b == 0).sum() == 4
    assert not np.array_equal(a, b)
    with pytest.raises(SeriesError):
        random_mask(8, 1.0, make_rng(0))


def test_synth_bounds_and_slope():
    sine, _ = synth_series("sine", 500, make_rng(0))
    assert np.abs(sine.values).max() <= 1.0
    trend, notes = synth_series("sine+trend", 2000, make_rng(0), slope=0.01)
    fitted = np.polyfit(np.arange(2000), trend.values[0], 1)[0]
    assert abs(fitted - 0.01) <= 0.002
    assert notes["slope"] == 0.01


def test_synth_anomaly_annotations():
    x, notes = synth_series("anomaly-injected", 2048, make_rng(4), n_spikes=3, spike_sigma=8)
    assert len(notes["anomaly_indices"]) == 3
    assert len(notes["anomaly_starts"]) == 3
    clean = x.values[0].copy()
    clean[notes["anomaly_indices"]] -= notes["spike_magnitudes"][0]
    assert notes["spike_magnitudes"][0] == pytest.approx(8 * notes["sigma"])
    assert np.all(x.values[0, notes["anomaly_indices"]] - clean[notes["anomaly_indices"]] > 0)


def test_synth_deterministic_and_validates():
    a, _ = synth_series("sine+trend+noise", 100, make_rng(9))
    b, _ = synth_series("sine+trend+noise", 100, make_rng(9))
    np.testing.assert_array_equal(a.values, b.values)
    with pytest.raises(SeriesError):
        synth_series("square", 100, make_rng(0))


@pytest.mark.parametrize("length,f,expect", [(1000, 0.05, 50), (40, 0.05, 2), (37, 1.0, 37)])
def test_few_shot_lengths(length, f, expect):
    x = TimeSeries(np.arange(float(length))[None])
    sub = few_shot_subset(x, f)
    assert sub.length == expect
    np.testing.assert_array_equal(sub.values[0], np.arange(float(expect)))


@settings(max_examples=50, deadline=None)
@given(st.integers(20, 3000), st.floats(0.01, 1.0))
def test_few_shot_floor_law(length, f):
    assume(math.floor(f * length) >= 1)
    x = TimeSeries(np.zeros((1, length)))
    assert few_shot_subset(x, f).length == math.floor(f * length)


def test_few_shot_rejects_bad_fraction():
    with pytest.raises(SeriesError):
        few_shot_subset(TimeSeries(np.zeros((1, 10))), 0.0)
    with pytest.raises(SeriesError, match="no time steps"):
        few_shot_subset(TimeSeries(np.zeros((1, 10))), 0.05)


def test_timeseries_validation():
    with pytest.raises(SeriesError, match="NaN"):
        TimeSeries(np.array([[1.0, np.nan]]))
    with pytest.raises(SeriesError, match="increase"):
        TimeSeries(np.zeros((1, 3)), timestamps=np.array([0.0, 2.0, 1.0]))


def test_csv_round_trip(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("a,b\n1,2\n3,4\n5,6\n")
    x = load_csv(path)
    assert (x.channels, x.length) == (2, 3)
    np.testing.assert_array_equal(x.values, [[1, 3, 5], [2, 4, 6]])
    save_csv(x, tmp_path / "y.csv")
    np.testing.assert_array_equal(load_csv(tmp_path / "y.csv").values, x.values)


def test_csv_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n3,oops\n")
    with pytest.raises(SeriesError, match="row 3"):
        load_csv(bad)
    empty = tmp_path / "empty.csv"
    empty.write_text("a,b\n")
    with pytest.raises(SeriesError, match="empty series"):
        load_csv(empty)


def test_normstats_apply_shapes():
    stats = NormStats(np.array([1.0, 2.0]), np.array([2.0, 4.0]))
    np.testing.assert_allclose(stats.normalize(np.array([[3.0], [6.0]])), [[1.0], [1.0]])

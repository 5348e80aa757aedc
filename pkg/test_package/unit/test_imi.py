import math

import numpy as np
import pytest

from dfc2bp import imi
from dfc2bp.errors import ConfigurationError
from dfc2bp.imi import IMIConfig, MIMatrix, WindowSpec
from test_package.utils import brute_force_mi

SPLIT = np.array([0.0] * 5 + [1.0] * 5)


def test_mutual_information_of_split_window_with_itself():
    assert imi.mutual_information(SPLIT, SPLIT, 2) == pytest.approx(math.log(2), abs=1e-12)


def test_mutual_information_of_independent_windows():
    x = np.array([0, 0, 0, 0, 1, 1, 1, 1], dtype=float)
    y = np.array([0, 1, 0, 1, 0, 1, 0, 1], dtype=float)
    assert imi.mutual_information(x, y, 2) == pytest.approx(0.0, abs=1e-12)


def test_mutual_information_with_constant_window():
    rng = np.random.default_rng(1)
    assert imi.mutual_information(np.full(10, 3.0), rng.normal(size=10), 4) == 0.0


def test_mutual_information_with_itself_is_binned_entropy():
    x = np.random.default_rng(2).normal(size=12)
    assert imi.mutual_information(x, x, 4) == pytest.approx(imi.binned_entropy(x, 4), abs=1e-12)


def test_mutual_information_rejects_mismatched_windows():
    with pytest.raises(ValueError):
        imi.mutual_information(np.zeros(5), np.zeros(6), 2)
    with pytest.raises(ValueError):
        imi.mutual_information(np.zeros(1), np.zeros(1), 2)


def test_mutual_information_matches_joint_histogram_oracle():
    rng = np.random.default_rng(3)
    for _ in range(500):
        length = int(rng.integers(2, 13))
        n_bins = int(rng.integers(2, 5))
        x, y = rng.normal(size=length), rng.normal(size=length)
        estimate = imi.mutual_information(x, y, n_bins)
        assert estimate == pytest.approx(brute_force_mi(x, y, n_bins), abs=1e-12)


def test_mutual_information_symmetry_and_bounds():
    rng = np.random.default_rng(4)
    for _ in range(2000):
        length = int(rng.integers(2, 13))
        n_bins = int(rng.integers(2, 5))
        # Coarse integer samples so bins tie and windows repeat
        x = rng.integers(0, 4, size=length).astype(float)
        y = rng.integers(0, 4, size=length).astype(float)
        forward = imi.mutual_information(x, y, n_bins)
        assert forward == imi.mutual_information(y, x, n_bins)
        assert 0.0 <= forward <= math.log(n_bins) + 1e-12
        assert forward <= min(imi.binned_entropy(x, n_bins), imi.binned_entropy(y, n_bins)) + 1e-12


def test_bin_windows():
    codes = imi.bin_windows(np.array([[0.0, 1.0, 2.0, 3.0], [5.0, 5.0, 5.0, 5.0]]), 4)
    assert codes.tolist() == [[0, 1, 2, 3], [0, 0, 0, 0]]


def test_imi_matrix_matches_pairwise_estimator():
    rng = np.random.default_rng(5)
    frames = rng.normal(size=(10, 7))
    frames[:, 3] = 1.0
    frames[:, 5] = frames[:, 0] * 2 + 1
    codes = imi.bin_windows(frames.T, 4)

    matrix = imi.imi_matrix(codes, 4)

    assert np.array_equal(matrix, matrix.T)
    for i in range(7):
        assert matrix[i, i] == pytest.approx(imi.binned_entropy(frames[:, i], 4), abs=1e-12)
        for j in range(i + 1, 7):
            expected = imi.mutual_information(frames[:, i], frames[:, j], 4)
            assert matrix[i, j] == pytest.approx(expected, abs=1e-12)
    assert matrix[3] == pytest.approx(np.zeros(7), abs=1e-12)
    assert matrix[0, 5] == pytest.approx(matrix[0, 0])


def test_window_count():
    assert WindowSpec().n_windows(3000) == 2991
    assert WindowSpec(step=5).n_windows(30) == 5
    assert WindowSpec().n_windows(9) == 0


def test_downsample():
    times = np.arange(30000) * 0.001
    frames = np.arange(30000 * 2, dtype=float).reshape(30000, 2)

    sampled, sampled_times = imi.downsample(frames, times, 1000.0, WindowSpec())

    assert sampled.shape == (3000, 2)
    assert np.array_equal(sampled_times, times[::10])
    assert np.array_equal(sampled[1], frames[10])


def test_downsample_identity_at_the_analysis_rate():
    times = np.arange(5) * 0.01
    frames = np.ones((5, 3))
    sampled, sampled_times = imi.downsample(frames, times, 100.0, WindowSpec())
    assert np.array_equal(sampled, frames)
    assert np.array_equal(sampled_times, times)


def test_downsample_rejects_rate_mismatch():
    with pytest.raises(ConfigurationError):
        imi.downsample(np.ones((10, 1)), np.arange(10.0), 1000.0, WindowSpec(analysis_rate=300.0))


def test_imi_series_windows():
    rng = np.random.default_rng(6)
    frames = rng.normal(size=(25, 4))
    spec = WindowSpec(window_len=10, step=3)

    series = list(imi.imi_series(frames, spec))

    assert len(series) == spec.n_windows(25) == 6
    assert [matrix.window_end_index for matrix in series] == [9, 12, 15, 18, 21, 24]
    last = series[-1].values
    assert last[1, 2] == pytest.approx(
        imi.mutual_information(frames[15:25, 1], frames[15:25, 2], spec.n_bins), abs=1e-12
    )


def test_imi_series_is_independent_of_workers():
    frames = np.random.default_rng(7).normal(size=(200, 6))
    spec = WindowSpec()
    serial = [matrix.values for matrix in imi.imi_series(frames, spec)]
    threaded = [matrix.values for matrix in imi.imi_series(frames, spec, workers=3, batch=16)]
    assert len(serial) == len(threaded) == 191
    for first, second in zip(serial, threaded):
        assert np.array_equal(first, second)


def test_imi_series_permutation_equivariance():
    frames = np.random.default_rng(8).normal(size=(30, 5))
    order = [2, 0, 4, 1, 3]
    original = list(imi.imi_series(frames, WindowSpec()))
    permuted = list(imi.imi_series(frames[:, order], WindowSpec()))
    for first, second in zip(original, permuted):
        assert second.values == pytest.approx(first.values[np.ix_(order, order)], abs=1e-12)


def test_imi_series_of_constant_stream():
    series = list(imi.imi_series(np.ones((20, 3)), WindowSpec()))
    assert all(np.all(matrix.values == 0.0) for matrix in series)


def test_imi_series_rejects_short_stream():
    with pytest.raises(ValueError):
        list(imi.imi_series(np.ones((5, 3)), WindowSpec()))


def test_binarize():
    values = np.array([[1.0, 0.5, 0.2], [0.5, 1.0, 0.3], [0.2, 0.3, 1.0]])
    series = imi.binarize([MIMatrix(values, 9), MIMatrix(values * 0.1, 10)], 0.3)

    assert series.threshold_used == 0.3
    assert series.adjacency.shape == (2, 3, 3)
    assert series.adjacency[0].tolist() == [
        [False, True, False],
        [True, False, False],
        [False, False, False],
    ]
    assert not series.adjacency[1].any()
    assert series.densities() == pytest.approx([1 / 3, 0.0])


def test_binarize_keeps_identical_signals_connected():
    x = np.random.default_rng(9).normal(size=10)
    frames = np.stack([x, x, np.ones(10)], axis=1)
    series = imi.binarize(imi.imi_series(frames, WindowSpec()), 1e-9)
    assert series.adjacency[0, 0, 1]
    assert not series.adjacency[0, 0, 2]


def test_binarize_rejects_non_positive_threshold():
    with pytest.raises(ValueError):
        imi.binarize([], 0.0)


def test_fixed_threshold_default():
    assert IMIConfig().fixed_threshold() == pytest.approx(0.25 * math.log(4))
    assert IMIConfig(threshold=0.5).fixed_threshold() == 0.5


def test_imi_config_validation():
    with pytest.raises(ConfigurationError):
        IMIConfig(threshold_mode="median").validate()
    with pytest.raises(ConfigurationError):
        IMIConfig(n_bins=1).validate()


def test_adaptive_threshold_is_mean_plus_std_of_pairs():
    rng = np.random.default_rng(10)
    matrices = [rng.uniform(size=(4, 4)) for _ in range(3)]
    matrices = [(m + m.T) / 2 for m in matrices]
    stats = imi.IMIStats()
    for matrix in matrices:
        stats.update(matrix)

    pairs = np.concatenate([m[np.triu_indices(4, k=1)] for m in matrices])
    assert stats.count == 18
    assert stats.adaptive_threshold() == pytest.approx(pairs.mean() + pairs.std())
    assert stats.maximum == pairs.max()


def test_window_codes_hold_more_bins_than_a_signed_byte():
    spec = WindowSpec(window_len=300, n_bins=300)
    codes = imi.window_codes(np.arange(300, dtype=float)[:, None], spec)

    assert codes.shape == (1, 1, 300)
    assert codes[0, 0].tolist() == list(range(300))


def test_window_codes_stay_compact_for_few_bins():
    codes = imi.window_codes(np.random.default_rng(9).normal(size=(20, 3)), WindowSpec())
    assert codes.dtype == np.uint8
    assert codes.max() <= 3


def test_independent_windows_average_below_half_the_maximum():
    spec = WindowSpec()
    rng = np.random.default_rng(10)
    estimates = [
        imi.mutual_information(
            rng.normal(size=spec.window_len), rng.normal(size=spec.window_len), spec.n_bins
        )
        for _ in range(1000)
    ]
    assert np.mean(estimates) <= 0.5 * math.log(spec.n_bins)

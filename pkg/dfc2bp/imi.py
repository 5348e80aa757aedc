"""
Instantaneous mutual information over a sliding window, and its binarization
into the graph series consumed by the relational model.

All quantities are in nats. The plug-in estimator is written in terms of
S = sum n ln n over histogram counts:

    MI = (S_xy - S_x - S_y + L ln L) / L

with L ln L taken from the same table, so a constant window gives exactly 0.
"""
import concurrent.futures
import math
from typing import Iterable, Iterator, List, NamedTuple, Optional, Tuple

import numpy as np

from dfc2bp.errors import ConfigurationError

THRESHOLD_MODES = ("fixed", "adaptive")


class WindowSpec(NamedTuple):
    analysis_rate: float = 100.0
    window_len: int = 10
    step: int = 1
    n_bins: int = 4

    def validate(self):
        if self.window_len < 2:
            raise ConfigurationError("imi.window_len must be at least 2")
        if self.n_bins < 2:
            raise ConfigurationError("imi.n_bins must be at least 2")
        if self.step < 1:
            raise ConfigurationError("imi.step must be at least 1")
        if self.analysis_rate <= 0:
            raise ConfigurationError("imi.analysis_rate must be positive")
        return self

    def n_windows(self, n_frames: int) -> int:
        if n_frames < self.window_len:
            return 0
        return (n_frames - self.window_len) // self.step + 1


class IMIConfig(NamedTuple):
    analysis_rate: float = 100.0
    window_len: int = 10
    step: int = 1
    n_bins: int = 4
    # Fixed threshold in nats; 0.25 ln(n_bins) when left empty
    threshold: Optional[float] = None
    threshold_mode: str = "fixed"

    @property
    def window(self) -> WindowSpec:
        return WindowSpec(self.analysis_rate, self.window_len, self.step, self.n_bins)

    def validate(self):
        self.window.validate()
        if self.threshold_mode not in THRESHOLD_MODES:
            raise ConfigurationError(
                f"imi.threshold_mode must be one of {', '.join(THRESHOLD_MODES)}"
            )
        if self.threshold is not None and self.threshold <= 0:
            raise ConfigurationError("imi.threshold must be positive")
        return self

    def fixed_threshold(self) -> float:
        if self.threshold is not None:
            return float(self.threshold)
        return 0.25 * math.log(self.n_bins)


class MIMatrix(NamedTuple):
    values: np.ndarray
    # Index of the last analysis sample inside the window
    window_end_index: int


class BinaryGraphSeries(NamedTuple):
    # (n_windows, N_s, N_s) symmetric with a false diagonal
    adjacency: np.ndarray
    threshold_used: float

    @property
    def n_windows(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[1]

    def densities(self) -> np.ndarray:
        n = self.n_nodes
        if n < 2:
            return np.zeros(self.n_windows)
        upper = np.triu_indices(n, k=1)
        return self.adjacency[:, upper[0], upper[1]].mean(axis=1)


class IMIStats(object):
    """Running moments of the off-diagonal IMI values of a series."""

    def __init__(self):
        self.count = 0
        self.total = 0.0
        self.total_squares = 0.0
        self.maximum = 0.0

    def update(self, values: np.ndarray):
        upper = values[np.triu_indices(values.shape[0], k=1)]
        self.count += upper.size
        self.total += math.fsum(upper)
        self.total_squares += math.fsum(upper * upper)
        if upper.size:
            self.maximum = max(self.maximum, float(upper.max()))

    @property
    def mean(self) -> float:
        return self.total / self.count if self.count else 0.0

    @property
    def std(self) -> float:
        if not self.count:
            return 0.0
        return math.sqrt(max(self.total_squares / self.count - self.mean**2, 0.0))

    def adaptive_threshold(self) -> float:
        return self.mean + self.std


def downsample(
    frames: np.ndarray, times: np.ndarray, sim_rate: float, spec: WindowSpec
) -> Tuple[np.ndarray, np.ndarray]:
    ratio = sim_rate / spec.analysis_rate
    stride = int(round(ratio))
    if stride < 1 or abs(ratio - stride) > 1e-9 * ratio:
        raise ConfigurationError(
            f"the simulation rate {sim_rate:g} Hz is not a multiple of the "
            f"analysis rate {spec.analysis_rate:g} Hz"
        )
    return frames[::stride], times[::stride]


def bin_windows(windows: np.ndarray, n_bins: int) -> np.ndarray:
    """
    Equal-width bin codes of every window along the last axis.

    Each window is centered and split into n_bins over its own [min, max];
    a constant window lands entirely in bin 0.
    """
    windows = np.asarray(windows, dtype=float)
    centered = windows - windows.mean(axis=-1, keepdims=True)
    low = centered.min(axis=-1, keepdims=True)
    span = centered.max(axis=-1, keepdims=True) - low
    constant = span <= 0
    scaled = (centered - low) / np.where(constant, 1.0, span)
    codes = np.floor(scaled * n_bins).astype(np.int64)
    codes = np.clip(codes, 0, n_bins - 1)
    return np.where(constant, 0, codes)


def _nlogn_table(window_len: int) -> np.ndarray:
    counts = np.arange(window_len + 1, dtype=float)
    table = np.zeros(window_len + 1)
    table[1:] = counts[1:] * np.log(counts[1:])
    return table


def binned_entropy(x, n_bins: int) -> float:
    codes = bin_windows(np.asarray(x)[None, :], n_bins)[0]
    length = codes.size
    table = _nlogn_table(length)
    counts = np.bincount(codes, minlength=n_bins)
    return math.fsum([table[length], -math.fsum(table[counts])]) / length


def mutual_information(x, y, n_bins: int) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ValueError("mutual information needs two equal windows of at least 2 samples")
    length = x.size
    codes = bin_windows(np.stack([x, y]), n_bins)
    joint = np.zeros((n_bins, n_bins), dtype=np.int64)
    np.add.at(joint, (codes[0], codes[1]), 1)

    table = _nlogn_table(length)
    joint_term = math.fsum(table[joint.ravel()])
    x_term = math.fsum(table[joint.sum(axis=1)])
    y_term = math.fsum(table[joint.sum(axis=0)])
    value = math.fsum([joint_term, -x_term, -y_term, table[length]]) / length
    return max(value, 0.0)


def imi_matrix(codes: np.ndarray, n_bins: int) -> np.ndarray:
    """
    Pairwise MI of all signals of one binned window.

    :param codes: (N_s, L) bin codes
    :return: (N_s, N_s) symmetric matrix, binned entropies on the diagonal
    """
    n_signals, length = codes.shape
    table = _nlogn_table(length)
    one_hot = (codes[:, None, :] == np.arange(n_bins)[None, :, None]).astype(np.float32)
    one_hot = one_hot.reshape(n_signals * n_bins, length)

    joint_counts = np.rint(one_hot @ one_hot.T).astype(np.intp)
    joint_term = table[joint_counts].reshape(n_signals, n_bins, n_signals, n_bins)
    joint_term = joint_term.sum(axis=(1, 3))
    marginal_counts = np.rint(one_hot.sum(axis=1)).astype(np.intp)
    marginal_term = table[marginal_counts].reshape(n_signals, n_bins).sum(axis=1)

    values = (joint_term - marginal_term[:, None] - marginal_term[None, :] + table[length]) / length
    # One value per unordered pair
    values = np.triu(values) + np.triu(values, k=1).T
    values = np.maximum(values, 0.0)
    np.fill_diagonal(values, (table[length] - marginal_term) / length)
    return values


def window_codes(frames: np.ndarray, spec: WindowSpec) -> np.ndarray:
    """Bin codes of every sliding window: (n_windows, N_s, L)."""
    windows = np.lib.stride_tricks.sliding_window_view(
        np.asarray(frames, dtype=float), spec.window_len, axis=0
    )[:: spec.step]
    # Smallest unsigned type that holds every bin code
    return bin_windows(windows, spec.n_bins).astype(np.min_scalar_type(spec.n_bins - 1))


def imi_series(
    frames: np.ndarray, spec: WindowSpec, workers: int = 1, batch: int = 64
) -> Iterator[MIMatrix]:
    """
    Lazily compute the MI matrix of every window of an (n_frames, N_s) stream.

    Windows are independent, so with several workers they are evaluated in
    parallel; results are yielded in window order either way.
    """
    frames = np.asarray(frames, dtype=float)
    if frames.shape[0] < spec.window_len:
        raise ValueError(
            f"the stream has {frames.shape[0]} frames, fewer than one window "
            f"of {spec.window_len}"
        )
    codes = window_codes(frames, spec)
    n_windows = codes.shape[0]

    def compute(index: int) -> MIMatrix:
        return MIMatrix(
            values=imi_matrix(codes[index], spec.n_bins),
            window_end_index=index * spec.step + spec.window_len - 1,
        )

    if workers <= 1:
        for index in range(n_windows):
            yield compute(index)
        return

    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as executor:
        for start in range(0, n_windows, batch):
            indices = range(start, min(start + batch, n_windows))
            yield from executor.map(compute, indices)


def binarize_matrix(values: np.ndarray, threshold: float) -> np.ndarray:
    adjacency = values > threshold
    np.fill_diagonal(adjacency, False)
    return adjacency


def binarize(series: Iterable[MIMatrix], threshold: float) -> BinaryGraphSeries:
    if threshold <= 0:
        raise ValueError("the binarization threshold must be positive")
    graphs: List[np.ndarray] = [
        binarize_matrix(matrix.values, threshold) for matrix in series
    ]
    if graphs:
        adjacency = np.stack(graphs)
    else:
        adjacency = np.zeros((0, 0, 0), dtype=bool)
    return BinaryGraphSeries(adjacency=adjacency, threshold_used=float(threshold))

import math
from collections import Counter
from typing import Sequence

import numpy as np

from dfc2bp.config import RunConfig, SimConfig
from dfc2bp.imi import IMIConfig
from dfc2bp.irm import IRMHyper
from dfc2bp.nnmf import NNMFConfig
from dfc2bp.sensory import SensorConfig


def brute_force_mi(x, y, n_bins: int) -> float:
    """Plug-in MI from an explicit joint histogram, binning each window over its own range."""

    def codes(window):
        low, high = min(window), max(window)
        if high == low:
            return [0] * len(window)
        return [min(int((value - low) / (high - low) * n_bins), n_bins - 1) for value in window]

    a, b = codes(list(x)), codes(list(y))
    length = len(a)
    joint = Counter(zip(a, b))
    marginal_a, marginal_b = Counter(a), Counter(b)
    total = 0.0
    for (i, j), count in joint.items():
        p = count / length
        total += p * math.log(p / ((marginal_a[i] / length) * (marginal_b[j] / length)))
    return total


def planted_blocks(
    sizes: Sequence[int],
    n_windows: int,
    p_in: float,
    p_out: float,
    seed: int = 0,
):
    """
    Graph series of a stochastic block model: every window draws its edges
    with probability p_in inside a block and p_out between blocks.

    :return: (adjacency (n_windows, N, N) bool, planted labels)
    """
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(len(sizes)), sizes)
    n_nodes = labels.size
    probabilities = np.where(labels[:, None] == labels[None, :], p_in, p_out)
    upper = np.triu(rng.random((n_windows, n_nodes, n_nodes)) < probabilities, k=1)
    return upper | upper.transpose(0, 2, 1), labels


def random_graph_series(n_nodes: int, n_windows: int, density: float = 0.5, seed: int = 0):
    rng = np.random.default_rng(seed)
    upper = np.triu(rng.random((n_windows, n_nodes, n_nodes)) < density, k=1)
    return upper | upper.transpose(0, 2, 1)


def total_variation(first: dict, second: dict) -> float:
    keys = set(first) | set(second)
    return 0.5 * sum(abs(first.get(key, 0.0) - second.get(key, 0.0)) for key in keys)


def small_config(output_dir: str = "run", **overrides) -> RunConfig:
    """A run small enough for tests: half a second of babbling and a handful of signals."""
    config = RunConfig(
        seed=3,
        sim=SimConfig(duration=0.5, dt=0.001),
        sensors=SensorConfig(neurons_per_joint=3, n_tactile=10, visual_dims=(4, 4)),
        imi=IMIConfig(analysis_rate=100.0, window_len=10),
        irm=IRMHyper(n_sweeps=3, n_restarts=2),
        nnmf=NNMFConfig(n_factors=1, max_iter=200),
        output_dir=output_dir,
    )
    return config._replace(**overrides)

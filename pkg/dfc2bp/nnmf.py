"""
Non-negative factorization of the vectorized link-density series.

The series is arranged as X = Hbar^T (windows x cluster pairs) and factored
as X ~ W F with Lee-Seung multiplicative updates on the Frobenius objective.
"""
import math
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from dfc2bp.errors import ConfigurationError

# Keeps the multiplicative updates away from 0 / 0
UPDATE_EPSILON = 1e-12


class NNMFConfig(NamedTuple):
    n_factors: int = 25
    select_rank: bool = False
    rank_min: int = 5
    rank_max: int = 40
    rank_step: int = 5
    elbow_fraction: float = 0.05
    max_iter: int = 1000
    tol: float = 1e-6
    # Derived from the run seed when left empty
    seed: Optional[int] = None

    def rank_range(self) -> List[int]:
        return list(range(self.rank_min, self.rank_max + 1, self.rank_step))

    def validate(self):
        if self.n_factors < 1:
            raise ConfigurationError("nnmf.n_factors must be at least 1")
        if self.max_iter < 1 or self.tol < 0:
            raise ConfigurationError("nnmf.max_iter must be at least 1 and nnmf.tol non-negative")
        if self.select_rank and (
            self.rank_min < 1 or self.rank_step < 1 or self.rank_max < self.rank_min
        ):
            raise ConfigurationError("nnmf rank range must be non-empty and ascending")
        if not 0 < self.elbow_fraction < 1:
            raise ConfigurationError("nnmf.elbow_fraction must lie in (0, 1)")
        return self


class VectorizedSeries(NamedTuple):
    # (N_r, n_windows)
    Hbar: np.ndarray
    # (N_r, 2) cluster pair (c, d), c < d, of every row
    pair_index: np.ndarray

    @property
    def n_pairs(self) -> int:
        return self.Hbar.shape[0]

    @property
    def n_windows(self) -> int:
        return self.Hbar.shape[1]

    @property
    def n_clusters(self) -> int:
        # N_r = N_c (N_c - 1) / 2
        return int(round((1 + math.sqrt(1 + 8 * self.n_pairs)) / 2))


class FactorModel(NamedTuple):
    # (N_f, N_r) unit-norm rows
    F: np.ndarray
    # (n_windows, N_f)
    W: np.ndarray
    residual: float
    energies: np.ndarray
    objective_trace: Sequence[float] = ()

    @property
    def n_factors(self) -> int:
        return self.F.shape[0]


class RankSelection(NamedTuple):
    ranks: List[int]
    residuals: List[float]
    selected: int


def vectorize_upper(H) -> VectorizedSeries:
    """Strict upper triangle of every window, pairs in lexicographic order."""
    H = np.asarray(getattr(H, "H", H), dtype=np.float64)
    n_clusters = H.shape[1]
    rows, cols = np.triu_indices(n_clusters, k=1)
    return VectorizedSeries(
        Hbar=np.ascontiguousarray(H[:, rows, cols].T),
        pair_index=np.stack([rows, cols], axis=1),
    )


def unvectorize(vectorized: VectorizedSeries) -> np.ndarray:
    """(n_windows, N_c, N_c) symmetric series with a zero diagonal."""
    n_clusters = vectorized.n_clusters
    H = np.zeros((vectorized.n_windows, n_clusters, n_clusters))
    rows, cols = vectorized.pair_index[:, 0], vectorized.pair_index[:, 1]
    H[:, rows, cols] = vectorized.Hbar.T
    H[:, cols, rows] = vectorized.Hbar.T
    return H


def _as_matrix(Hbar) -> np.ndarray:
    return np.asarray(getattr(Hbar, "Hbar", Hbar), dtype=np.float64)


def residual(Hbar, W: np.ndarray, F: np.ndarray) -> float:
    """D = ||Hbar^T - W F||_F / sqrt(N_r N)."""
    Hbar = _as_matrix(Hbar)
    n_pairs, n_windows = Hbar.shape
    if n_pairs * n_windows == 0:
        return 0.0
    return float(np.linalg.norm(Hbar.T - W @ F) / math.sqrt(n_pairs * n_windows))


def _objective(X: np.ndarray, W: np.ndarray, F: np.ndarray) -> float:
    difference = X - W @ F
    return 0.5 * float(np.einsum("ij,ij->", difference, difference))


def _initial_factors(
    X: np.ndarray, n_factors: int, seed: Optional[int]
) -> Tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    scale = max(float(X.mean()), UPDATE_EPSILON) / n_factors
    # Every window starts from the same row so the fit does not depend on window order
    W_row = rng.uniform(0.0, 1.0, size=n_factors) * scale
    F = rng.uniform(0.0, 1.0, size=(n_factors, X.shape[1])) * scale
    return np.tile(W_row, (X.shape[0], 1)), F


def _converged(previous: float, current: float, tol: float) -> bool:
    if current <= 0.0:
        return True
    return (previous - current) / max(previous, UPDATE_EPSILON) < tol


def normalize_and_order(W: np.ndarray, F: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Scale every factor to unit norm, move the scale into W, and sort factors
    by decreasing score energy.

    :return: (W, F, energies)
    """
    norms = np.linalg.norm(F, axis=1)
    scale = np.where(norms > 0, norms, 1.0)
    F = F / scale[:, None]
    W = W * scale[None, :]
    energies = (W**2).sum(axis=0)
    order = np.argsort(-energies, kind="stable")
    return W[:, order], F[order], energies[order]


def nnmf_fit(
    Hbar,
    n_factors: int,
    seed: Optional[int] = None,
    max_iter: int = 1000,
    tol: float = 1e-6,
    check_non_negative: bool = False,
) -> FactorModel:
    X = _as_matrix(Hbar).T
    if n_factors < 1 or n_factors > min(X.shape):
        raise ConfigurationError(
            f"{n_factors} factors requested for a {X.shape[1]} x {X.shape[0]} series; "
            f"at most {min(X.shape)} are possible"
        )
    if (X < 0).any():
        raise ValueError("the factorized series must be non-negative")

    W, F = _initial_factors(X, n_factors, seed)
    trace = [_objective(X, W, F)]
    for _ in range(max_iter):
        F *= (W.T @ X) / (W.T @ W @ F + UPDATE_EPSILON)
        W *= (X @ F.T) / (W @ (F @ F.T) + UPDATE_EPSILON)
        if check_non_negative:
            assert (W >= 0).all() and (F >= 0).all()
        trace.append(_objective(X, W, F))
        if _converged(trace[-2], trace[-1], tol):
            break

    W, F, energies = normalize_and_order(W, F)
    return FactorModel(
        F=F,
        W=W,
        residual=residual(X.T, W, F),
        energies=energies,
        objective_trace=trace,
    )


def select_rank(
    Hbar,
    rank_range: Sequence[int],
    seed: Optional[int] = None,
    elbow_fraction: float = 0.05,
    max_iter: int = 1000,
    tol: float = 1e-6,
) -> RankSelection:
    """
    Elbow on the residual curve: the first candidate whose decrease to the
    next candidate is below elbow_fraction of the whole curve's decrease.
    """
    ranks = list(rank_range)
    if not ranks:
        raise ConfigurationError("the rank range is empty")
    if ranks != sorted(ranks):
        raise ConfigurationError("the rank range must be ascending")
    residuals = [
        nnmf_fit(Hbar, rank, seed=seed, max_iter=max_iter, tol=tol).residual for rank in ranks
    ]
    total = residuals[0] - residuals[-1]
    selected = ranks[-1]
    for index in range(len(ranks) - 1):
        if residuals[index] - residuals[index + 1] < elbow_fraction * total:
            selected = ranks[index]
            break
    return RankSelection(ranks=ranks, residuals=residuals, selected=selected)


def decompose(model: FactorModel, k: int) -> List[Tuple[int, float]]:
    if not 0 <= k < model.W.shape[0]:
        raise IndexError(f"window {k} is outside 0..{model.W.shape[0] - 1}")
    scores = model.W[k]
    order = sorted(range(scores.size), key=lambda factor: (-scores[factor], factor))
    return [(factor, float(scores[factor])) for factor in order]


def leading_factor(model: FactorModel, k: int) -> int:
    if not 0 <= k < model.W.shape[0]:
        raise IndexError(f"window {k} is outside 0..{model.W.shape[0] - 1}")
    return int(np.argmax(model.W[k]))


def leading_factor_trace(model: FactorModel) -> np.ndarray:
    if model.W.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    return np.argmax(model.W, axis=1)


def transform(
    model: FactorModel, columns, max_iter: int = 1000, tol: float = 1e-6
) -> np.ndarray:
    """
    Scores of new windows on the fixed basis of a fitted model.

    :param columns: (N_r, M) link densities of M windows
    :return: (M, N_f) scores
    """
    X = _as_matrix(columns).T
    if X.shape[1] != model.F.shape[1]:
        raise ConfigurationError(
            f"the model has {model.F.shape[1]} cluster pairs, the input {X.shape[1]}"
        )
    F = model.F
    W = np.repeat(X.mean(axis=1, keepdims=True), model.n_factors, axis=1)
    gram = F @ F.T
    numerator = X @ F.T
    previous = _objective(X, W, F)
    for _ in range(max_iter):
        W *= numerator / (W @ gram + UPDATE_EPSILON)
        current = _objective(X, W, F)
        if _converged(previous, current, tol):
            break
        previous = current
    return W


def factor_edges(
    model: FactorModel, pair_index: np.ndarray, min_weight: float = 1e-3
) -> List[Tuple[int, int, int, float]]:
    """(factor, cluster c, cluster d, weight) of every factor entry above min_weight."""
    edges = []
    for factor in range(model.n_factors):
        for row in np.flatnonzero(model.F[factor] > min_weight):
            c, d = pair_index[row]
            edges.append((factor, int(c), int(d), float(model.F[factor, row])))
    return edges

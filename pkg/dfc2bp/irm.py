"""
Infinite Relational Model over a series of binary graphs.

Signals are partitioned by a Chinese Restaurant Process; every window has its
own Beta-Bernoulli edge probability per pair of clusters, collapsed out, so
the windows share nothing but the partition.
"""
import concurrent.futures
import math
from typing import Callable, Iterator, List, NamedTuple, Optional, Tuple

import numpy as np
from scipy.special import betaln, gammaln

from dfc2bp.console_output import error_console
from dfc2bp.errors import ConfigurationError


class IRMHyper(NamedTuple):
    crp_alpha: float = 1.0
    beta_a: float = 1.0
    beta_b: float = 1.0
    n_sweeps: int = 200
    n_restarts: int = 4
    # Derived from the run seed when left empty
    seed: Optional[int] = None

    def validate(self):
        if min(self.crp_alpha, self.beta_a, self.beta_b) <= 0:
            raise ConfigurationError("irm.crp_alpha, beta_a and beta_b must be positive")
        if self.n_sweeps < 1 or self.n_restarts < 1:
            raise ConfigurationError("irm.n_sweeps and irm.n_restarts must be at least 1")
        return self


class Partition(NamedTuple):
    # Cluster id of every signal, contiguous from 0 in order of first appearance
    assignment: np.ndarray
    n_clusters: int
    log_joint: float = float("nan")

    @classmethod
    def from_assignment(cls, assignment, log_joint: float = float("nan")) -> "Partition":
        labels = canonical_labels(assignment)
        n_clusters = int(labels.max()) + 1 if labels.size else 0
        return cls(assignment=labels, n_clusters=n_clusters, log_joint=log_joint)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.n_clusters)

    def membership_matrix(self) -> np.ndarray:
        """Binary Z of shape (N_c, N_s) with one-hot columns."""
        membership = np.zeros((self.n_clusters, self.assignment.size), dtype=np.int8)
        membership[self.assignment, np.arange(self.assignment.size)] = 1
        return membership

    def members(self, cluster: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == cluster)


class LinkDensitySeries(NamedTuple):
    # (n_windows, N_c, N_c) posterior mean link densities
    H: np.ndarray

    @property
    def n_clusters(self) -> int:
        return self.H.shape[1]


class FitDiagnostics(NamedTuple):
    # log joint after every sweep of every chain (entry 0 is the initial state)
    traces: List[List[float]]
    cluster_counts: List[List[int]]
    best_chain: int
    warnings: List[str]


def canonical_labels(assignment) -> np.ndarray:
    assignment = np.asarray(assignment)
    _, first_seen, inverse = np.unique(assignment, return_index=True, return_inverse=True)
    order = np.argsort(np.argsort(first_seen))
    return order[inverse].astype(np.int64)


def log_crp(sizes, alpha: float) -> float:
    sizes = np.asarray(sizes, dtype=float)
    sizes = sizes[sizes > 0]
    n_items = sizes.sum()
    return float(
        sizes.size * math.log(alpha)
        + gammaln(sizes).sum()
        + gammaln(alpha)
        - gammaln(alpha + n_items)
    )


def possible_pairs(sizes) -> np.ndarray:
    """Node pairs available to every block; within a cluster, unordered and without self pairs."""
    sizes = np.asarray(sizes, dtype=np.int64)
    pairs = np.outer(sizes, sizes)
    np.fill_diagonal(pairs, sizes * (sizes - 1) // 2)
    return pairs


def block_counts(adjacency: np.ndarray, partition: Partition, chunk: int = 128):
    """
    Present edges between every pair of clusters in every window.

    :return: (present (n_windows, N_c, N_c), possible (N_c, N_c))
    """
    n_windows = adjacency.shape[0]
    membership = partition.membership_matrix().T.astype(np.float64)
    present = np.zeros((n_windows, partition.n_clusters, partition.n_clusters))
    for start in range(0, n_windows, chunk):
        window = adjacency[start : start + chunk].astype(np.float64)
        present[start : start + chunk] = membership.T @ window @ membership
    diagonal = np.arange(partition.n_clusters)
    present[:, diagonal, diagonal] /= 2
    return np.rint(present).astype(np.int64), possible_pairs(partition.sizes())


def log_joint(adjacency: np.ndarray, partition: Partition, hyper: IRMHyper) -> float:
    """log CRP(partition) + sum over windows and cluster pairs c <= d of log B(n+ + a, n- + b) / B(a, b)."""
    score = log_crp(partition.sizes(), hyper.crp_alpha)
    if adjacency.shape[0] == 0 or partition.n_clusters == 0:
        return score
    present, possible = block_counts(adjacency, partition)
    upper = np.triu_indices(partition.n_clusters)
    positive = present[:, upper[0], upper[1]]
    negative = possible[upper][None, :] - positive
    blocks = betaln(positive + hyper.beta_a, negative + hyper.beta_b) - betaln(
        hyper.beta_a, hyper.beta_b
    )
    return score + float(blocks.sum())


def link_densities(
    adjacency: np.ndarray, partition: Partition, hyper: IRMHyper
) -> LinkDensitySeries:
    """
    Per-window Beta posterior mean (n+ + a) / (n+ + n- + a + b) of every
    block; a block without any node pair keeps the prior mean a / (a + b).
    """
    present, possible = block_counts(adjacency, partition)
    H = (present + hyper.beta_a) / (possible[None] + hyper.beta_a + hyper.beta_b)
    return LinkDensitySeries(H=H)


def sample_crp(n_items: int, alpha: float, rng: np.random.Generator) -> np.ndarray:
    assignment = np.zeros(n_items, dtype=np.int64)
    counts: List[int] = []
    for item in range(n_items):
        weights = np.array(counts + [alpha], dtype=float)
        choice = int(np.searchsorted(np.cumsum(weights), rng.random() * weights.sum(), side="right"))
        choice = min(choice, len(counts))
        if choice == len(counts):
            counts.append(1)
        else:
            counts[choice] += 1
        assignment[item] = choice
    return assignment


class GibbsChain(object):
    """
    Collapsed Gibbs sampler state.

    Keeps, per cluster slot, the number of edges from every node into the
    slot in every window and the present-edge counts of every pair of slots,
    so moving one node costs O(N_c^2 K) instead of a full recount.
    """

    def __init__(self, adjacency: np.ndarray, assignment, hyper: IRMHyper):
        adjacency = np.asarray(adjacency, dtype=bool)
        self.hyper = hyper
        self.n_windows, self.n_nodes = adjacency.shape[0], adjacency.shape[1]
        # edges[i] is (N, K): the edges of node i in every window
        self.edges = np.ascontiguousarray(adjacency.transpose(1, 2, 0)).astype(np.uint8)

        table_size = self.n_nodes * self.n_nodes // 2 + self.n_nodes + 2
        counts = np.arange(table_size, dtype=float)
        self.log_gamma_a = gammaln(counts + hyper.beta_a)
        self.log_gamma_b = gammaln(counts + hyper.beta_b)
        self.log_gamma_ab = gammaln(counts + hyper.beta_a + hyper.beta_b)
        self.log_beta_prior = float(betaln(hyper.beta_a, hyper.beta_b))

        labels = canonical_labels(assignment)
        n_clusters = int(labels.max()) + 1 if labels.size else 0
        self._allocate(max(n_clusters + 4, 8))
        self.z = labels.copy()
        for node in range(self.n_nodes):
            self.sizes[self.z[node]] += 1
            self.cluster_edges[:, self.z[node], :] += self.edges[node]
        for cluster in range(n_clusters):
            members = np.flatnonzero(self.z == cluster)
            self.present[cluster] = self.cluster_edges[members].sum(axis=0)
            self.present[cluster, cluster] //= 2
        for cluster in range(n_clusters):
            self._refresh_scores(cluster)

    def _allocate(self, capacity: int):
        self.capacity = capacity
        self.sizes = np.zeros(capacity, dtype=np.int64)
        self.cluster_edges = np.zeros((self.n_nodes, capacity, self.n_windows), dtype=np.int16)
        self.present = np.zeros((capacity, capacity, self.n_windows), dtype=np.int32)
        self.block_score = np.zeros((capacity, capacity))

    def _grow(self):
        old = (self.capacity, self.sizes, self.cluster_edges, self.present, self.block_score)
        capacity = old[0]
        self._allocate(2 * capacity)
        self.sizes[:capacity] = old[1]
        self.cluster_edges[:, :capacity] = old[2]
        self.present[:capacity, :capacity] = old[3]
        self.block_score[:capacity, :capacity] = old[4]

    def _free_slot(self) -> int:
        free = np.flatnonzero(self.sizes == 0)
        if free.size == 0:
            self._grow()
            free = np.flatnonzero(self.sizes == 0)
        return int(free[0])

    def _block_scores(self, positive, pairs) -> np.ndarray:
        """Collapsed log marginal of blocks, summed over windows (last axis)."""
        negative = pairs[..., None] - positive
        return (
            self.log_gamma_a[positive] + self.log_gamma_b[negative]
        ).sum(axis=-1) - self.n_windows * (self.log_gamma_ab[pairs] + self.log_beta_prior)

    def _refresh_scores(self, cluster: int):
        active = np.flatnonzero(self.sizes > 0)
        if self.sizes[cluster] == 0:
            return
        pairs = self.sizes[cluster] * self.sizes[active]
        pairs[active == cluster] = self.sizes[cluster] * (self.sizes[cluster] - 1) // 2
        scores = self._block_scores(self.present[cluster, active].astype(np.int64), pairs)
        self.block_score[cluster, active] = scores
        self.block_score[active, cluster] = scores

    def _remove(self, node: int):
        cluster = self.z[node]
        node_edges = self.cluster_edges[node]
        self.present[cluster] -= node_edges
        self.present[:, cluster] -= node_edges
        self.present[cluster, cluster] += node_edges[cluster]
        self.cluster_edges[:, cluster, :] -= self.edges[node]
        self.sizes[cluster] -= 1
        self.z[node] = -1
        self._refresh_scores(cluster)

    def _insert(self, node: int, cluster: int):
        node_edges = self.cluster_edges[node]
        self.present[cluster] += node_edges
        self.present[:, cluster] += node_edges
        self.present[cluster, cluster] -= node_edges[cluster]
        self.cluster_edges[:, cluster, :] += self.edges[node]
        self.sizes[cluster] += 1
        self.z[node] = cluster
        self._refresh_scores(cluster)

    def conditional(self, node: int) -> Tuple[np.ndarray, np.ndarray]:
        """
        Log conditional weights of a removed node joining every active slot,
        and, last, a new cluster.

        :return: (slots, log weights) with slot -1 standing for a new cluster
        """
        active = np.flatnonzero(self.sizes > 0)
        sizes = self.sizes[active]
        node_edges = self.cluster_edges[node][active].astype(np.int64)

        # Block (c, d) after adding the node to c gains s_d pairs
        pairs_after = possible_pairs(sizes) + sizes[None, :]
        present_after = self.present[np.ix_(active, active)] + node_edges[None, :, :]
        scores_after = self._block_scores(present_after, pairs_after)
        deltas = (scores_after - self.block_score[np.ix_(active, active)]).sum(axis=1)

        new_cluster = self._block_scores(node_edges, sizes).sum()

        slots = np.append(active, -1)
        weights = np.append(np.log(sizes) + deltas, math.log(self.hyper.crp_alpha) + new_cluster)
        return slots, weights

    def sweep(self, rng: np.random.Generator):
        for node in rng.permutation(self.n_nodes):
            self._remove(int(node))
            slots, weights = self.conditional(int(node))
            probabilities = np.exp(weights - weights.max())
            cumulative = np.cumsum(probabilities)
            choice = int(
                np.searchsorted(cumulative, rng.random() * cumulative[-1], side="right")
            )
            slot = int(slots[min(choice, slots.size - 1)])
            if slot < 0:
                slot = self._free_slot()
            self._insert(int(node), slot)

    def log_joint(self) -> float:
        active = np.flatnonzero(self.sizes > 0)
        scores = self.block_score[np.ix_(active, active)]
        return log_crp(self.sizes[active], self.hyper.crp_alpha) + float(
            np.triu(scores).sum()
        )

    def partition(self) -> Partition:
        return Partition.from_assignment(self.z, log_joint=self.log_joint())


def gibbs_sweep(
    adjacency: np.ndarray, partition: Partition, hyper: IRMHyper, rng: np.random.Generator
) -> Partition:
    chain = GibbsChain(adjacency, partition.assignment, hyper)
    chain.sweep(rng)
    return chain.partition()


def _run_chain(
    adjacency: np.ndarray,
    hyper: IRMHyper,
    seed_sequence: np.random.SeedSequence,
    on_sweep: Optional[Callable[[], None]] = None,
):
    rng = np.random.default_rng(seed_sequence)
    chain = GibbsChain(adjacency, sample_crp(adjacency.shape[1], hyper.crp_alpha, rng), hyper)
    best_score = chain.log_joint()
    best_assignment = chain.z.copy()
    trace = [best_score]
    cluster_counts = [int(np.count_nonzero(chain.sizes))]
    for _ in range(hyper.n_sweeps):
        chain.sweep(rng)
        score = chain.log_joint()
        trace.append(score)
        cluster_counts.append(int(np.count_nonzero(chain.sizes)))
        if score > best_score:
            best_score = score
            best_assignment = chain.z.copy()
        if on_sweep is not None:
            on_sweep()
    return best_score, best_assignment, trace, cluster_counts


def _degenerate_input_warnings(adjacency: np.ndarray) -> List[str]:
    n_nodes = adjacency.shape[1]
    if n_nodes < 2:
        return []
    upper = np.triu_indices(n_nodes, k=1)
    edges = adjacency[:, upper[0], upper[1]]
    if not edges.any():
        return ["every graph of the series is empty: the posterior concentrates on one cluster"]
    if edges.all():
        return ["every graph of the series is complete: the posterior concentrates on one cluster"]
    return []


def fit(
    adjacency: np.ndarray,
    hyper: IRMHyper,
    workers: int = 1,
    on_sweep: Optional[Callable[[], None]] = None,
) -> Tuple[Partition, FitDiagnostics]:
    """
    Run independent restarts of the collapsed Gibbs sampler and return the
    highest-scoring partition visited by any of them.
    """
    adjacency = np.asarray(adjacency, dtype=bool)
    if adjacency.ndim != 3 or adjacency.shape[0] == 0:
        raise ValueError("the relational model needs a non-empty graph series")

    warnings = _degenerate_input_warnings(adjacency)
    for warning in warnings:
        error_console.log(f":warning-emoji: {warning}")

    seeds = np.random.SeedSequence(hyper.seed).spawn(hyper.n_restarts)
    if workers > 1 and hyper.n_restarts > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as executor:
            results = list(
                executor.map(_run_chain, [adjacency] * hyper.n_restarts, [hyper] * hyper.n_restarts, seeds)
            )
    else:
        results = [_run_chain(adjacency, hyper, seed, on_sweep) for seed in seeds]

    best_chain = int(np.argmax([result[0] for result in results]))
    best_assignment = results[best_chain][1]
    partition = Partition.from_assignment(best_assignment)
    partition = partition._replace(log_joint=log_joint(adjacency, partition, hyper))
    diagnostics = FitDiagnostics(
        traces=[result[2] for result in results],
        cluster_counts=[result[3] for result in results],
        best_chain=best_chain,
        warnings=warnings,
    )
    return partition, diagnostics


def set_partitions(n_items: int) -> Iterator[Tuple[int, ...]]:
    """All set partitions of n items as restricted growth strings."""
    if n_items == 0:
        yield ()
        return

    def extend(prefix: List[int], n_blocks: int):
        if len(prefix) == n_items:
            yield tuple(prefix)
            return
        for label in range(n_blocks + 1):
            yield from extend(prefix + [label], max(n_blocks, label + 1))

    yield from extend([0], 1)


def exact_posterior(adjacency: np.ndarray, hyper: IRMHyper, max_nodes: int = 8):
    """
    Posterior probability of every partition, by enumeration.

    :return: list of (restricted growth string, probability)
    """
    adjacency = np.asarray(adjacency, dtype=bool)
    n_nodes = adjacency.shape[1]
    if n_nodes > max_nodes:
        raise ValueError(f"exact enumeration is limited to {max_nodes} nodes")
    labels = list(set_partitions(n_nodes))
    scores = np.array(
        [log_joint(adjacency, Partition.from_assignment(np.array(label)), hyper) for label in labels]
    )
    probabilities = np.exp(scores - scores.max())
    probabilities /= probabilities.sum()
    return list(zip(labels, probabilities))

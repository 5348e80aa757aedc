import math
from collections import Counter

import numpy as np
import pytest
from scipy.special import betaln
from sklearn.metrics.cluster import adjusted_rand_score

from dfc2bp import irm
from dfc2bp.errors import ConfigurationError
from dfc2bp.irm import GibbsChain, IRMHyper, Partition
from test_package.utils import planted_blocks, random_graph_series, total_variation


def _single_edge():
    return np.array([[[False, True], [True, False]]])


def test_canonical_labels_follow_first_appearance():
    assert irm.canonical_labels([5, 5, 2, 7, 2]).tolist() == [0, 0, 1, 2, 1]


def test_partition_helpers():
    partition = Partition.from_assignment([3, 1, 3, 3])
    assert partition.assignment.tolist() == [0, 1, 0, 0]
    assert partition.n_clusters == 2
    assert partition.sizes().tolist() == [3, 1]
    assert partition.members(0).tolist() == [0, 2, 3]
    membership = partition.membership_matrix()
    assert membership.shape == (2, 4)
    assert membership.sum(axis=0).tolist() == [1, 1, 1, 1]


def test_log_crp_matches_sequential_seating():
    # Seat 1 opens a table, seat 2 joins it (1/2), seat 3 opens another (1/3)
    assert irm.log_crp([2, 1], 1.0) == pytest.approx(math.log(1 / 6))
    # With alpha = 2: 2/2 * 1/3 * 2/4
    assert irm.log_crp([2, 1], 2.0) == pytest.approx(math.log(1 / 6))


def test_log_joint_single_edge_block_term():
    hyper = IRMHyper(beta_a=1.0, beta_b=1.0)
    partition = Partition.from_assignment([0, 0])
    block = irm.log_joint(_single_edge(), partition, hyper) - irm.log_crp([2], 1.0)
    assert block == pytest.approx(math.log(0.5))


def test_log_joint_sums_over_windows_and_blocks():
    adjacency = random_graph_series(5, 3, seed=1)
    partition = Partition.from_assignment([0, 0, 1, 1, 2])
    hyper = IRMHyper(crp_alpha=0.7, beta_a=0.5, beta_b=2.0)

    expected = irm.log_crp(partition.sizes(), hyper.crp_alpha)
    groups = [partition.members(c) for c in range(3)]
    for graph in adjacency:
        for c in range(3):
            for d in range(c, 3):
                if c == d:
                    pairs = [(i, j) for i in groups[c] for j in groups[c] if i < j]
                else:
                    pairs = [(i, j) for i in groups[c] for j in groups[d]]
                present = sum(bool(graph[i, j]) for i, j in pairs)
                absent = len(pairs) - present
                expected += betaln(present + 0.5, absent + 2.0) - betaln(0.5, 2.0)

    assert irm.log_joint(adjacency, partition, hyper) == pytest.approx(expected)


def test_link_density_of_full_and_empty_blocks():
    hyper = IRMHyper(beta_a=1.0, beta_b=1.0)
    partition = Partition.from_assignment([0, 0, 1, 1, 1])
    adjacency = np.zeros((2, 5, 5), dtype=bool)
    adjacency[0, :2, 2:] = True
    adjacency[0, 2:, :2] = True

    H = irm.link_densities(adjacency, partition, hyper).H

    assert H.shape == (2, 2, 2)
    assert H[0, 0, 1] == pytest.approx(7 / 8)
    assert H[0, 1, 0] == pytest.approx(7 / 8)
    assert H[1, 0, 1] == pytest.approx(1 / 8)
    # Within-cluster blocks: 1 and 3 node pairs, all absent
    assert H[1, 0, 0] == pytest.approx(1 / 3)
    assert H[1, 1, 1] == pytest.approx(1 / 5)


def test_link_density_of_singleton_keeps_prior_mean():
    hyper = IRMHyper(beta_a=2.0, beta_b=3.0)
    adjacency = np.zeros((3, 1, 1), dtype=bool)
    H = irm.link_densities(adjacency, Partition.from_assignment([0]), hyper).H
    assert H.shape == (3, 1, 1)
    assert H[:, 0, 0] == pytest.approx([0.4] * 3)


def test_set_partitions_counts_bell_numbers():
    assert [len(list(irm.set_partitions(n))) for n in range(1, 7)] == [1, 2, 5, 15, 52, 203]


def test_exact_posterior_normalizes():
    posterior = irm.exact_posterior(random_graph_series(4, 2, seed=2), IRMHyper())
    assert len(posterior) == 15
    assert sum(probability for _, probability in posterior) == pytest.approx(1.0)


def test_exact_posterior_limits_the_node_count():
    with pytest.raises(ValueError):
        irm.exact_posterior(random_graph_series(9, 1), IRMHyper())


def test_gibbs_chain_bookkeeping_matches_full_recount():
    adjacency = random_graph_series(9, 4, density=0.4, seed=3)
    hyper = IRMHyper(crp_alpha=1.5, beta_a=0.8, beta_b=1.2)
    rng = np.random.default_rng(0)
    chain = GibbsChain(adjacency, irm.sample_crp(9, hyper.crp_alpha, rng), hyper)

    for _ in range(20):
        chain.sweep(rng)
        partition = chain.partition()
        assert chain.log_joint() == pytest.approx(
            irm.log_joint(adjacency, partition, hyper), rel=1e-10
        )


def test_gibbs_conditional_matches_log_joint_differences():
    adjacency = random_graph_series(6, 3, seed=4)
    hyper = IRMHyper()
    chain = GibbsChain(adjacency, [0, 0, 1, 1, 2, 0], hyper)

    chain._remove(5)
    slots, weights = chain.conditional(5)

    rest = chain.z.copy()
    scores = []
    for slot in slots:
        assignment = rest.copy()
        assignment[5] = slot if slot >= 0 else rest.max() + 1
        scores.append(irm.log_joint(adjacency, Partition.from_assignment(assignment), hyper))
    scores = np.array(scores)
    assert weights - weights.max() == pytest.approx(scores - scores.max(), abs=1e-9)


@pytest.mark.slow
def test_gibbs_samples_match_exact_posterior():
    adjacency = random_graph_series(4, 2, seed=5)
    hyper = IRMHyper()
    exact = {labels: probability for labels, probability in irm.exact_posterior(adjacency, hyper)}

    rng = np.random.default_rng(1)
    chain = GibbsChain(adjacency, [0, 0, 0, 0], hyper)
    visits = Counter()
    n_sweeps = 20000
    for _ in range(n_sweeps):
        chain.sweep(rng)
        visits[tuple(irm.canonical_labels(chain.z).tolist())] += 1
    empirical = {labels: count / n_sweeps for labels, count in visits.items()}

    assert total_variation(empirical, exact) < 0.05


def test_fit_recovers_planted_blocks():
    adjacency, planted = planted_blocks((4, 4, 4), n_windows=50, p_in=0.9, p_out=0.05, seed=0)
    partition, diagnostics = irm.fit(adjacency, IRMHyper(n_sweeps=50, n_restarts=4, seed=0))

    assert adjusted_rand_score(planted, partition.assignment) == 1.0
    assert partition.n_clusters == 3
    assert len(diagnostics.traces) == 4
    assert len(diagnostics.traces[0]) == 51
    assert diagnostics.warnings == []


def test_fit_is_deterministic():
    adjacency = random_graph_series(8, 5, seed=6)
    hyper = IRMHyper(n_sweeps=10, n_restarts=3, seed=42)

    first, first_diagnostics = irm.fit(adjacency, hyper)
    second, second_diagnostics = irm.fit(adjacency, hyper)

    assert np.array_equal(first.assignment, second.assignment)
    assert first_diagnostics.traces == second_diagnostics.traces


def test_fit_returns_the_best_visited_partition():
    adjacency = random_graph_series(7, 3, seed=7)
    hyper = IRMHyper(n_sweeps=15, n_restarts=3, seed=1)
    partition, diagnostics = irm.fit(adjacency, hyper)

    best_visited = max(max(trace) for trace in diagnostics.traces)
    assert partition.log_joint == pytest.approx(best_visited, rel=1e-10)
    assert max(diagnostics.traces[diagnostics.best_chain]) == pytest.approx(best_visited)


def test_fit_single_node():
    partition, _ = irm.fit(np.zeros((4, 1, 1), dtype=bool), IRMHyper(n_sweeps=2, n_restarts=1, seed=0))
    assert partition.assignment.tolist() == [0]
    assert partition.n_clusters == 1


def test_fit_warns_on_empty_graphs():
    _, diagnostics = irm.fit(np.zeros((3, 5, 5), dtype=bool), IRMHyper(n_sweeps=2, n_restarts=1, seed=0))
    assert len(diagnostics.warnings) == 1
    assert "empty" in diagnostics.warnings[0]


def test_fit_rejects_empty_series():
    with pytest.raises(ValueError):
        irm.fit(np.zeros((0, 3, 3), dtype=bool), IRMHyper())


def test_gibbs_sweep_returns_a_canonical_partition():
    adjacency = random_graph_series(6, 2, seed=8)
    partition = irm.gibbs_sweep(
        adjacency, Partition.from_assignment([0] * 6), IRMHyper(), np.random.default_rng(0)
    )
    assert partition.assignment[0] == 0
    assert set(partition.assignment.tolist()) == set(range(partition.n_clusters))


def test_hyper_validation():
    with pytest.raises(ConfigurationError):
        IRMHyper(crp_alpha=0.0).validate()
    with pytest.raises(ConfigurationError):
        IRMHyper(n_restarts=0).validate()


def _two_cliques(n_windows: int = 5) -> np.ndarray:
    adjacency = np.zeros((n_windows, 6, 6), dtype=bool)
    for clique in (slice(0, 3), slice(3, 6)):
        adjacency[:, clique, clique] = True
    adjacency[:, np.arange(6), np.arange(6)] = False
    return adjacency


def test_two_cliques_are_the_exact_posterior_mode():
    posterior = irm.exact_posterior(_two_cliques(), IRMHyper())
    assert len(posterior) == 203
    labels, _ = max(posterior, key=lambda item: item[1])
    assert labels == (0, 0, 0, 1, 1, 1)


def test_two_cliques_are_the_modal_sampled_partition():
    adjacency = _two_cliques()
    rng = np.random.default_rng(2)
    chain = GibbsChain(adjacency, [0] * 6, IRMHyper())
    visits = Counter()
    for _ in range(50):
        chain.sweep(rng)
        visits[tuple(irm.canonical_labels(chain.z).tolist())] += 1

    assert visits.most_common(1)[0][0] == (0, 0, 0, 1, 1, 1)


def test_vanishing_concentration_merges_everything():
    adjacency = random_graph_series(4, 3, density=0.8, seed=9)
    one_cluster = (0, 0, 0, 0)
    probabilities = []
    for alpha in (1.0, 0.1, 1e-3, 1e-6):
        posterior = dict(irm.exact_posterior(adjacency, IRMHyper(crp_alpha=alpha)))
        probabilities.append(posterior[one_cluster])

    assert np.all(np.diff(probabilities) > 0)
    assert probabilities[-1] > 0.999

    rng = np.random.default_rng(3)
    chain = GibbsChain(adjacency, [0, 1, 2, 3], IRMHyper(crp_alpha=1e-6))
    merged = 0
    for _ in range(200):
        chain.sweep(rng)
        merged += chain.partition().n_clusters == 1
    assert merged >= 190


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_fit_beats_the_trivial_partitions(seed):
    adjacency = random_graph_series(10, 6, density=0.3, seed=seed)
    hyper = IRMHyper(n_sweeps=30, n_restarts=2, seed=seed)
    partition, _ = irm.fit(adjacency, hyper)

    singletons = irm.log_joint(adjacency, Partition.from_assignment(np.arange(10)), hyper)
    one_cluster = irm.log_joint(adjacency, Partition.from_assignment(np.zeros(10)), hyper)
    assert partition.log_joint >= max(singletons, one_cluster)


def test_log_joint_ignores_cluster_ids():
    adjacency = random_graph_series(7, 4, seed=10)
    hyper = IRMHyper(crp_alpha=0.5, beta_a=0.7, beta_b=1.3)
    labels = np.array([0, 1, 0, 2, 1, 2, 2])
    relabeled = np.array([2, 0, 1])[labels]

    original = irm.log_joint(adjacency, Partition(assignment=labels, n_clusters=3), hyper)
    renamed = irm.log_joint(adjacency, Partition(assignment=relabeled, n_clusters=3), hyper)

    assert renamed == pytest.approx(original, rel=1e-12)


def test_link_densities_follow_a_cluster_relabeling():
    adjacency = random_graph_series(7, 4, seed=11)
    hyper = IRMHyper(beta_a=0.5, beta_b=2.0)
    labels = np.array([0, 1, 0, 2, 1, 2, 2])
    permutation = np.array([2, 0, 1])

    H = irm.link_densities(adjacency, Partition(assignment=labels, n_clusters=3), hyper).H
    renamed = irm.link_densities(
        adjacency, Partition(assignment=permutation[labels], n_clusters=3), hyper
    ).H

    assert renamed[:, permutation[:, None], permutation[None, :]] == pytest.approx(H)
    assert np.all((H > 0) & (H < 1))


@pytest.mark.slow
def test_gibbs_samples_match_exact_posterior_on_six_nodes():
    adjacency = random_graph_series(6, 4, seed=12)
    hyper = IRMHyper()
    exact = dict(irm.exact_posterior(adjacency, hyper))

    rng = np.random.default_rng(4)
    chain = GibbsChain(adjacency, [0] * 6, hyper)
    visits = Counter()
    n_sweeps = 100000
    for _ in range(n_sweeps):
        chain.sweep(rng)
        visits[tuple(irm.canonical_labels(chain.z).tolist())] += 1
    empirical = {labels: count / n_sweeps for labels, count in visits.items()}

    assert total_variation(empirical, exact) < 0.05


@pytest.mark.slow
def test_fit_recovers_planted_blocks_for_most_seeds():
    recovered = 0
    for seed in range(10):
        adjacency, planted = planted_blocks(
            (4, 4, 4), n_windows=50, p_in=0.9, p_out=0.05, seed=seed
        )
        partition, _ = irm.fit(adjacency, IRMHyper(n_sweeps=50, n_restarts=4, seed=seed))
        recovered += adjusted_rand_score(planted, partition.assignment) == 1.0

    assert recovered >= 9

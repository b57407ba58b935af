"""Unit tests for clustering: Gumbel-max sampling, balance loss, baselines."""

import numpy as np
import pytest

from hypothesis import given, settings
from hypothesis import strategies as st

from mgvae.cluster import (
    BalanceStats,
    ClusterAssignment,
    argmax_assign,
    balance_kl,
    balance_kl_soft,
    cluster_logits,
    cluster_stats,
    gumbel_assign,
    kmeans_baseline,
    learn_balanced_clustering,
    spectral_baseline,
)
from mgvae.equivariant import init_stack
from mgvae.graph import Graph, synth_community
from mgvae.tensor import Tensor

RNG = np.random.default_rng(23)


# -- assignments --------------------------------------------------------------


def test_assignment_invariants():
    a = ClusterAssignment(pi=np.array([0, 2, 2, 1]), K=3)
    assert np.allclose(a.Pi.sum(axis=1), 1.0)
    for i in range(a.n):
        assert a.Pi[i, a.pi[i]] == 1.0
    assert list(a.sizes()) == [1, 1, 2]
    assert list(a.members(2)) == [1, 2]


def test_assignment_errors():
    with pytest.raises(ValueError):
        ClusterAssignment(pi=np.array([[0, 1]]), K=2)
    with pytest.raises(ValueError):
        ClusterAssignment(pi=np.array([0, 3]), K=2)


def test_argmax_examples():
    a = argmax_assign(np.array([[0.1, 0.9], [0.8, 0.2]]))
    assert list(a.pi) == [1, 0]
    tie = argmax_assign(np.array([[0.5, 0.5]]))
    assert tie.pi[0] == 0  # ties break toward the smallest index


def test_argmax_equivariance():
    logits = RNG.normal(size=(6, 3))
    sigma = RNG.permutation(6)
    base = argmax_assign(logits).pi
    perm = argmax_assign(logits[np.argsort(sigma)]).pi
    assert np.array_equal(perm[np.argsort(np.argsort(sigma))], base) or \
        np.array_equal(perm, base[np.argsort(sigma)])


def test_gumbel_degenerate_row():
    logits = Tensor(np.array([[50.0, -50.0, -50.0]]))
    rng = np.random.default_rng(0)
    for _ in range(20):
        a, _ = gumbel_assign(logits, rng)
        assert a.pi[0] == 0


def test_gumbel_zero_noise_is_argmax():
    logits = Tensor(RNG.normal(size=(5, 3)))
    a, _ = gumbel_assign(logits, np.random.default_rng(0),
                         noise=np.zeros((5, 3)))
    assert np.array_equal(a.pi, argmax_assign(logits).pi)


def test_gumbel_forced_noise():
    # uniform logits, fixed noise row (0.5, -0.2) -> cluster 0
    logits = Tensor(np.zeros((1, 2)))
    a, _ = gumbel_assign(logits, np.random.default_rng(0),
                         noise=np.array([[0.5, -0.2]]))
    assert a.pi[0] == 0


def test_gumbel_frequencies():
    logits = Tensor(np.array([[0.0, np.log(3.0)]]))
    rng = np.random.default_rng(42)
    hits = 0
    draws = 100_000
    for _ in range(draws):
        a, _ = gumbel_assign(logits, rng)
        hits += int(a.pi[0] == 1)
    assert abs(hits / draws - 0.75) < 0.01


def test_straight_through_forward_is_hard():
    logits = Tensor(RNG.normal(size=(4, 3)), track=True)
    a, st_mat = gumbel_assign(logits, np.random.default_rng(0))
    assert np.allclose(st_mat.data, a.Pi)
    # and gradients reach the logits through the softmax
    st_mat.sum().backward()
    # the one-hot part is constant; softmax rows sum to 1, so the total is
    # constant too and the gradient should be (numerically) zero yet defined
    assert logits.grad is not None


# -- balance loss -------------------------------------------------------------


def test_balance_kl_oracles():
    assert balance_kl(ClusterAssignment(pi=np.array([0, 0, 1, 1]), K=2)) == 0.0
    full = ClusterAssignment(pi=np.zeros(7, dtype=int), K=2)
    assert np.isclose(balance_kl(full), np.log(2.0))
    lop = ClusterAssignment(pi=np.array([0, 0, 1]), K=2)
    assert np.isclose(balance_kl(lop), 0.056633, atol=1e-6)


def test_balance_kl_soft_matches_hard():
    logits = Tensor(RNG.normal(size=(6, 3)))
    a, st_mat = gumbel_assign(logits, np.random.default_rng(1))
    assert np.isclose(float(balance_kl_soft(st_mat).data), balance_kl(a),
                      atol=1e-9)


@given(st.integers(0, 10_000))
@settings(max_examples=50, deadline=None)
def test_balance_kl_nonnegative(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 13))
    K = int(rng.integers(1, 5))
    a = ClusterAssignment(pi=rng.integers(0, K, size=n), K=K)
    kl = balance_kl(a)
    assert kl >= 0.0
    sizes = a.sizes()
    if sizes.max() == sizes.min():
        assert np.isclose(kl, 0.0)


# -- learnable path -----------------------------------------------------------


def test_cluster_logits_equivariant():
    rng = np.random.default_rng(2)
    (g,) = synth_community(8, 8, 1, seed=3)
    params = init_stack(1, [g.features_or_default().shape[1], 4, 2], rng)
    sigma = rng.permutation(g.n)
    base = cluster_logits(g, params).data
    perm = cluster_logits(g.permuted(sigma), params).data
    assert np.max(np.abs(perm[sigma] - base)) < 1e-12


def test_learn_balanced_clustering_smoke():
    (g,) = synth_community(10, 10, 1, seed=4)
    a, params = learn_balanced_clustering(g, 2, epochs=20, seed=0)
    assert a.n == g.n and a.K == 2
    assert params.depth == 2


# -- baselines ----------------------------------------------------------------


def test_spectral_two_cliques():
    n = 12  # two 6-cliques joined by nothing
    A = np.zeros((n, n))
    A[:6, :6] = 1.0
    A[6:, 6:] = 1.0
    np.fill_diagonal(A, 0.0)
    a = spectral_baseline(Graph(A), 2, seed=0)
    assert len(set(a.pi[:6])) == 1
    assert len(set(a.pi[6:])) == 1
    assert a.pi[0] != a.pi[6]


def test_spectral_size_error():
    (g,) = synth_community(5, 5, 1, seed=0)
    with pytest.raises(ValueError):
        spectral_baseline(g, 2)


def test_spectral_deterministic():
    (g,) = synth_community(14, 14, 1, seed=6)
    a = spectral_baseline(g, 2, seed=0)
    b = spectral_baseline(g, 2, seed=0)
    assert np.array_equal(a.pi, b.pi)


def test_kmeans_groups_pairs():
    X = np.array([[0.0, 0.0], [0.0, 1.0], [10.0, 10.0], [10.0, 11.0]])
    a = kmeans_baseline(X, 2, seed=0)
    assert a.pi[0] == a.pi[1]
    assert a.pi[2] == a.pi[3]
    assert a.pi[0] != a.pi[2]


def test_kmeans_k_equals_n():
    X = np.array([[0.0], [5.0], [10.0]])
    a = kmeans_baseline(X, 3, seed=0)
    assert len(set(a.pi)) == 3


def test_kmeans_too_few_points():
    with pytest.raises(ValueError):
        kmeans_baseline(np.zeros((1, 2)), 2)


def test_kmeans_pca_path():
    X = RNG.normal(size=(20, 15))
    a = kmeans_baseline(X, 2, seed=0)
    b = kmeans_baseline(X, 2, seed=0)
    assert np.array_equal(a.pi, b.pi)


def test_cluster_stats_values():
    a = ClusterAssignment(pi=np.array([0, 0, 0, 1]), K=2)
    s = cluster_stats(a)
    assert isinstance(s, BalanceStats)
    assert (s.min, s.max) == (1, 3)
    assert np.isclose(s.std, 1.0)
    assert np.isclose(s.kl, balance_kl(a))

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from marketstates import synth
from marketstates.clustering import (
    ClusteringError,
    StateAssignment,
    adjusted_rand_index,
    affinity_matrix,
    eigengap_k,
    kmeans,
    laplacian_spectrum,
    spectral_embed,
    stream_seed,
    summarize_states,
)
from synthetic import analyze, recover


def block_affinity(sizes, within=1.0):
    m = sum(sizes)
    A = np.zeros((m, m))
    start = 0
    for s in sizes:
        A[start : start + s, start : start + s] = within
        start += s
    np.fill_diagonal(A, 1.0)
    return A


@pytest.mark.parametrize("b", [2, 3, 4, 5])
def test_disconnected_blocks_give_b(b):
    A = block_affinity([4] * b)
    for nn in (None, 3, 10):
        assert eigengap_k(A, k_max=min(10, A.shape[0] - 1), n_neighbors=nn) == b
    w, _ = laplacian_spectrum(A, None)
    assert np.sum(np.abs(w) < 1e-10) == b


def test_eigenvalues_in_unit_interval_times_two():
    rng = np.random.default_rng(0)
    X = rng.random((30, 5))
    w, _ = laplacian_spectrum(X @ X.T, None)
    assert w[0] >= -1e-8 and w[-1] <= 2 + 1e-8


def test_eigengap_preconditions():
    with pytest.raises(ClusteringError):
        eigengap_k(np.eye(5), k_max=5)
    with pytest.raises(ClusteringError):
        eigengap_k(np.eye(5), k_max=1)


def test_eigengap_ties_go_to_smaller_k():
    from marketstates.clustering import eigengap_from_eigenvalues

    assert eigengap_from_eigenvalues(np.array([0.0, 0.0, 1.0, 1.0, 2.0]), 3) == 2
    assert eigengap_from_eigenvalues(np.array([0.0, 1.0, 1.0, 2.0, 2.0]), 3) == 1


def test_block_embedding_rows_are_block_constant():
    sizes = [3, 4, 5]
    A = block_affinity(sizes)
    emb = spectral_embed(A, 3, None)
    labels = np.repeat(np.arange(3), sizes)
    for s in range(3):
        rows = emb.coordinates[labels == s]
        np.testing.assert_allclose(rows, np.broadcast_to(rows[0], rows.shape), atol=1e-10)
    firsts = emb.coordinates[[0, 3, 7]]
    np.testing.assert_allclose(firsts @ firsts.T, np.eye(3), atol=1e-10)


def test_two_identical_blocks():
    emb = spectral_embed(block_affinity([4, 4]), 2, None)
    a, b = emb.coordinates[0], emb.coordinates[4]
    assert abs(a @ b) < 1e-10 or a @ b == pytest.approx(-1.0)
    np.testing.assert_allclose(emb.coordinates[:4], np.tile(a, (4, 1)), atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 6))
def test_embedding_rows_unit_norm(seed, k):
    rng = np.random.default_rng(seed)
    X = rng.random((20, 6))
    emb = spectral_embed(X @ X.T, k, None)
    np.testing.assert_allclose(np.linalg.norm(emb.coordinates, axis=1), 1.0, atol=1e-12)
    assert list(emb.eigenvalues) == sorted(emb.eigenvalues)


def test_embedding_rejects_bad_k():
    with pytest.raises(ClusteringError):
        spectral_embed(np.eye(4), 4, None)


def test_knn_affinity_is_symmetric_and_sparse():
    rng = np.random.default_rng(1)
    X = rng.random((15, 3))
    A = affinity_matrix(X @ X.T, 3)
    assert np.array_equal(A, A.T) and np.all(np.diag(A) == 0)
    assert np.all((A > 0).sum(axis=1) >= 3)
    assert (A > 0).sum() < 15 * 14


def test_kmeans_single_state():
    X = np.random.default_rng(0).random((7, 2))
    st_ = kmeans(X, 1, seed=0)
    assert st_.sizes() == [7] and set(st_.state.tolist()) == {0}


def test_kmeans_exact_locations():
    centers = np.array([[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]])
    truth = np.array([0, 1, 2, 2, 1, 0, 0, 2, 1, 1])
    st_ = kmeans(centers[truth], 3, seed=4, restarts=5)
    assert st_.inertia == 0.0
    assert adjusted_rand_index(truth, st_.state) == 1.0
    assert st_.state[0] == 0  # canonical numbering by first occurrence


def test_kmeans_k_too_large():
    with pytest.raises(ClusteringError):
        kmeans(np.zeros((3, 2)), 4)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 5))
def test_kmeans_deterministic_and_thread_independent(seed, k):
    X = np.random.default_rng(seed).random((25, 3))
    a = kmeans(X, k, seed=seed, restarts=8)
    b = kmeans(X, k, seed=seed, restarts=8, jobs=4)
    assert np.array_equal(a.state, b.state) and a.inertia == b.inertia and a.medoid == b.medoid
    assert all(s > 0 for s in a.sizes())
    for s, med in enumerate(a.medoid):
        assert med in a.members(s)


def test_kmeans_repairs_empty_clusters():
    X = np.array([[0.0], [0.0], [0.0], [0.0], [10.0]])
    st_ = kmeans(X, 3, seed=0, restarts=3)
    assert all(s > 0 for s in st_.sizes())


def test_medoid_single_member_and_tie():
    D = np.array([[0.0, 1.0, 5.0], [1.0, 0.0, 5.0], [5.0, 5.0, 0.0]])
    a = StateAssignment((10, 11, 12), np.array([0, 0, 1]), 2, (), 0.0)
    summary = summarize_states(a, D, mean_correlations={10: 0.1, 11: 0.3, 12: 0.9})
    assert summary[0].medoid == 10  # distance tie, lower index
    assert summary[1].medoid == 12 and summary[1].members == (12,)
    assert summary[0].mean_correlation == pytest.approx(0.2)


def test_state_correlation_order_follows_planted_strength():
    schedule = synth.cyclic_schedule(3, 30)
    specs = [
        synth.uniform_regime(0, 20, 0.05, schedule[0]),
        synth.RegimeSpec.from_groups(1, 20, [range(10)], 0.9, 0.05, schedule[1]),
        synth.uniform_regime(2, 20, 0.9, schedule[2]),
    ]
    strength = {0: 0.05, 1: 0.5, 2: 0.9}  # ordering of the planted block strength
    run = analyze(specs, K=20, T=20, epochs=30, seed=2)
    _, state = recover(run, k=3, n_neighbors=None)
    summary = summarize_states(
        state,
        np.zeros((30, 30)),
        matrices={m.epoch.index: m for m in run.matrices},
        mean_correlations={s.epoch_index: s.mean_correlation for s in run.stats},
    )
    assert adjusted_rand_index(run.planted, state.state) == 1.0
    by_strength = {}
    for s in summary:
        (regime,) = {run.planted[e] for e in s.members}
        by_strength[strength[regime]] = s.mean_correlation
    ordered = [by_strength[r] for r in sorted(by_strength)]
    assert ordered == sorted(ordered)
    assert summary[0].medoid_matrix is not None


def test_stream_seeds_differ_by_name_and_are_stable():
    assert stream_seed(0, "cluster") == stream_seed(0, "cluster")
    assert stream_seed(0, "cluster") != stream_seed(0, "synth")
    assert stream_seed(0, "cluster") != stream_seed(1, "cluster")

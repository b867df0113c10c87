import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import adjusted_rand_score

from wavesim.graph import (
    SpectralClustering,
    eigen_gap_count,
    export_dot,
    graph_components,
    isolation_scores,
    laplacian,
    laplacian_spectrum,
    spectral_clustering,
)
from wavesim.similarity import SimilarityMatrix


def block_similarity(sizes, rng=None, inside=1.0, noise=0.0):
    n = sum(sizes)
    S = np.zeros((n, n))
    start = 0
    truth = []
    for b, size in enumerate(sizes):
        S[start:start + size, start:start + size] = inside
        truth += [b] * size
        start += size
    if noise and rng is not None:
        E = rng.uniform(0.5, 1.0, (n, n)) * (S > 0)
        S = (E + E.T) / 2
    np.fill_diagonal(S, 1.0)
    return S, np.array(truth)


def union_find_count(W, tol=0.0):
    n = W.shape[0]
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if W[i, j] > tol:
                parent[find(i)] = find(j)
    return len({find(i) for i in range(n)})


def test_two_disjoint_edges():
    S, _ = block_similarity([2, 2])
    np.testing.assert_allclose(laplacian_spectrum(S).eigenvalues, [0, 0, 2, 2], atol=1e-12)


def test_complete_graph_k3():
    S = np.ones((3, 3))
    np.testing.assert_allclose(laplacian_spectrum(S).eigenvalues, [0, 3, 3], atol=1e-12)


def test_row_sums_zero_and_clamping(rng):
    B = rng.uniform(-1, 1, (15, 15))
    S = (B + B.T) / 2
    L, clamped = laplacian(S, return_clamped=True)
    assert np.max(np.abs(L.sum(axis=1))) < 1e-10
    iu = np.triu_indices(15, 1)
    assert clamped == int(np.sum(S[iu] < 0))
    off = L - np.diag(np.diag(L))
    assert np.all(off <= 0)


def test_diagonal_ignored(rng):
    S, _ = block_similarity([3, 2])
    T = S.copy()
    np.fill_diagonal(T, 7.0)
    for kind in ("unnormalized", "normalized"):
        np.testing.assert_array_equal(laplacian(S, kind), laplacian(T, kind))


def test_normalized_spectrum_bounds(rng):
    B = rng.random((10, 10))
    L = laplacian((B + B.T) / 2, "normalized")
    ev = np.linalg.eigvalsh(L)
    assert ev.min() > -1e-10 and ev.max() < 2 + 1e-10
    np.testing.assert_allclose(np.diag(L), 1.0)


def test_asymmetric_rejected():
    with pytest.raises(ValueError):
        laplacian(np.array([[1.0, 0.2], [0.5, 1.0]]))


@pytest.mark.parametrize("seed", range(20))
def test_psd_and_zero_multiplicity(seed):
    r = np.random.default_rng(seed)
    sizes = list(r.integers(1, 6, r.integers(1, 5)))
    S, _ = block_similarity(sizes, r, noise=True)
    noise = r.uniform(-0.3, 0.0, S.shape)
    S = S + np.triu(noise, 1) + np.triu(noise, 1).T
    for kind in ("unnormalized", "normalized"):
        spec = laplacian_spectrum(S, kind)
        assert spec.eigenvalues.min() >= -1e-10
        assert spec.eigenvalues[0] <= 1e-8
        W = np.maximum(S, 0)
        np.fill_diagonal(W, 0)
        assert np.sum(spec.eigenvalues < 1e-8) == union_find_count(W) == len(sizes)


def test_eigen_gap_examples():
    assert eigen_gap_count([0, 0, 2, 2], 0.5) == 1
    assert eigen_gap_count(np.arange(10) * 0.3, 0.4) == 1
    assert eigen_gap_count([0, 1, 2, 3], 0.5) == 3
    with pytest.raises(ValueError):
        eigen_gap_count([0, 1], 0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=1, max_size=30), st.floats(0.01, 5),
       st.floats(0.01, 5))
def test_eigen_gap_monotone(values, g1, g2):
    ev = np.sort(values)
    lo, hi = min(g1, g2), max(g1, g2)
    assert eigen_gap_count(ev, hi) <= eigen_gap_count(ev, lo)
    assert eigen_gap_count(ev, hi) >= 1


@pytest.mark.parametrize("k", [2, 3, 5])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_spectral_recovers_components(k, seed, rng):
    sizes = list(rng.integers(2, 7, k))
    S, truth = block_similarity(sizes, rng, noise=True)
    n_comp, comp = graph_components(S, 0.0)
    assert n_comp == k
    assignment, emb = spectral_clustering(S, k, seed=seed)
    assert adjusted_rand_score(comp, assignment.cluster_of) == 1.0
    assert adjusted_rand_score(truth, assignment.cluster_of) == 1.0
    assert emb.shape == (sum(sizes), k)


def test_spectral_normalized(rng):
    S, truth = block_similarity([3, 4, 5], rng, noise=True)
    a, _ = spectral_clustering(S, 3, kind="normalized")
    assert adjusted_rand_score(truth, a.cluster_of) == 1.0


def test_spectral_extremes(rng):
    B = rng.random((6, 6))
    S = (B + B.T) / 2
    one, _ = spectral_clustering(S, 1)
    assert set(one.cluster_of) == {0}
    alln, _ = spectral_clustering(S, 6)
    assert len(set(alln.cluster_of)) == 6
    with pytest.raises(ValueError):
        spectral_clustering(S, 7)


def test_isolation_examples():
    S = np.array([
        [1.0, 1.0, 0.2, 0.0],
        [1.0, 1.0, 0.3, 0.0],
        [0.2, 0.3, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ])
    scores, ranking = isolation_scores(S)
    assert scores[0] == scores[1] == 1.0
    assert ranking[0] == 3
    assert ranking[-2:].tolist() == [0, 1]
    with pytest.raises(ValueError):
        isolation_scores(np.ones((1, 1)))


def test_dot_examples():
    S = SimilarityMatrix(np.array([[1.0, 0.9], [0.9, 1.0]]), ["a", "b"], ["a", "b"], "ssim", True)
    text = export_dot(S, 0.5)
    assert text.startswith("graph G {")
    assert text.count(" -- ") == 1
    assert 'label="0.900"' in text and 'label="a"' in text
    assert export_dot(S, 0.95).count(" -- ") == 0
    assert export_dot(S, 0.95).count("[label=") == 2
    with pytest.raises(ValueError):
        export_dot(S, 1.01)


def test_dot_deterministic_and_ordered(rng):
    B = rng.random((8, 8))
    S = (B + B.T) / 2
    a, b = export_dot(S, 0.4), export_dot(S.copy(), 0.4)
    assert a == b
    edges = [tuple(int(t.strip()[1:]) for t in line.split("[")[0].split(" -- "))
             for line in a.splitlines() if " -- " in line]
    assert edges == sorted(edges)
    expected = {(i, j) for i in range(8) for j in range(i + 1, 8) if S[i, j] >= 0.4}
    assert set(edges) == expected


def test_estimator_gap_rule(rng):
    S, truth = block_similarity([4, 4, 4], rng, noise=True)
    est = SpectralClustering(gamma=0.5).fit(S)
    assert est.n_clusters_ == eigen_gap_count(est.spectrum_.eigenvalues, 0.5)
    fixed = SpectralClustering(n_clusters=3).fit(S)
    assert adjusted_rand_score(truth, fixed.labels_) == 1.0
    assert fixed.get_params()["gamma"] == 0.4

"""Graph Laplacians of similarity matrices, eigen-gaps and spectral clustering."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from sklearn.base import BaseEstimator, ClusterMixin

from ._validation import check_symmetric_matrix
from .numerics import kmeans, symmetric_eigenpairs, symmetric_eigenvalues

LAPLACIANS = ("unnormalized", "normalized")


def _values(S):
    return getattr(S, "values", S)


@dataclass
class LaplacianSpectrum:
    eigenvalues: np.ndarray
    n: int
    construction: str
    clamped_count: int


def similarity_weights(S):
    """Off-diagonal weights with negatives clamped to 0.

    Returns the weight matrix and the number of clamped (unordered) pairs.
    """
    W = check_symmetric_matrix(_values(S), name="similarity matrix").copy()
    np.fill_diagonal(W, 0.0)
    negative = W < 0
    clamped = int(np.count_nonzero(np.triu(negative, 1)))
    W[negative] = 0.0
    return W, clamped


def laplacian(S, kind="unnormalized", return_clamped=False):
    """``L = D - W`` (or ``D^-1/2 L D^-1/2``) of the clamped similarity graph.

    The diagonal of ``S`` is ignored. Isolated nodes get a zero row in the
    normalized form.
    """
    if kind not in LAPLACIANS:
        raise ValueError(f"kind must be one of {LAPLACIANS}")
    W, clamped = similarity_weights(S)
    deg = W.sum(axis=1)
    L = np.diag(deg) - W
    if kind == "normalized":
        inv = np.zeros_like(deg)
        np.divide(1.0, np.sqrt(deg), out=inv, where=deg > 0)
        L = inv[:, None] * L * inv[None, :]
    return (L, clamped) if return_clamped else L


def laplacian_spectrum(S, kind="unnormalized"):
    L, clamped = laplacian(S, kind, return_clamped=True)
    return LaplacianSpectrum(symmetric_eigenvalues(L), L.shape[0], kind, clamped)


def eigen_gap_count(eigenvalues, gamma):
    """Number of consecutive eigenvalue gaps exceeding ``gamma`` (at least 1)."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    ev = np.asarray(eigenvalues, dtype=np.float64)
    return max(int(np.count_nonzero(np.diff(ev) > gamma)), 1)


def graph_components(S, threshold=0.0, strict=True):
    """Connected components of the graph with an edge where ``S_ij > threshold``
    (``>=`` when ``strict`` is false), ignoring the diagonal."""
    V = np.asarray(_values(S), dtype=np.float64)
    n = V.shape[0]
    mask = V > threshold if strict else V >= threshold
    np.fill_diagonal(mask, False)
    i, j = np.nonzero(np.triu(mask, 1))
    graph = coo_matrix((np.ones(i.size), (i, j)), shape=(n, n))
    return connected_components(graph, directed=False)


def spectral_embedding(S, n_components, kind="unnormalized"):
    L = laplacian(S, kind)
    _, vectors = symmetric_eigenpairs(L, n_components)
    if kind == "normalized":
        norms = np.linalg.norm(vectors, axis=1, keepdims=True)
        vectors = vectors / np.where(norms > 0, norms, 1.0)
    return vectors


def spectral_clustering(S, n_c, seed=0, kind="unnormalized", n_init=10):
    """k-means on the rows of the ``n_c`` smallest Laplacian eigenvectors.

    Returns the assignment and the embedding used.
    """
    n = _values(S).shape[0]
    if not 1 <= n_c <= n:
        raise ValueError(f"n_c={n_c} must lie in 1..{n}")
    embedding = spectral_embedding(S, n_c, kind)
    return kmeans(embedding, n_c, seed=seed, n_init=n_init), embedding


def isolation_scores(S):
    """Each image's maximum similarity to any other image, and the ascending ranking."""
    V = check_symmetric_matrix(_values(S), name="similarity matrix").copy()
    if V.shape[0] < 2:
        raise ValueError("isolation scores need at least two images")
    np.fill_diagonal(V, -np.inf)
    scores = V.max(axis=1)
    return scores, np.argsort(scores, kind="stable")


def _dot_id(text):
    return '"' + str(text).replace("\\", "\\\\").replace('"', '\\"') + '"'


def export_dot(S, edge_threshold, labels=None):
    """Undirected DOT graph with an edge wherever ``S_ij >= edge_threshold``."""
    if not -1.0 <= edge_threshold <= 1.0:
        raise ValueError("edge_threshold must lie in [-1, 1]")
    V = np.asarray(_values(S), dtype=np.float64)
    n = V.shape[0]
    if labels is None:
        labels = getattr(S, "row_ids", None) or [str(i) for i in range(n)]
    lines = ["graph G {"]
    for i in range(n):
        lines.append(f"  n{i} [label={_dot_id(labels[i])}];")
    for i in range(n):
        for j in np.flatnonzero(V[i, i + 1:] >= edge_threshold) + i + 1:
            lines.append(f'  n{i} -- n{j} [weight={V[i, j]:.3f}, label="{V[i, j]:.3f}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


class SpectralClustering(ClusterMixin, BaseEstimator):
    """Spectral clustering of a precomputed similarity matrix.

    Parameters
    ----------
    n_clusters : int or None
        Fixed cluster count; ``None`` picks it by counting eigen-gaps above
        ``gamma``.
    gamma : float
    laplacian : {"unnormalized", "normalized"}
    seed : int

    Attributes
    ----------
    labels_, n_clusters_, spectrum_, embedding_
    """

    def __init__(self, n_clusters=None, gamma=0.4, laplacian="unnormalized", seed=0):
        self.n_clusters = n_clusters
        self.gamma = gamma
        self.laplacian = laplacian
        self.seed = seed

    def fit(self, S, y=None):
        self.spectrum_ = laplacian_spectrum(S, self.laplacian)
        if self.n_clusters is None:
            self.n_clusters_ = eigen_gap_count(self.spectrum_.eigenvalues, self.gamma)
        else:
            self.n_clusters_ = int(self.n_clusters)
        assignment, self.embedding_ = spectral_clustering(
            S, self.n_clusters_, self.seed, self.laplacian)
        self.assignment_ = assignment
        self.labels_ = assignment.cluster_of
        return self

"""Dense linear algebra and clustering kernels."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree
from sklearn.base import BaseEstimator, ClusterMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_features, check_symmetric_matrix
from .exceptions import NumericalError

EPS = np.finfo(np.float64).eps


@dataclass
class PivotedQRResult:
    """Outcome of column-pivoted Householder QR.

    ``r`` holds the transformed rows with columns in pivot order, so
    ``q @ r == A[:, permutation]`` whether or not the factorization stopped
    early; only the first ``columns_processed`` columns are triangular.
    """

    r_diagonal: np.ndarray
    permutation: np.ndarray
    columns_processed: int
    r: np.ndarray
    q: np.ndarray = None

    def numerical_rank(self, rel_tol):
        if self.r_diagonal.size == 0:
            return 0
        return int(np.count_nonzero(self.r_diagonal >= rel_tol * self.r_diagonal[0]))

    def condition_estimate(self, m):
        """``|R_11| / |R_mm|`` for the leading ``m`` pivoted columns."""
        if not 1 <= m <= self.r_diagonal.size:
            raise ValueError(f"m={m} outside 1..{self.r_diagonal.size}")
        last = self.r_diagonal[m - 1]
        return np.inf if last == 0 else float(self.r_diagonal[0] / last)


def _householder_pivoted(R, stop_ratio, Q=None):
    """Businger-Golub pivoting on a (rows x d) array, modified in place.

    Among remaining columns of equal residual norm the one with the lowest
    original index is chosen; unchosen columns keep their relative order.
    """
    rows, d = R.shape
    perm = np.arange(d)
    diag = []
    steps = min(rows, d)
    for k in range(steps):
        norms = np.sqrt(np.einsum("ij,ij->j", R[k:, k:], R[k:, k:]))
        j = int(np.argmax(norms))
        if norms[j] == 0.0:
            break
        if j:
            order = np.r_[j, 0:j, j + 1:d - k]
            R[:, k:] = R[:, k:][:, order]
            perm[k:] = perm[k:][order]
        x = R[k:, k].copy()
        alpha = np.linalg.norm(x)
        v = x
        v[0] += np.copysign(alpha, x[0])
        vv = v @ v
        if vv > 0.0:
            beta = 2.0 / vv
            R[k:, k:] -= np.outer(beta * v, v @ R[k:, k:])
            if Q is not None:
                Q[:, k:] -= np.outer(Q[:, k:] @ v, beta * v)
        R[k + 1:, k] = 0.0
        diag.append(abs(R[k, k]))
        if stop_ratio > 0 and diag[-1] < stop_ratio * diag[0]:
            break
    done = len(diag)
    if done < d:
        rest = np.sqrt(np.einsum("ij,ij->j", R[done:, done:], R[done:, done:]))
        order = np.argsort(-rest, kind="stable")
        R[:, done:] = R[:, done:][:, order]
        perm[done:] = perm[done:][order]
    return np.asarray(diag), perm


def pivoted_qr(matrix, stop_ratio=0.0, return_q=False):
    """Column-pivoted QR with optional early stop.

    Stops after pivot ``k`` once ``|R_kk| / |R_11| < stop_ratio`` (0 disables
    the early stop). Tall inputs are first reduced to their triangular factor
    by an unpivoted LAPACK QR; column norms, and hence every pivoting
    decision, are invariant under that orthogonal reduction.
    """
    A = check_features(matrix)
    if not 0.0 <= stop_ratio <= 1.0:
        raise ValueError("stop_ratio must lie in [0, 1]")
    n, d = A.shape
    Q0 = None
    if n > d:
        if return_q:
            Q0, R = scipy.linalg.qr(A, mode="economic")
        else:
            R = scipy.linalg.qr(A, mode="r")[0][:d]
    else:
        R = A.copy()
    Q1 = np.eye(R.shape[0]) if return_q else None
    diag, perm = _householder_pivoted(R, stop_ratio, Q1)
    q = None
    if return_q:
        q = Q1 if Q0 is None else Q0 @ Q1
    return PivotedQRResult(diag, perm, len(diag), R, q)


@dataclass
class ColumnSelection:
    m: int
    columns: np.ndarray
    constant_columns: np.ndarray
    zero_columns: np.ndarray
    qr: PivotedQRResult

    def condition_estimate(self, m=None):
        return self.qr.condition_estimate(self.m if m is None else m)


def constant_columns(W):
    W = np.asarray(W)
    return np.flatnonzero(np.all(W == W[:1], axis=0))


def zero_columns(W):
    return np.flatnonzero(~np.any(np.asarray(W), axis=0))


def select_columns(W, tau=1e5):
    """Largest prefix of pivoted columns whose condition estimate stays below tau.

    Columns that take a single value across all rows are dropped before the
    factorization. Returned indices refer to columns of ``W``, in pivot order.
    """
    W = check_features(W)
    if not tau > 1:
        raise ValueError("tau must exceed 1")
    const = constant_columns(W)
    varying = np.setdiff1d(np.arange(W.shape[1]), const)
    if varying.size == 0:
        raise NumericalError("every column is constant; nothing to select")
    # stopping at ratio 1/tau processes exactly the pivots needed to find m
    qr = pivoted_qr(W[:, varying], stop_ratio=1.0 / tau)
    ratios = qr.r_diagonal[0] / np.where(qr.r_diagonal > 0, qr.r_diagonal, np.nan)
    m = int(np.count_nonzero(ratios < tau))
    if m < 1:
        raise NumericalError("no column prefix satisfies the condition bound")
    return ColumnSelection(m, varying[qr.permutation[:m]], const, zero_columns(W), qr)


@dataclass
class ConditionNumber:
    value: float
    mode: str
    raw: float
    rank_deficient: bool

    def __float__(self):
        return float(self.value)


def condition_number(matrix, mode="auto"):
    """Ratio of extreme singular values.

    ``mode="exact"`` uses singular values (requires n >= d), ``"fast"`` the
    pivoted R-diagonal ratio; ``"auto"`` picks exact when possible. Matrices
    that are rank deficient to working precision report ``inf`` with the
    finite ratio kept in ``raw``.
    """
    A = check_features(matrix)
    n, d = A.shape
    if mode == "auto":
        mode = "exact" if n >= d else "fast"
    if mode == "exact":
        if n < d:
            raise ValueError("exact mode needs at least as many rows as columns")
        R = scipy.linalg.qr(A, mode="r")[0][:d] if n > d else A
        s = scipy.linalg.svdvals(R)
        hi, lo = s[0], s[-1]
    elif mode == "fast":
        diag = pivoted_qr(A).r_diagonal
        if diag.size == 0:
            hi = lo = 0.0
        else:
            hi = diag[0]
            lo = diag[-1] if diag.size == min(n, d) else 0.0
    else:
        raise ValueError(f"unknown mode {mode!r}")
    if hi == 0.0:
        return ConditionNumber(np.inf, mode, np.inf, True)
    raw = np.inf if lo == 0.0 else float(hi / lo)
    deficient = lo <= hi * EPS * max(n, d)
    return ConditionNumber(np.inf if deficient else raw, mode, raw, bool(deficient))


def symmetric_eigenvalues(matrix, tol=1e-10):
    """Full spectrum of a symmetric matrix, ascending."""
    S = check_symmetric_matrix(matrix, tol)
    S = 0.5 * (S + S.T)
    return scipy.linalg.eigh(S, eigvals_only=True, driver="evr")


def symmetric_eigenpairs(matrix, k_smallest, tol=1e-10):
    """The ``k_smallest`` eigenvalues and their orthonormal eigenvectors (columns)."""
    S = check_symmetric_matrix(matrix, tol)
    n = S.shape[0]
    if not 1 <= k_smallest <= n:
        raise ValueError(f"k_smallest={k_smallest} outside 1..{n}")
    S = 0.5 * (S + S.T)
    return scipy.linalg.eigh(S, subset_by_index=[0, k_smallest - 1], driver="evr")


@dataclass
class ClusterAssignment:
    cluster_of: np.ndarray
    k: int
    centroids: np.ndarray = None
    inertia: float = None
    n_iter: int = 0
    inertia_history: list = field(default_factory=list)


def _sq_distances(X, x_sq, C):
    d2 = x_sq[:, None] - 2.0 * (X @ C.T) + np.einsum("ij,ij->i", C, C)[None, :]
    return np.maximum(d2, 0.0)


def _kmeans_pp(X, x_sq, k, rng):
    n = X.shape[0]
    centers = np.empty(k, dtype=np.int64)
    centers[0] = rng.integers(n)
    closest = _sq_distances(X, x_sq, X[centers[:1]])[:, 0]
    for c in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            free = np.setdiff1d(np.arange(n), centers[:c])
            idx = int(rng.choice(free))
        centers[c] = idx
        closest = np.minimum(closest, _sq_distances(X, x_sq, X[idx:idx + 1])[:, 0])
    return X[centers].copy()


def _lloyd(X, x_sq, centroids, max_iters):
    n, k = X.shape[0], centroids.shape[0]
    prev = None
    history = []
    for it in range(1, max_iters + 1):
        d2 = _sq_distances(X, x_sq, centroids)
        labels = np.argmin(d2, axis=1)
        cost = d2[np.arange(n), labels]
        counts = np.bincount(labels, minlength=k)
        for empty in np.flatnonzero(counts == 0):
            movable = counts[labels] > 1
            if not movable.any():
                break
            i = int(np.argmax(np.where(movable, cost, -1.0)))
            counts[labels[i]] -= 1
            labels[i] = empty
            counts[empty] = 1
            cost[i] = 0.0
            centroids[empty] = X[i]
        history.append(float(cost.sum()))
        if prev is not None and np.array_equal(labels, prev):
            return labels, centroids, history, it
        centroids = np.zeros_like(centroids)
        np.add.at(centroids, labels, X)
        centroids /= np.bincount(labels, minlength=k)[:, None]
        prev = labels
    return prev, centroids, history, max_iters


def kmeans(points, k, seed=0, max_iters=300, n_init=10):
    """Lloyd's k-means with k-means++ seeding; best of ``n_init`` restarts.

    Empty clusters are refilled with the point farthest from its centroid.
    Deterministic for a given seed.
    """
    X = check_features(points)
    n = X.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} must lie in 1..{n}")
    rng = np.random.default_rng(seed)
    x_sq = np.einsum("ij,ij->i", X, X)
    best = None
    for _ in range(max(1, n_init)):
        init = _kmeans_pp(X, x_sq, k, rng)
        labels, centroids, history, n_iter = _lloyd(X, x_sq, init, max_iters)
        inertia = float(np.sum((X - centroids[labels]) ** 2))
        if best is None or inertia < best.inertia:
            best = ClusterAssignment(labels.astype(np.int64), k, centroids, inertia,
                                     n_iter, history)
    return best


def _relabel_first_seen(labels):
    _, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
    rank = np.argsort(np.argsort(first))
    return rank[inverse].astype(np.int64)


def agglomerative_threshold(points, distance_cutoff):
    """Single-linkage components joining pairs at Euclidean distance <= cutoff.

    Cluster ids are numbered in order of each cluster's lowest member index.
    """
    X = check_features(points)
    if distance_cutoff < 0:
        raise ValueError("distance_cutoff must be non-negative")
    n = X.shape[0]
    pairs = cKDTree(X).query_pairs(r=distance_cutoff, output_type="ndarray")
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    k, labels = connected_components(graph, directed=False)
    return _finalize(X, _relabel_first_seen(labels))


def single_linkage_n_clusters(points, n_clusters):
    """Cut the single-linkage dendrogram into at most ``n_clusters`` groups."""
    X = check_features(points)
    n = X.shape[0]
    if not 1 <= n_clusters <= n:
        raise ValueError(f"n_clusters={n_clusters} must lie in 1..{n}")
    if n == 1:
        return _finalize(X, np.zeros(1, dtype=np.int64))
    Z = linkage(X, method="single")
    labels = fcluster(Z, t=n_clusters, criterion="maxclust")
    return _finalize(X, _relabel_first_seen(labels))


def _finalize(X, labels):
    k = int(labels.max()) + 1 if labels.size else 0
    centroids = np.zeros((k, X.shape[1]))
    np.add.at(centroids, labels, X)
    centroids /= np.bincount(labels, minlength=k)[:, None]
    inertia = float(np.sum((X - centroids[labels]) ** 2))
    return ClusterAssignment(labels, k, centroids, inertia)


class RRQRColumnSelector(TransformerMixin, BaseEstimator):
    """Keep the most linearly independent columns of a coefficient matrix.

    Parameters
    ----------
    tau : float
        Ceiling on the R-diagonal condition estimate of the kept columns.

    Attributes
    ----------
    selection_ : ColumnSelection
    columns_ : ndarray
        Kept column indices in pivot order.
    n_selected_ : int
    """

    def __init__(self, tau=1e5):
        self.tau = tau

    def fit(self, X, y=None):
        X = check_features(X)
        self.n_features_in_ = X.shape[1]
        self.selection_ = select_columns(X, self.tau)
        self.columns_ = self.selection_.columns
        self.n_selected_ = self.selection_.m
        return self

    def transform(self, X):
        check_is_fitted(self, "columns_")
        X = check_features(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        return X[:, self.columns_]

    def get_support(self, indices=False):
        check_is_fitted(self, "columns_")
        if indices:
            return np.sort(self.columns_)
        mask = np.zeros(self.n_features_in_, dtype=bool)
        mask[self.columns_] = True
        return mask


class KMeans(ClusterMixin, BaseEstimator):
    """Deterministic k-means (k-means++ seeding, Lloyd iterations)."""

    def __init__(self, n_clusters=8, seed=0, max_iter=300, n_init=10):
        self.n_clusters = n_clusters
        self.seed = seed
        self.max_iter = max_iter
        self.n_init = n_init

    def fit(self, X, y=None):
        self.assignment_ = kmeans(X, self.n_clusters, self.seed, self.max_iter, self.n_init)
        self.labels_ = self.assignment_.cluster_of
        self.cluster_centers_ = self.assignment_.centroids
        self.inertia_ = self.assignment_.inertia
        return self

    def predict(self, X):
        check_is_fitted(self, "cluster_centers_")
        X = check_features(X)
        return np.argmin(_sq_distances(X, np.einsum("ij,ij->i", X, X), self.cluster_centers_),
                         axis=1)


class ThresholdAgglomerative(ClusterMixin, BaseEstimator):
    """Single-linkage clustering at a fixed distance cutoff."""

    def __init__(self, distance_cutoff=0.0):
        self.distance_cutoff = distance_cutoff

    def fit(self, X, y=None):
        self.assignment_ = agglomerative_threshold(X, self.distance_cutoff)
        self.labels_ = self.assignment_.cluster_of
        self.n_clusters_ = self.assignment_.k
        return self

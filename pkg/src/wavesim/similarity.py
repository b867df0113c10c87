"""Pairwise image similarity: SSIM, cosine and Gaussian-kernel measures."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed
from scipy.spatial.distance import cdist, pdist, squareform

from ._validation import check_image_batch
from .exceptions import NumericalError, ShapeMismatchError

logger = logging.getLogger(__name__)

MEASURES = ("ssim", "cosine", "gaussian")


@dataclass(frozen=True)
class SsimParams:
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0
    window_size: int = 11
    window_sigma: float = 1.5
    component_weights: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.k1 <= 0 or self.k2 <= 0:
            raise ValueError("k1 and k2 must be positive")
        if self.window_size < 1 or self.window_size % 2 == 0:
            raise ValueError("window_size must be a positive odd integer")
        if self.window_sigma <= 0 or self.dynamic_range <= 0:
            raise ValueError("window_sigma and dynamic_range must be positive")
        weights = tuple(float(w) for w in self.component_weights)
        object.__setattr__(self, "component_weights", weights)
        if len(self.component_weights) != 3:
            raise ValueError("component_weights needs three exponents")

    @property
    def c1(self):
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self):
        return (self.k2 * self.dynamic_range) ** 2

    def window(self):
        x = np.arange(self.window_size) - (self.window_size - 1) / 2
        g = np.exp(-(x ** 2) / (2 * self.window_sigma ** 2))
        return g / g.sum()


def _filter_valid(stack, g):
    """Separable filtering of ``(..., H, W)`` keeping only fully-inside windows."""
    k = g.size
    h, w = stack.shape[-2:]
    rows = g[0] * stack[..., 0:h - k + 1, :]
    for t in range(1, k):
        rows = rows + g[t] * stack[..., t:t + h - k + 1, :]
    out = g[0] * rows[..., 0:w - k + 1]
    for t in range(1, k):
        out = out + g[t] * rows[..., t:t + w - k + 1]
    return out


def _local_stats(planes, g):
    mu = _filter_valid(planes, g)
    return mu, _filter_valid(planes * planes, g) - mu * mu


def _ssim_maps(x, mu_x, var_x, Y, mu_y, var_y, params, g):
    """Mean local SSIM between one plane ``x`` and a stack ``Y``."""
    cov = _filter_valid(x * Y, g) - mu_x * mu_y
    c1, c2 = params.c1, params.c2
    alpha, beta, gamma = params.component_weights
    if alpha == beta == gamma == 1.0:
        num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
        den = (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)
        local = num / den
    else:
        c3 = c2 / 2
        sd = np.sqrt(np.maximum(var_x, 0.0) * np.maximum(var_y, 0.0))
        lum = (2 * mu_x * mu_y + c1) / (mu_x ** 2 + mu_y ** 2 + c1)
        con = (2 * sd + c2) / (var_x + var_y + c2)
        struct = (cov + c3) / (sd + c3)
        local = lum ** alpha * con ** beta * np.sign(struct) * np.abs(struct) ** gamma
    return np.clip(local.mean(axis=(-2, -1)), -1.0, 1.0)


def _as_plane(img):
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 3:
        if arr.shape[0] != 1:
            raise ShapeMismatchError("ssim expects grayscale input; convert with to_grayscale")
        arr = arr[0]
    if arr.ndim != 2:
        raise ShapeMismatchError(f"expected an image plane, got shape {arr.shape}")
    return arr


def _check_window(shape, params):
    if params.window_size > min(shape):
        raise ShapeMismatchError(
            f"window of {params.window_size} pixels does not fit a {shape[0]}x{shape[1]} image")


def ssim(a, b, params=None):
    """Mean SSIM over all fully-interior Gaussian windows of two gray images."""
    params = params or SsimParams()
    x, y = _as_plane(a), _as_plane(b)
    if x.shape != y.shape:
        raise ShapeMismatchError(f"shape mismatch {x.shape} vs {y.shape}")
    _check_window(x.shape, params)
    g = params.window()
    mu_x, var_x = _local_stats(x, g)
    mu_y, var_y = _local_stats(y, g)
    return float(_ssim_maps(x, mu_x, var_x, y, mu_y, var_y, params, g))


def cosine_similarity(u, v, return_flag=False):
    """``u.v / (|u||v|)``; a zero vector gives 0 and sets the flag."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ShapeMismatchError(f"length mismatch {u.size} vs {v.size}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    zero = nu == 0 or nv == 0
    value = 0.0 if zero else float(np.clip(u @ v / (nu * nv), -1.0, 1.0))
    return (value, zero) if return_flag else value


@dataclass
class SimilarityMatrix:
    values: np.ndarray
    row_ids: list
    col_ids: list
    measure: str
    symmetric: bool
    params: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.values.shape

    def off_diagonal(self):
        """Upper-triangle entries (symmetric case) or every entry (cross-set)."""
        if not self.symmetric:
            return self.values.ravel()
        return self.values[np.triu_indices(self.values.shape[0], k=1)]

    def save(self, path):
        """Write ``<path>.bin`` (little-endian float64) and ``<path>.json``."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        np.ascontiguousarray(self.values, dtype="<f8").tofile(path.with_suffix(".bin"))
        meta = {
            "n_rows": int(self.values.shape[0]),
            "n_cols": int(self.values.shape[1]),
            "measure": self.measure,
            "symmetric": self.symmetric,
            "params": self.params,
            "row_ids": list(self.row_ids),
            "col_ids": list(self.col_ids),
        }
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True))

    @classmethod
    def load(cls, path):
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        values = np.fromfile(path.with_suffix(".bin"), dtype="<f8")
        values = values.reshape(meta["n_rows"], meta["n_cols"])
        return cls(values, meta["row_ids"], meta["col_ids"], meta["measure"],
                   meta["symmetric"], meta.get("params", {}))

    def to_csv(self, path):
        """Row-major heatmap dump with 6 significant digits."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            for row in self.values:
                writer.writerow([f"{v:.6g}" for v in row])


def _gray_planes(images):
    from .ingest import to_grayscale

    images = check_image_batch(images)
    return to_grayscale(images)[:, 0]


def _ssim_rows(row_planes, col_planes, params, pairs_of_row, n_jobs, chunk=64):
    """Evaluate SSIM for ``pairs_of_row(i)`` column lists, one task per row.

    Each row is computed identically regardless of worker count.
    """
    g = params.window()
    _check_window(row_planes.shape[1:], params)
    same = row_planes is col_planes
    row_stats = _local_stats(row_planes, g)
    col_stats = row_stats if same else _local_stats(col_planes, g)

    def task(i):
        cols = pairs_of_row(i)
        if len(cols) == 0:
            return np.empty(0)
        mu_r, var_r = row_stats
        mu_c, var_c = col_stats
        out = np.empty(len(cols))
        for s in range(0, len(cols), chunk):
            J = cols[s:s + chunk]
            out[s:s + len(J)] = _ssim_maps(row_planes[i], mu_r[i], var_r[i], col_planes[J],
                                           mu_c[J], var_c[J], params, g)
        return out

    rows = range(row_planes.shape[0])
    if n_jobs == 1:
        return [task(i) for i in rows]
    return Parallel(n_jobs=n_jobs, prefer="threads")(delayed(task)(i) for i in rows)


def ssim_matrix(images, params=None, ids=None, n_jobs=1):
    """Symmetric SSIM matrix; the upper triangle is computed and mirrored."""
    params = params or SsimParams()
    planes = _gray_planes(images)
    n = planes.shape[0]
    values = np.eye(n)
    rows = _ssim_rows(planes, planes, params, lambda i: np.arange(i + 1, n), n_jobs)
    for i, row in enumerate(rows):
        values[i, i + 1:] = row
    iu = np.triu_indices(n, k=1)
    values[(iu[1], iu[0])] = values[iu]
    ids = ids if ids is not None else [str(i) for i in range(n)]
    return SimilarityMatrix(values, list(ids), list(ids), "ssim", True, asdict(params))


def _features(data, basis, levels):
    from .ingest import LabeledDataset
    from .wavelet import CoefficientMatrix, decompose_dataset

    if isinstance(data, LabeledDataset):
        cm = decompose_dataset(data, basis, levels)
        return cm.values, cm.image_ids
    if isinstance(data, CoefficientMatrix):
        return data.values, data.image_ids
    X = np.asarray(data, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeMismatchError(f"expected a feature matrix, got shape {X.shape}")
    return X, None


def _resolve_sigma(distances, sigma):
    if sigma is None or sigma == "auto":
        sigma = float(np.median(distances)) if distances.size else 0.0
        if sigma == 0.0:
            raise NumericalError("median pairwise distance is 0; give sigma explicitly")
        return sigma
    sigma = float(sigma)
    if sigma <= 0:
        raise NumericalError("sigma must be positive")
    return sigma


def gaussian_similarity_matrix(coeffs, sigma="auto", ids=None):
    """``exp(-d^2 / (2 sigma^2))`` over Euclidean distances between rows.

    ``sigma="auto"`` uses the median off-diagonal distance.
    """
    X, found_ids = _features(coeffs, "haar", 2)
    n = X.shape[0]
    if n < 2:
        raise ValueError("need at least two rows")
    dist = pdist(X)
    sigma = _resolve_sigma(dist, sigma)
    values = squareform(np.exp(-(dist ** 2) / (2 * sigma ** 2)))
    np.fill_diagonal(values, 1.0)
    ids = list(ids if ids is not None else found_ids or [str(i) for i in range(n)])
    return SimilarityMatrix(values, ids, ids, "gaussian", True, {"sigma": sigma})


def cosine_similarity_matrix(coeffs, ids=None):
    """Pairwise cosine similarity of rows; zero rows score 0 against others."""
    X, found_ids = _features(coeffs, "haar", 2)
    n = X.shape[0]
    norms = np.linalg.norm(X, axis=1)
    zero = norms == 0
    if zero.any():
        logger.warning("%d zero-norm rows get cosine similarity 0", int(zero.sum()))
    U = X / np.where(zero, 1.0, norms)[:, None]
    values = np.clip(U @ U.T, -1.0, 1.0)
    values = np.triu(values, 1)
    values = values + values.T
    np.fill_diagonal(values, 1.0)
    ids = list(ids if ids is not None else found_ids or [str(i) for i in range(n)])
    return SimilarityMatrix(values, ids, ids, "cosine", True,
                            {"zero_norm_rows": np.flatnonzero(zero).tolist()})


def similarity_matrix(dataset, measure="ssim", params=None, n_jobs=1):
    """Full symmetric similarity matrix of a dataset.

    ``params`` is an :class:`SsimParams` for SSIM; for the wavelet measures a
    dict with optional ``basis``, ``levels`` and (gaussian) ``sigma``.
    """
    if len(dataset) < 2:
        raise ValueError("similarity matrix needs at least two images")
    if measure == "ssim":
        params = params if isinstance(params, SsimParams) else SsimParams(**(params or {}))
        return ssim_matrix(dataset.images, params, dataset.source_ids, n_jobs)
    params = dict(params or {})
    basis, levels = params.get("basis", "haar"), params.get("levels", 2)
    if measure == "gaussian":
        X, _ = _features(dataset, basis, levels)
        S = gaussian_similarity_matrix(X, params.get("sigma", "auto"), dataset.source_ids)
    elif measure == "cosine":
        X, _ = _features(dataset, basis, levels)
        S = cosine_similarity_matrix(X, dataset.source_ids)
    else:
        raise ValueError(f"unknown measure {measure!r}; choose from {MEASURES}")
    S.params.update(basis=basis, levels=levels)
    return S


def cross_similarity(train, test, measure="ssim", params=None, n_jobs=1):
    """Rectangular matrix with ``values[t, r] = F(test_t, train_r)``."""
    if train.images.shape[1:] != test.images.shape[1:]:
        raise ShapeMismatchError(
            f"train images {train.images.shape[1:]} vs test images {test.images.shape[1:]}")
    if measure == "ssim":
        params = params if isinstance(params, SsimParams) else SsimParams(**(params or {}))
        rows_p, cols_p = _gray_planes(test.images), _gray_planes(train.images)
        all_cols = np.arange(cols_p.shape[0])
        values = np.vstack(_ssim_rows(rows_p, cols_p, params, lambda i: all_cols, n_jobs))
        info = asdict(params)
    else:
        params = dict(params or {})
        basis, levels = params.get("basis", "haar"), params.get("levels", 2)
        Xt, _ = _features(test, basis, levels)
        Xr, _ = _features(train, basis, levels)
        info = {"basis": basis, "levels": levels}
        if measure == "gaussian":
            dist = cdist(Xt, Xr)
            sigma = params.get("sigma", "auto")
            if sigma in (None, "auto"):
                sigma = _resolve_sigma(pdist(Xr), sigma)
            sigma = _resolve_sigma(dist, sigma)
            values = np.exp(-(dist ** 2) / (2 * sigma ** 2))
            info["sigma"] = sigma
        elif measure == "cosine":
            nt, nr = np.linalg.norm(Xt, axis=1), np.linalg.norm(Xr, axis=1)
            Ut = Xt / np.where(nt == 0, 1, nt)[:, None]
            Ur = Xr / np.where(nr == 0, 1, nr)[:, None]
            values = Ut @ Ur.T
            values = np.clip(values, -1.0, 1.0)
        else:
            raise ValueError(f"unknown measure {measure!r}; choose from {MEASURES}")
    return SimilarityMatrix(values, list(test.source_ids), list(train.source_ids), measure,
                            False, info)

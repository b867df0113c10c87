"""Periodized orthonormal 2D discrete wavelet transforms.

Each level applies an orthonormal analysis matrix along both image axes
(rows first half lowpass, second half highpass, circular wrap-around), so the
coefficient count always equals the pixel count and the inverse is the
transpose.

Vectorized layout of one channel: the deepest LL band, then for each level
from deepest to finest the LH, HL and HH bands, each flattened row-major.
Here LH is lowpass down the columns and highpass across the rows (horizontal
detail), HL the converse. Channels are concatenated in order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_image_batch
from .exceptions import ShapeMismatchError

_SQ3 = np.sqrt(3.0)


@dataclass(frozen=True)
class WaveletBasis:
    name: str
    lowpass: tuple
    highpass: tuple


def _quadrature_mirror(lowpass):
    n = len(lowpass)
    return tuple((-1) ** k * lowpass[n - 1 - k] for k in range(n))


def _make_basis(name, lowpass):
    return WaveletBasis(name, tuple(lowpass), _quadrature_mirror(lowpass))


BASES = {
    "haar": _make_basis("haar", [1 / np.sqrt(2.0), 1 / np.sqrt(2.0)]),
    "db2": _make_basis(
        "db2",
        np.array([1 + _SQ3, 3 + _SQ3, 3 - _SQ3, 1 - _SQ3]) / (4 * np.sqrt(2.0)),
    ),
}


def get_basis(basis):
    if isinstance(basis, WaveletBasis):
        return basis
    try:
        return BASES[str(basis).lower()]
    except KeyError:
        raise ValueError(f"unknown wavelet basis {basis!r}; choose from {sorted(BASES)}") from None


@lru_cache(maxsize=64)
def analysis_matrix(basis_name, n):
    """Dense orthonormal single-level periodized analysis operator (n x n)."""
    basis = get_basis(basis_name)
    half = n // 2
    mat = np.zeros((n, n))
    for k in range(half):
        for j, (lo, hi) in enumerate(zip(basis.lowpass, basis.highpass)):
            col = (2 * k + j) % n
            mat[k, col] += lo
            mat[half + k, col] += hi
    mat.setflags(write=False)
    return mat


def effective_levels(height, width, levels):
    """Number of levels actually applied: stop once either dimension is odd."""
    if levels < 1:
        raise ValueError("levels must be >= 1")
    if height % 2 or width % 2:
        raise ShapeMismatchError(
            f"image size {height}x{width} has an odd dimension; pad or crop to even size"
        )
    done = 0
    while done < levels and height % 2 == 0 and width % 2 == 0 and height >= 2 and width >= 2:
        height //= 2
        width //= 2
        done += 1
    return done


def _analyze_axis(x, basis, axis):
    """One periodized analysis step along ``axis``: lowpass half, then highpass half."""
    n = x.shape[axis]
    k2 = 2 * np.arange(n // 2)
    lo = hi = 0.0
    for j, (h, g) in enumerate(zip(basis.lowpass, basis.highpass)):
        part = np.take(x, (k2 + j) % n, axis=axis)
        lo = lo + h * part
        hi = hi + g * part
    return np.concatenate([lo, hi], axis=axis)


def _synthesize_axis(x, basis, axis):
    """Inverse of :func:`_analyze_axis`."""
    x = np.moveaxis(x, axis, -1)
    n = x.shape[-1]
    half = n // 2
    lo, hi = x[..., :half], x[..., half:]
    k2 = 2 * np.arange(half)
    out = np.zeros_like(x)
    for j, (h, g) in enumerate(zip(basis.lowpass, basis.highpass)):
        out[..., (k2 + j) % n] += h * lo + g * hi
    return np.moveaxis(out, -1, axis)


def _forward_pyramid(planes, basis_name, levels):
    """Transform a stack ``(..., H, W)`` into Mallat layout.

    Elementwise filter arithmetic (rather than BLAS products) keeps detail
    coefficients of constant regions exactly zero for Haar.
    """
    basis = get_basis(basis_name)
    out = np.array(planes, dtype=np.float64, copy=True)
    h, w = out.shape[-2:]
    for _ in range(levels):
        block = _analyze_axis(out[..., :h, :w], basis, -2)
        out[..., :h, :w] = _analyze_axis(block, basis, -1)
        h //= 2
        w //= 2
    return out


def _inverse_pyramid(planes, basis_name, levels, height, width):
    basis = get_basis(basis_name)
    out = np.array(planes, dtype=np.float64, copy=True)
    sizes = []
    h, w = height, width
    for _ in range(levels):
        sizes.append((h, w))
        h //= 2
        w //= 2
    for h, w in reversed(sizes):
        block = _synthesize_axis(out[..., :h, :w], basis, -1)
        out[..., :h, :w] = _synthesize_axis(block, basis, -2)
    return out


def subband_slices(height, width, levels):
    """Ordered ``(name, level, row_slice, col_slice)`` within a Mallat layout."""
    bands = []
    h, w = height >> levels, width >> levels
    bands.append(("LL", levels, slice(0, h), slice(0, w)))
    for level in range(levels, 0, -1):
        h, w = height >> level, width >> level
        bands.append(("LH", level, slice(0, h), slice(w, 2 * w)))
        bands.append(("HL", level, slice(h, 2 * h), slice(0, w)))
        bands.append(("HH", level, slice(h, 2 * h), slice(w, 2 * w)))
    return bands


def _pack(layout, levels):
    h, w = layout.shape[-2:]
    parts = [layout[..., rs, cs].reshape(layout.shape[:-2] + (-1,))
             for _, _, rs, cs in subband_slices(h, w, levels)]
    return np.concatenate(parts, axis=-1)


def _unpack(vectors, height, width, levels):
    vectors = np.asarray(vectors, dtype=np.float64)
    layout = np.empty(vectors.shape[:-1] + (height, width))
    pos = 0
    for _, _, rs, cs in subband_slices(height, width, levels):
        bh, bw = rs.stop - rs.start, cs.stop - cs.start
        layout[..., rs, cs] = vectors[..., pos:pos + bh * bw].reshape(vectors.shape[:-1] + (bh, bw))
        pos += bh * bw
    return layout


def dwt2_single_channel(plane, basis="haar", levels=1):
    """Multilevel 2D DWT of one ``(H, W)`` plane.

    Returns the flat coefficient vector in the module's subband order (same
    length as the plane).
    """
    plane = np.asarray(plane, dtype=np.float64)
    if plane.ndim != 2:
        raise ShapeMismatchError(f"expected a 2D plane, got shape {plane.shape}")
    h, w = plane.shape
    lv = effective_levels(h, w, levels)
    name = get_basis(basis).name
    return _pack(_forward_pyramid(plane, name, lv), lv)


def idwt2_single_channel(coefficients, shape, basis="haar", levels=1):
    """Inverse of :func:`dwt2_single_channel` for a plane of ``shape``."""
    coefficients = np.asarray(coefficients, dtype=np.float64)
    h, w = shape
    if coefficients.shape != (h * w,):
        raise ShapeMismatchError(f"{coefficients.size} coefficients cannot fill a {h}x{w} plane")
    lv = effective_levels(h, w, levels)
    name = get_basis(basis).name
    return _inverse_pyramid(_unpack(coefficients, h, w, lv), name, lv, h, w)


@dataclass
class CoefficientMatrix:
    """One row of vectorized wavelet coefficients per image."""

    values: np.ndarray
    image_ids: list
    basis: str
    levels: int
    image_shape: tuple = None

    @property
    def shape(self):
        return self.values.shape

    def save(self, path):
        """Write ``<path>.bin`` (little-endian float64) and ``<path>.json``."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        np.ascontiguousarray(self.values, dtype="<f8").tofile(path.with_suffix(".bin"))
        meta = {
            "n": int(self.values.shape[0]),
            "d": int(self.values.shape[1]),
            "basis": self.basis,
            "levels": int(self.levels),
            "image_shape": list(self.image_shape) if self.image_shape else None,
            "image_ids": list(self.image_ids),
        }
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2))

    @classmethod
    def load(cls, path):
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        values = np.fromfile(path.with_suffix(".bin"), dtype="<f8")
        values = values.reshape(meta["n"], meta["d"])
        shape = tuple(meta["image_shape"]) if meta.get("image_shape") else None
        return cls(values, meta["image_ids"], meta["basis"], meta["levels"], shape)


def _decompose_chunk(images, basis_name, levels):
    n, c = images.shape[:2]
    return _pack(_forward_pyramid(images, basis_name, levels), levels).reshape(n, -1)


def decompose_images(images, basis="haar", levels=2, n_jobs=1, chunk_size=2048):
    """Coefficient rows for an ``(n, C, H, W)`` image stack.

    Chunks are fixed-size and written to their own row range, so the output
    does not depend on ``n_jobs``.
    """
    images = check_image_batch(images)
    n, c, h, w = images.shape
    lv = effective_levels(h, w, levels)
    name = get_basis(basis).name
    out = np.empty((n, c * h * w))
    starts = range(0, n, chunk_size)
    if n_jobs == 1 or n <= chunk_size:
        for s in starts:
            out[s:s + chunk_size] = _decompose_chunk(images[s:s + chunk_size], name, lv)
    else:
        blocks = Parallel(n_jobs=n_jobs, prefer="threads")(
            delayed(_decompose_chunk)(images[s:s + chunk_size], name, lv) for s in starts
        )
        for s, block in zip(starts, blocks):
            out[s:s + len(block)] = block
    return out, lv


def reconstruct_images(coefficients, image_shape, basis="haar", levels=2):
    """Invert :func:`decompose_images`; ``image_shape`` is ``(C, H, W)``."""
    coefficients = np.asarray(coefficients, dtype=np.float64)
    c, h, w = image_shape
    if coefficients.ndim != 2 or coefficients.shape[1] != c * h * w:
        raise ShapeMismatchError(
            f"coefficient rows of length {coefficients.shape[-1]} do not match {image_shape}")
    lv = effective_levels(h, w, levels)
    layout = _unpack(coefficients.reshape(len(coefficients), c, h * w), h, w, lv)
    return _inverse_pyramid(layout, get_basis(basis).name, lv, h, w)


def decompose_dataset(dataset, basis="haar", levels=2, n_jobs=1):
    """Wavelet coefficient matrix of a :class:`~wavesim.ingest.LabeledDataset`."""
    values, lv = decompose_images(dataset.images, basis, levels, n_jobs=n_jobs)
    return CoefficientMatrix(values, list(dataset.source_ids), get_basis(basis).name, lv,
                             tuple(dataset.images.shape[1:]))


class WaveletTransform(TransformerMixin, BaseEstimator):
    """Transformer from image stacks to wavelet coefficient rows.

    Parameters
    ----------
    basis : {"haar", "db2"}
    levels : int
        Requested depth; fewer levels are applied once a dimension turns odd.
    n_jobs : int
        Worker threads; results are identical for any value.

    Attributes
    ----------
    image_shape_ : tuple
        ``(C, H, W)`` seen during fit.
    levels_ : int
        Effective decomposition depth.
    """

    def __init__(self, basis="haar", levels=2, n_jobs=1):
        self.basis = basis
        self.levels = levels
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        X = check_image_batch(X)
        _, c, h, w = X.shape
        get_basis(self.basis)
        self.image_shape_ = (c, h, w)
        self.levels_ = effective_levels(h, w, self.levels)
        self.n_features_out_ = c * h * w
        return self

    def transform(self, X):
        check_is_fitted(self, "image_shape_")
        X = check_image_batch(X)
        if X.shape[1:] != self.image_shape_:
            raise ShapeMismatchError(f"fitted on {self.image_shape_}, got {X.shape[1:]}")
        return decompose_images(X, self.basis, self.levels, n_jobs=self.n_jobs)[0]

    def inverse_transform(self, W):
        check_is_fitted(self, "image_shape_")
        return reconstruct_images(W, self.image_shape_, self.basis, self.levels)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from conftest import make_dataset
from wavesim.exceptions import ShapeMismatchError
from wavesim.wavelet import (
    BASES,
    CoefficientMatrix,
    WaveletTransform,
    decompose_dataset,
    dwt2_single_channel,
    effective_levels,
    idwt2_single_channel,
    subband_slices,
    _forward_pyramid,
)


@pytest.mark.parametrize("name", ["haar", "db2"])
def test_filters_orthonormal(name):
    basis = BASES[name]
    lo, hi = np.array(basis.lowpass), np.array(basis.highpass)
    assert lo @ lo == pytest.approx(1.0, abs=1e-15)
    assert lo @ hi == pytest.approx(0.0, abs=1e-15)
    assert len(lo) == {"haar": 2, "db2": 4}[name]


def test_haar_2x2_against_transform_matrix():
    # orthonormal 2D Haar on one 2x2 block, rows act on (a, b, c, d)
    H = 0.5 * np.array([
        [1, 1, 1, 1],     # LL
        [1, -1, 1, -1],   # LH: horizontal detail
        [1, 1, -1, -1],   # HL: vertical detail
        [1, -1, -1, 1],   # HH
    ])
    expected = H @ np.array([1.0, 2.0, 3.0, 4.0])
    np.testing.assert_allclose(expected, [5, -1, -2, 0])
    np.testing.assert_allclose(dwt2_single_channel([[1, 2], [3, 4]], "haar", 1), expected,
                               atol=1e-12)


@pytest.mark.parametrize("levels", [1, 2, 3])
def test_constant_image_has_no_detail(levels):
    coeffs = dwt2_single_channel(np.full((16, 16), 0.7), "haar", levels)
    n_ll = (16 >> levels) ** 2
    assert np.all(coeffs[n_ll:] == 0.0)
    db2 = dwt2_single_channel(np.full((16, 16), 0.7), "db2", levels)
    assert np.max(np.abs(db2[n_ll:])) < 1e-14


@pytest.mark.parametrize("basis", ["haar", "db2"])
@pytest.mark.parametrize("size", [4, 28, 32, 64])
@pytest.mark.parametrize("levels", [1, 2, 3])
def test_perfect_reconstruction_and_parseval(basis, size, levels, rng):
    x = rng.random((size, size))
    c = dwt2_single_channel(x, basis, levels)
    assert c.shape == (size * size,)
    assert np.max(np.abs(idwt2_single_channel(c, (size, size), basis, levels) - x)) < 1e-10
    assert abs(c @ c - np.sum(x * x)) / np.sum(x * x) < 1e-9


def test_zero_coefficients_give_zero_plane():
    assert np.all(idwt2_single_channel(np.zeros(64), (8, 8), "db2", 2) == 0.0)


@pytest.mark.parametrize("basis", ["haar", "db2"])
def test_unit_ll_coefficient_round_trips(basis):
    c = np.zeros(256)
    c[0] = 1.0
    patch = idwt2_single_channel(c, (16, 16), basis, 2)
    np.testing.assert_allclose(dwt2_single_channel(patch, basis, 2), c, atol=1e-12)
    if basis == "haar":
        assert np.all(patch >= 0) and np.count_nonzero(patch) == 16


def test_effective_levels():
    assert effective_levels(28, 28, 5) == 2
    assert effective_levels(32, 32, 10) == 5
    assert effective_levels(512, 662, 3) == 1
    with pytest.raises(ShapeMismatchError, match="pad or crop"):
        effective_levels(27, 28, 1)


def test_odd_plane_rejected():
    with pytest.raises(ShapeMismatchError):
        dwt2_single_channel(np.zeros((5, 4)), "haar", 1)


def test_idwt_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        idwt2_single_channel(np.zeros(10), (4, 4))


@pytest.mark.parametrize("basis", ["haar", "db2"])
@pytest.mark.parametrize("levels", [1, 2])
def test_shift_covariance(basis, levels, rng):
    x = rng.random((16, 16))
    shift = 2 ** levels
    a = _forward_pyramid(x, basis, levels)
    b = _forward_pyramid(np.roll(x, shift, axis=1), basis, levels)
    for name, level, rs, cs in subband_slices(16, 16, levels):
        step = shift >> level
        np.testing.assert_allclose(b[rs, cs], np.roll(a[rs, cs], step, axis=1), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from([2, 4, 6, 8, 12]), st.sampled_from([2, 4, 8]), st.integers(1, 3),
       st.sampled_from(["haar", "db2"]), st.integers(0, 2**32 - 1))
def test_coefficient_count_conserved(h, w, levels, basis, seed):
    x = np.random.default_rng(seed).random((h, w))
    c = dwt2_single_channel(x, basis, levels)
    assert c.size == h * w
    assert abs(c @ c - np.sum(x * x)) <= 1e-9 * max(np.sum(x * x), 1e-300)


def test_decompose_dataset_layout(rng):
    images = rng.random((3, 3, 8, 8))
    ds = make_dataset(images, [0, 1, 0])
    cm = decompose_dataset(ds, "db2", 2)
    assert cm.values.shape == (3, 192)
    assert cm.image_ids == ds.source_ids
    for i in range(3):
        for ch in range(3):
            np.testing.assert_array_equal(cm.values[i, ch * 64:(ch + 1) * 64],
                                          dwt2_single_channel(images[i, ch], "db2", 2))


def test_decompose_zero_image():
    ds = make_dataset(np.zeros((1, 1, 28, 28)), [0])
    cm = decompose_dataset(ds, "haar", 2)
    assert cm.values.shape == (1, 784) and not cm.values.any()


def test_decompose_parallel_identical(rng):
    images = rng.random((50, 1, 8, 8))
    from wavesim.wavelet import decompose_images

    a, _ = decompose_images(images, "db2", 2, n_jobs=1, chunk_size=7)
    b, _ = decompose_images(images, "db2", 2, n_jobs=4, chunk_size=7)
    assert a.tobytes() == b.tobytes()


def test_coefficient_matrix_persistence(tmp_path, rng):
    cm = CoefficientMatrix(rng.random((4, 16)), list("abcd"), "haar", 2, (1, 4, 4))
    cm.save(tmp_path / "coeffs")
    raw = np.fromfile(tmp_path / "coeffs.bin", dtype="<f8")
    assert raw.size == 64
    back = CoefficientMatrix.load(tmp_path / "coeffs")
    assert back.values.tobytes() == cm.values.tobytes()
    assert back.image_ids == list("abcd") and back.levels == 2


def test_transformer_round_trip(rng):
    X = rng.random((5, 3, 16, 16))
    wt = WaveletTransform(basis="db2", levels=3).fit(X)
    W = wt.transform(X)
    assert W.shape == (5, 768)
    np.testing.assert_allclose(wt.inverse_transform(W), X, atol=1e-10)
    assert clone(wt).get_params() == {"basis": "db2", "levels": 3, "n_jobs": 1}


def test_transformer_shape_check(rng):
    wt = WaveletTransform().fit(rng.random((2, 1, 8, 8)))
    with pytest.raises(ShapeMismatchError):
        wt.transform(rng.random((2, 1, 16, 16)))

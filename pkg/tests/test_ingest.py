import os

import numpy as np
import pytest
from PIL import Image

from conftest import write_cifar10, write_cifar100, write_idx
from wavesim.exceptions import (
    CorruptRecordError,
    DatasetNotFoundError,
    FormatError,
    InconsistencyError,
    MalformedDatasetError,
    ShapeMismatchError,
)
from wavesim.ingest import (
    load_cifar10,
    load_cifar100,
    load_image_dir,
    load_mnist,
    resize_bilinear,
    to_grayscale,
)


@pytest.fixture
def cifar10_dir(tmp_path, rng):
    pixels = rng.integers(0, 256, (4, 3, 32, 32), dtype=np.uint8)
    write_cifar10(tmp_path / "data_batch_1.bin", [3, 0, 9, 1], pixels)
    write_cifar10(tmp_path / "test_batch.bin", [2], pixels[:1])
    return tmp_path


def test_cifar10_first_pixel_matches_raw_bytes(cifar10_dir):
    ds = load_cifar10(cifar10_dir, ["data_batch_1.bin"])
    raw = (cifar10_dir / "data_batch_1.bin").read_bytes()
    # byte 0 is the label, bytes 1..1024 the red plane
    assert ds.images[0, 0, 0, 0] == raw[1] / 255
    assert ds.images[0, 0, 0, 1] == raw[2] / 255
    assert ds.images[0, 1, 0, 0] == raw[1 + 1024] / 255
    assert ds.images[1, 2, 31, 31] == raw[2 * 3073 - 1] / 255
    assert ds.labels.tolist() == [3, 0, 9, 1]
    assert ds.image_shape == (32, 32, 3)


def test_cifar10_single_record_and_split(cifar10_dir):
    ds = load_cifar10(cifar10_dir, "test")
    assert len(ds) == 1
    assert ds.source_ids == ["test_batch.bin:0"]


def test_cifar10_record_count_arithmetic(cifar10_dir):
    size = os.path.getsize(cifar10_dir / "data_batch_1.bin")
    assert len(load_cifar10(cifar10_dir, ["data_batch_1.bin"])) == size // 3073


def test_cifar10_malformed_size(tmp_path):
    (tmp_path / "bad.bin").write_bytes(b"\x00" * 3074)
    with pytest.raises(MalformedDatasetError, match="bad.bin"):
        load_cifar10(tmp_path, ["bad.bin"])


def test_cifar10_corrupt_label(tmp_path):
    pixels = np.zeros((3, 3, 32, 32), dtype=np.uint8)
    write_cifar10(tmp_path / "x.bin", [1, 2, 10], pixels)
    with pytest.raises(CorruptRecordError, match="record 2"):
        load_cifar10(tmp_path, ["x.bin"])


def test_cifar10_missing_directory(tmp_path):
    with pytest.raises(DatasetNotFoundError):
        load_cifar10(tmp_path / "nope")


def test_cifar100_label_modes(tmp_path, rng):
    fine = np.repeat(np.arange(4), 5)
    coarse = fine % 2
    pixels = rng.integers(0, 256, (20, 3, 32, 32), dtype=np.uint8)
    write_cifar100(tmp_path / "train.bin", fine, coarse, pixels)
    ds = load_cifar100(tmp_path, "fine")
    assert len(ds.class_names) == 100
    assert ds.class_names[1] == "aquarium_fish"
    counts = np.bincount(ds.labels, minlength=100)
    assert counts[:4].tolist() == [5, 5, 5, 5]
    fish = ds.filter_class("aquarium_fish")
    assert len(fish) == 5 and set(fish.labels) == {1}
    assert load_cifar100(tmp_path, "coarse").labels.tolist() == coarse.tolist()


def test_cifar100_empty_file(tmp_path):
    (tmp_path / "train.bin").write_bytes(b"")
    with pytest.raises(MalformedDatasetError):
        load_cifar100(tmp_path)


def test_loading_is_deterministic(cifar10_dir):
    a = load_cifar10(cifar10_dir, ["data_batch_1.bin"])
    b = load_cifar10(cifar10_dir, ["data_batch_1.bin"])
    assert a.images.tobytes() == b.images.tobytes()
    assert a.source_ids == b.source_ids


@pytest.fixture
def mnist_files(tmp_path, rng):
    images = rng.integers(0, 256, (6, 28, 28), dtype=np.uint8)
    labels = np.array([0, 1, 2, 3, 4, 9], dtype=np.uint8)
    write_idx(tmp_path / "img", 0x803, images)
    write_idx(tmp_path / "lab", 0x801, labels)
    return tmp_path / "img", tmp_path / "lab", images


def test_mnist_shape_and_values(mnist_files):
    img, lab, raw = mnist_files
    ds = load_mnist(img, lab)
    assert ds.images.shape == (6, 1, 28, 28)
    assert ds.images[0].size == 784
    np.testing.assert_array_equal(ds.images[:, 0], raw / 255.0)
    assert ds.labels.tolist() == [0, 1, 2, 3, 4, 9]


def test_mnist_gzip(mnist_files, tmp_path):
    import gzip

    img, lab, _ = mnist_files
    gz = tmp_path / "img.gz"
    gz.write_bytes(gzip.compress(img.read_bytes()))
    assert len(load_mnist(gz, lab)) == 6


def test_mnist_swapped_arguments(mnist_files):
    img, lab, _ = mnist_files
    with pytest.raises(FormatError):
        load_mnist(img, img)


def test_mnist_count_mismatch(mnist_files, tmp_path):
    img, _, _ = mnist_files
    write_idx(tmp_path / "lab5", 0x801, np.zeros(5, dtype=np.uint8))
    with pytest.raises(InconsistencyError):
        load_mnist(img, tmp_path / "lab5")


def test_grayscale_examples(rng):
    white = np.ones((3, 4, 4))
    np.testing.assert_allclose(to_grayscale(white), 1.0, rtol=0, atol=1e-15)
    red = np.zeros((3, 4, 4))
    red[0] = 1.0
    np.testing.assert_allclose(to_grayscale(red), 0.299, rtol=0, atol=1e-15)
    gray = np.full((1, 5, 5), 0.3)
    np.testing.assert_array_equal(to_grayscale(gray), gray)


def test_grayscale_matches_per_pixel_oracle(rng):
    img = rng.random((3, 6, 7))
    out = to_grayscale(img)
    for i in range(6):
        for j in range(7):
            expected = 0.299 * img[0, i, j] + 0.587 * img[1, i, j] + 0.114 * img[2, i, j]
            assert out[0, i, j] == pytest.approx(expected, abs=1e-15)


def test_resize_identity(rng):
    img = rng.random((3, 8, 10))
    assert np.max(np.abs(resize_bilinear(img, 8, 10) - img)) == 0.0


def test_resize_checkerboard_matches_bilinear_formula():
    a, b, c, d = 1.0, 0.0, 0.0, 1.0
    img = np.array([[[a, b], [c, d]]])
    out = resize_bilinear(img, 4, 4)
    for i in range(4):
        for j in range(4):
            u, v = i / 3, j / 3
            expected = (1 - u) * (1 - v) * a + (1 - u) * v * b + u * (1 - v) * c + u * v * d
            assert out[0, i, j] == pytest.approx(expected, abs=1e-15)


def _write_png(path, array):
    Image.fromarray(array).save(path)


@pytest.fixture
def image_tree(tmp_path, rng):
    for cls in ("b_bridge", "a_tower"):
        (tmp_path / cls).mkdir()
        for k in range(3):
            _write_png(tmp_path / cls / f"{k}.png",
                       rng.integers(0, 256, (10, 12, 3), dtype=np.uint8))
    return tmp_path


def test_image_dir_ordering_and_resize(image_tree):
    ds = load_image_dir(image_tree, 8, 6)
    assert ds.class_names == ["a_tower", "b_bridge"]
    assert ds.source_ids[:3] == ["a_tower/0.png", "a_tower/1.png", "a_tower/2.png"]
    assert ds.images.shape == (6, 3, 8, 6)
    assert ds.labels.tolist() == [0, 0, 0, 1, 1, 1]
    assert ds.images.min() >= 0 and ds.images.max() <= 1


def test_image_dir_identity_size(image_tree):
    ds = load_image_dir(image_tree, 10, 12)
    raw = np.asarray(Image.open(image_tree / "a_tower" / "0.png"), dtype=np.float64) / 255
    assert np.max(np.abs(ds.images[0] - raw.transpose(2, 0, 1))) == 0.0


def test_image_dir_grayscale_png_converted(tmp_path, rng):
    (tmp_path / "c").mkdir()
    _write_png(tmp_path / "c" / "g.png", rng.integers(0, 256, (8, 8), dtype=np.uint8))
    assert load_image_dir(tmp_path, 8, 8).images.shape == (1, 3, 8, 8)


def test_image_dir_undecodable_file_warns(image_tree):
    (image_tree / "a_tower" / "broken.png").write_bytes(b"not a png")
    ds = load_image_dir(image_tree, 8, 8)
    assert len(ds) == 6
    assert any("broken.png" in w for w in ds.warnings)


def test_image_dir_empty_class(image_tree):
    (image_tree / "c_empty").mkdir()
    with pytest.raises(Exception, match="empty"):
        load_image_dir(image_tree, 8, 8)


def test_image_dir_native_size(image_tree, rng):
    ds = load_image_dir(image_tree)
    assert ds.images.shape == (6, 3, 10, 12)
    _write_png(image_tree / "a_tower" / "z.png", rng.integers(0, 256, (8, 8, 3), dtype=np.uint8))
    with pytest.raises(ShapeMismatchError, match="z.png"):
        load_image_dir(image_tree)

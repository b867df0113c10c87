"""Dataset readers and deterministic preprocessing.

Images are held as float64 arrays in channel-planar layout ``(C, H, W)``
with pixel values ``byte / 255``; a dataset stacks them as ``(n, C, H, W)``.
"""

from __future__ import annotations

import gzip
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import (
    CorruptRecordError,
    DatasetError,
    DatasetNotFoundError,
    FormatError,
    InconsistencyError,
    MalformedDatasetError,
    ShapeMismatchError,
)

logger = logging.getLogger(__name__)

CIFAR10_RECORD = 3073
CIFAR100_RECORD = 3074
MNIST_IMAGES_MAGIC = 0x00000803
MNIST_LABELS_MAGIC = 0x00000801

CIFAR10_CLASSES = [
    "airplane", "automobile", "bird", "cat", "deer",
    "dog", "frog", "horse", "ship", "truck",
]

CIFAR100_FINE_CLASSES = [
    "apple", "aquarium_fish", "baby", "bear", "beaver", "bed", "bee", "beetle",
    "bicycle", "bottle", "bowl", "boy", "bridge", "bus", "butterfly", "camel",
    "can", "castle", "caterpillar", "cattle", "chair", "chimpanzee", "clock",
    "cloud", "cockroach", "couch", "crab", "crocodile", "cup", "dinosaur",
    "dolphin", "elephant", "flatfish", "forest", "fox", "girl", "hamster",
    "house", "kangaroo", "keyboard", "lamp", "lawn_mower", "leopard", "lion",
    "lizard", "lobster", "man", "maple_tree", "motorcycle", "mountain", "mouse",
    "mushroom", "oak_tree", "orange", "orchid", "otter", "palm_tree", "pear",
    "pickup_truck", "pine_tree", "plain", "plate", "poppy", "porcupine",
    "possum", "rabbit", "raccoon", "ray", "road", "rocket", "rose", "sea",
    "seal", "shark", "shrew", "skunk", "skyscraper", "snail", "snake",
    "spider", "squirrel", "streetcar", "sunflower", "sweet_pepper", "table",
    "tank", "telephone", "television", "tiger", "tractor", "train", "trout",
    "tulip", "turtle", "wardrobe", "whale", "willow_tree", "wolf", "woman",
    "worm",
]

CIFAR100_COARSE_CLASSES = [
    "aquatic_mammals", "fish", "flowers", "food_containers",
    "fruit_and_vegetables", "household_electrical_devices",
    "household_furniture", "insects", "large_carnivores",
    "large_man-made_outdoor_things", "large_natural_outdoor_scenes",
    "large_omnivores_and_herbivores", "medium_mammals",
    "non-insect_invertebrates", "people", "reptiles", "small_mammals", "trees",
    "vehicles_1", "vehicles_2",
]

CIFAR10_SPLITS = {
    "train": [f"data_batch_{i}.bin" for i in range(1, 6)],
    "test": ["test_batch.bin"],
}
CIFAR100_SPLITS = {"train": ["train.bin"], "test": ["test.bin"]}
MNIST_SPLITS = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass
class LabeledDataset:
    """Ordered images with integer labels.

    ``images`` has shape ``(n, C, H, W)``; ``source_ids`` are unique stable
    identifiers (file names or ``file:record`` strings).
    """

    images: np.ndarray
    labels: np.ndarray
    class_names: list
    source_ids: list
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.class_names = list(self.class_names)
        self.source_ids = [str(s) for s in self.source_ids]
        self.validate()

    def validate(self):
        if self.images.ndim != 4:
            raise DatasetError(f"images must have shape (n, C, H, W), got {self.images.shape}")
        n = self.images.shape[0]
        if self.images.shape[1] not in (1, 3):
            raise DatasetError(f"channels must be 1 or 3, got {self.images.shape[1]}")
        if self.labels.shape != (n,):
            raise DatasetError(f"{len(self.labels)} labels for {n} images")
        if n and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise DatasetError("label index out of range of class_names")
        if len(self.source_ids) != n or len(set(self.source_ids)) != n:
            raise DatasetError("source_ids must be unique, one per image")
        if n and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise DatasetError("pixel values must lie in [0, 1]")

    def __len__(self):
        return self.images.shape[0]

    @property
    def image_shape(self):
        """``(H, W, C)`` of every image."""
        _, c, h, w = self.images.shape
        return h, w, c

    def subset(self, indices):
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(
            images=self.images[idx],
            labels=self.labels[idx],
            class_names=self.class_names,
            source_ids=[self.source_ids[i] for i in idx],
            warnings=list(self.warnings),
        )

    def filter_class(self, cls):
        """Keep only images of one class, given by index or name."""
        if isinstance(cls, str) and not cls.lstrip("-").isdigit():
            if cls not in self.class_names:
                raise DatasetError(f"unknown class name {cls!r}")
            cls = self.class_names.index(cls)
        cls = int(cls)
        if not 0 <= cls < len(self.class_names):
            raise DatasetError(f"class index {cls} out of range")
        idx = np.flatnonzero(self.labels == cls)
        if idx.size == 0:
            raise DatasetError(f"class {self.class_names[cls]!r} has no images")
        return self.subset(idx)

    def grayscale(self):
        """Copy of the dataset with every image converted to luminance."""
        return LabeledDataset(
            images=to_grayscale(self.images),
            labels=self.labels,
            class_names=self.class_names,
            source_ids=self.source_ids,
            warnings=list(self.warnings),
        )


def _read_bytes(path):
    path = Path(path)
    if not path.exists():
        gz = path.with_name(path.name + ".gz")
        if gz.exists():
            path = gz
        else:
            raise DatasetNotFoundError(f"dataset not found: {path}")
    data = path.read_bytes()
    if data[:2] == b"\x1f\x8b":
        data = gzip.decompress(data)
    return data


def _parse_cifar_records(data, name, record_size, n_label_bytes, max_label):
    if len(data) == 0 or len(data) % record_size:
        raise MalformedDatasetError(
            f"{name}: size {len(data)} is not a positive multiple of {record_size}"
        )
    raw = np.frombuffer(data, dtype=np.uint8).reshape(-1, record_size)
    labels = raw[:, :n_label_bytes].astype(np.int64)
    bad = np.flatnonzero((labels > max_label).any(axis=1))
    if bad.size:
        raise CorruptRecordError(f"{name}: record {int(bad[0])} has an out-of-range label")
    pixels = raw[:, n_label_bytes:].reshape(-1, 3, 32, 32)
    return pixels, labels


def _resolve_files(directory, split, splits):
    directory = Path(directory)
    if not directory.is_dir():
        raise DatasetNotFoundError(f"dataset not found: {directory}")
    if isinstance(split, str):
        if split not in splits:
            raise DatasetError(f"unknown split {split!r}; expected one of {sorted(splits)}")
        return [directory / f for f in splits[split]]
    return [directory / f for f in split]


def load_cifar10(directory_path, split="train"):
    """Read CIFAR-10 binary batches.

    ``split`` is ``"train"``, ``"test"`` or an explicit list of file names
    inside ``directory_path``.
    """
    images, labels, ids = [], [], []
    for path in _resolve_files(directory_path, split, CIFAR10_SPLITS):
        pixels, lab = _parse_cifar_records(_read_bytes(path), path.name, CIFAR10_RECORD, 1, 9)
        images.append(pixels)
        labels.append(lab[:, 0])
        ids.extend(f"{path.name}:{i}" for i in range(len(lab)))
    return LabeledDataset(
        images=np.concatenate(images) / 255.0,
        labels=np.concatenate(labels),
        class_names=_read_names(directory_path, "batches.meta.txt", CIFAR10_CLASSES),
        source_ids=ids,
    )


def load_cifar100(directory_path, label_mode="fine", split="train"):
    """Read CIFAR-100 binary files with coarse or fine labels."""
    if label_mode not in ("coarse", "fine"):
        raise DatasetError(f"label_mode must be 'coarse' or 'fine', got {label_mode!r}")
    column = 0 if label_mode == "coarse" else 1
    images, labels, ids = [], [], []
    for path in _resolve_files(directory_path, split, CIFAR100_SPLITS):
        pixels, lab = _parse_cifar_records(_read_bytes(path), path.name, CIFAR100_RECORD, 2, 99)
        if (lab[:, 0] > 19).any():
            bad = int(np.flatnonzero(lab[:, 0] > 19)[0])
            raise CorruptRecordError(f"{path.name}: record {bad} has coarse label > 19")
        images.append(pixels)
        labels.append(lab[:, column])
        ids.extend(f"{path.name}:{i}" for i in range(len(lab)))
    if label_mode == "fine":
        names = _read_names(directory_path, "fine_label_names.txt", CIFAR100_FINE_CLASSES)
    else:
        names = _read_names(directory_path, "coarse_label_names.txt", CIFAR100_COARSE_CLASSES)
    return LabeledDataset(
        images=np.concatenate(images) / 255.0,
        labels=np.concatenate(labels),
        class_names=names,
        source_ids=ids,
    )


def _read_names(directory, filename, default):
    path = Path(directory) / filename
    if not path.exists():
        return list(default)
    names = [line.strip() for line in path.read_text().splitlines() if line.strip()]
    if len(names) != len(default):
        logger.warning("%s lists %d names, expected %d; using built-in names",
                       path, len(names), len(default))
        return list(default)
    if names != default:
        logger.warning("%s differs from the canonical class list", path)
    return names


def _idx_header(data, name, magic, ndim):
    header = 4 + 4 * ndim
    if len(data) < header:
        raise FormatError(f"{name}: truncated IDX header")
    found = struct.unpack(">I", data[:4])[0]
    if found != magic:
        raise FormatError(f"{name}: magic 0x{found:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(f">{ndim}I", data[4:header])
    expected = header + int(np.prod(dims))
    if len(data) != expected:
        raise MalformedDatasetError(f"{name}: {len(data)} bytes, header implies {expected}")
    return dims, np.frombuffer(data, dtype=np.uint8, offset=header)


def load_mnist(images_path, labels_path):
    """Read an MNIST IDX image file and its label file (optionally gzipped)."""
    images_path, labels_path = Path(images_path), Path(labels_path)
    (n, rows, cols), pixels = _idx_header(
        _read_bytes(images_path), images_path.name, MNIST_IMAGES_MAGIC, 3)
    (n_labels,), labels = _idx_header(
        _read_bytes(labels_path), labels_path.name, MNIST_LABELS_MAGIC, 1)
    if n != n_labels:
        raise InconsistencyError(f"{n} images but {n_labels} labels")
    if n and labels.max() > 9:
        raise CorruptRecordError(f"{labels_path.name}: record {int(np.argmax(labels > 9))} "
                                 "has label > 9")
    return LabeledDataset(
        images=pixels.reshape(n, 1, rows, cols) / 255.0,
        labels=labels,
        class_names=[str(d) for d in range(10)],
        source_ids=[f"{images_path.name}:{i}" for i in range(n)],
    )


def load_mnist_dir(directory_path, split="train"):
    directory = Path(directory_path)
    if not directory.is_dir():
        raise DatasetNotFoundError(f"dataset not found: {directory}")
    if split not in MNIST_SPLITS:
        raise DatasetError(f"unknown split {split!r}")
    img, lab = MNIST_SPLITS[split]
    return load_mnist(directory / img, directory / lab)


def resize_bilinear(image, height, width):
    """Corner-aligned bilinear resize of a ``(C, H, W)`` array.

    Output sample ``(i, j)`` reads the source at
    ``(i * (H - 1) / (height - 1), j * (W - 1) / (width - 1))``.
    """
    image = np.asarray(image, dtype=np.float64)
    _, h, w = image.shape
    if (h, w) == (height, width):
        return image.copy()

    def axis_weights(n_in, n_out):
        if n_out == 1 or n_in == 1:
            pos = np.zeros(n_out)
        else:
            pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
        lo = np.minimum(np.floor(pos).astype(np.int64), n_in - 1)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    r0, r1, fr = axis_weights(h, height)
    c0, c1, fc = axis_weights(w, width)
    rows = image[:, r0, :] * (1 - fr)[:, None] + image[:, r1, :] * fr[:, None]
    return rows[:, :, c0] * (1 - fc) + rows[:, :, c1] * fc


def load_image_dir(root_path, target_height=None, target_width=None):
    """Read a class-per-subdirectory tree of PNG images.

    Classes are indexed in lexicographic directory order. Files that fail to
    decode are skipped with a warning stored on the returned dataset. Without
    a target size every image must share the first image's native size.
    """
    from PIL import Image

    root = Path(root_path)
    if not root.is_dir():
        raise DatasetNotFoundError(f"dataset not found: {root}")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise DatasetError(f"{root}: no class subdirectories")
    images, labels, ids, warnings = [], [], [], []
    for label, class_dir in enumerate(class_dirs):
        files = sorted(p for p in class_dir.iterdir() if p.suffix.lower() == ".png")
        if not files:
            raise DatasetError(f"class directory {class_dir.name!r} is empty")
        loaded = 0
        for path in files:
            rel = path.relative_to(root).as_posix()
            try:
                with Image.open(path) as im:
                    arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
            except (OSError, ValueError) as exc:
                warnings.append(f"skipped {rel}: {exc}")
                continue
            planar = np.transpose(arr, (2, 0, 1))
            if target_height is None:
                if images and planar.shape != images[0].shape:
                    raise ShapeMismatchError(
                        f"{rel} is {planar.shape[1]}x{planar.shape[2]}, expected "
                        f"{images[0].shape[1]}x{images[0].shape[2]}; set an image size to resize")
                images.append(planar)
            else:
                images.append(resize_bilinear(planar, target_height, target_width))
            labels.append(label)
            ids.append(rel)
            loaded += 1
        if loaded == 0:
            raise DatasetError(f"class directory {class_dir.name!r} has no decodable images")
    images = np.clip(np.stack(images), 0.0, 1.0)
    return LabeledDataset(
        images=images,
        labels=labels,
        class_names=[p.name for p in class_dirs],
        source_ids=ids,
        warnings=warnings,
    )


def to_grayscale(image):
    """BT.601 luma of a ``(3, H, W)`` image or ``(n, 3, H, W)`` stack.

    Single-channel input is returned unchanged (as a copy).
    """
    image = np.asarray(image, dtype=np.float64)
    axis = image.ndim - 3
    if image.shape[axis] == 1:
        return image.copy()
    if image.shape[axis] != 3:
        raise DatasetError(f"expected 1 or 3 channels, got {image.shape[axis]}")
    r, g, b = np.moveaxis(image, axis, 0)
    y = LUMA_WEIGHTS[0] * r + LUMA_WEIGHTS[1] * g + LUMA_WEIGHTS[2] * b
    return np.clip(np.expand_dims(y, axis), 0.0, 1.0)


def load_dataset(fmt, path, split="train", label_mode="fine", image_size=None):
    """Dispatch on format name: cifar10, cifar100, mnist or image_dir."""
    if fmt == "cifar10":
        return load_cifar10(path, split)
    if fmt == "cifar100":
        return load_cifar100(path, label_mode, split)
    if fmt == "mnist":
        return load_mnist_dir(path, split)
    if fmt == "image_dir":
        return load_image_dir(path, *(image_size or (None, None)))
    raise DatasetError(f"unknown dataset format {fmt!r}")


def data_dir_from_env(name):
    """Directory named by environment variable ``name``, if it exists."""
    value = os.environ.get(name)
    if value and Path(value).is_dir():
        return Path(value)
    return None

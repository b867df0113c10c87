import struct

import numpy as np
import pytest

from wavesim.ingest import LabeledDataset

ACCEPTANCE_RESULTS = []


def record_criterion(number, name, status, detail=""):
    ACCEPTANCE_RESULTS.append((number, name, status, detail))


N_CRITERIA = 10


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    seen = {r[0] for r in ACCEPTANCE_RESULTS}
    rows = list(ACCEPTANCE_RESULTS)
    rows += [(n, "not collected", "NOT RUN", "deselected (slow criteria need -m slow)")
             for n in range(1, N_CRITERIA + 1) if n not in seen]
    for number, name, status, detail in sorted(rows, key=lambda r: (r[0], r[1])):
        line = f"[{status}] {number}. {name}"
        if detail:
            line += f" -- {detail}"
        terminalreporter.write_line(line)


def smooth_images(rng, n, channels=3, size=32, blobs=4):
    """Random images built from a few Gaussian blobs, values in [0, 1]."""
    yy, xx = np.mgrid[0:size, 0:size]
    out = np.empty((n, channels, size, size))
    for i in range(n):
        for c in range(channels):
            img = np.full((size, size), rng.uniform(0.1, 0.4))
            for _ in range(blobs):
                cy, cx = rng.uniform(0, size, 2)
                s = rng.uniform(2, size / 3)
                img += rng.uniform(-0.4, 0.6) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
            out[i, c] = img
    return np.clip(out, 0.0, 1.0)


def make_dataset(images, labels, n_classes=None, prefix="img"):
    labels = np.asarray(labels)
    n_classes = n_classes or int(labels.max()) + 1
    return LabeledDataset(images, labels, [f"c{k}" for k in range(n_classes)],
                          [f"{prefix}{i}" for i in range(len(images))])


def planted_dataset(rng, n_distinct=10, n_dups=3, n_classes=3, size=16, channels=3):
    """Distinct random images plus exact copies; returns dataset and duplicate pairs."""
    base = smooth_images(rng, n_distinct, channels, size)
    labels = rng.integers(0, n_classes, n_distinct)
    src = rng.choice(n_distinct, n_dups, replace=False)
    images = np.concatenate([base, base[src]])
    labels = np.concatenate([labels, labels[src]])
    pairs = [(int(s), n_distinct + k) for k, s in enumerate(src)]
    return make_dataset(images, labels, n_classes), pairs


def write_cifar100(path, fine, coarse, pixels):
    """Write records in the CIFAR-100 binary layout; pixels uint8 (n, 3, 32, 32)."""
    with open(path, "wb") as fh:
        for c, f, p in zip(coarse, fine, pixels):
            fh.write(bytes([c, f]) + np.asarray(p, dtype=np.uint8).tobytes())


def write_cifar10(path, labels, pixels):
    with open(path, "wb") as fh:
        for lab, p in zip(labels, pixels):
            fh.write(bytes([lab]) + np.asarray(p, dtype=np.uint8).tobytes())


def write_idx(path, magic, array):
    array = np.asarray(array, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(f">{array.ndim}I", *array.shape))
        fh.write(array.tobytes())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def cifar100_dir(tmp_path):
    """Small CIFAR-100-format directory: 3 fine classes, planted duplicates."""
    rng = np.random.default_rng(7)
    n_train, n_test = 30, 9
    imgs = (smooth_images(rng, n_train + n_test) * 255).round().astype(np.uint8)
    imgs[3] = imgs[0]
    imgs[n_train] = imgs[5]
    fine = np.arange(n_train + n_test) % 3
    fine[3] = fine[0]
    fine[n_train] = fine[5]
    coarse = fine // 2
    d = tmp_path / "cifar-100-binary"
    d.mkdir()
    write_cifar100(d / "train.bin", fine[:n_train], coarse[:n_train], imgs[:n_train])
    write_cifar100(d / "test.bin", fine[n_train:], coarse[n_train:], imgs[n_train:])
    return d

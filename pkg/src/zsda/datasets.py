"""IDX-format dataset ingestion (MNIST-style file layout).

Data roots look like <root>/<dataset>/<idx files>; files may be gzipped.
Unknown dataset directories are supported through a dataset.json sidecar
declaring class count and label offset.
"""

import gzip
import json
import os
import struct

import numpy as np

from .domains import ImageSample
from .errors import DataFormatError, DataLoadError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

_MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}

# name -> (file map, class count, label offset subtracted at load)
REGISTRY = {
    "mnist": (_MNIST_FILES, 10, 0),
    "fashion-mnist": (_MNIST_FILES, 10, 0),
    "nist": (_MNIST_FILES, 52, 0),
    "emnist-letters": (
        {
            "train": ("emnist-letters-train-images-idx3-ubyte", "emnist-letters-train-labels-idx1-ubyte"),
            "test": ("emnist-letters-test-images-idx3-ubyte", "emnist-letters-test-labels-idx1-ubyte"),
        },
        26,
        1,  # letters ship with labels 1..26
    ),
}


def _read_file(path):
    candidates = [path, path + ".gz"]
    for cand in candidates:
        if os.path.exists(cand):
            with open(cand, "rb") as fh:
                head = fh.read(2)
            opener = gzip.open if head == b"\x1f\x8b" else open
            with opener(cand, "rb") as fh:
                return fh.read()
    raise DataLoadError(f"dataset file not found: {path} (also tried .gz)")


def read_idx_images(path):
    blob = _read_file(path)
    if len(blob) < 16:
        raise DataFormatError(f"{path}: too short for an IDX image header")
    magic, n, rows, cols = struct.unpack_from(">IIII", blob, 0)
    if magic != IDX_IMAGES_MAGIC:
        raise DataFormatError(f"{path}: bad magic 0x{magic:08x}, expected IDX images")
    expected = 16 + n * rows * cols
    if len(blob) != expected:
        raise DataFormatError(f"{path}: payload is {len(blob)} bytes, header implies {expected}")
    return np.frombuffer(blob, dtype=np.uint8, offset=16).reshape(n, rows, cols).copy()


def read_idx_labels(path):
    blob = _read_file(path)
    if len(blob) < 8:
        raise DataFormatError(f"{path}: too short for an IDX label header")
    magic, n = struct.unpack_from(">II", blob, 0)
    if magic != IDX_LABELS_MAGIC:
        raise DataFormatError(f"{path}: bad magic 0x{magic:08x}, expected IDX labels")
    if len(blob) != 8 + n:
        raise DataFormatError(f"{path}: payload is {len(blob)} bytes, header implies {8 + n}")
    return np.frombuffer(blob, dtype=np.uint8, offset=8).copy()


def write_idx(out_dir, split, images, labels):
    """Materialize (N,H,W) uint8 images + labels as standard IDX files."""
    os.makedirs(out_dir, exist_ok=True)
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    img_name, lbl_name = _MNIST_FILES[split]
    with open(os.path.join(out_dir, img_name), "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, images.shape[0], images.shape[1], images.shape[2]))
        fh.write(images.tobytes())
    with open(os.path.join(out_dir, lbl_name), "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())


def _dataset_entry(name, root):
    if name in REGISTRY:
        return REGISTRY[name]
    sidecar = os.path.join(root, name, "dataset.json")
    if os.path.exists(sidecar):
        with open(sidecar) as fh:
            meta = json.load(fh)
        files = meta.get("files", _MNIST_FILES)
        files = {k: tuple(v) for k, v in files.items()} if files is not _MNIST_FILES else files
        return files, int(meta["classes"]), int(meta.get("label_offset", 0))
    raise DataLoadError(
        f"unknown dataset {name!r}: not in the built-in registry and no dataset.json under {os.path.join(root, name)}"
    )


def dataset_classes(name, root):
    return _dataset_entry(name, root)[1]


def load_dataset(name, split, root):
    """Load all samples of one split; ordering follows the file order."""
    if split not in ("train", "test"):
        raise DataLoadError(f"split must be 'train' or 'test', got {split!r}")
    files, classes, offset = _dataset_entry(name, root)
    img_file, lbl_file = files[split]
    ddir = os.path.join(root, name)
    images = read_idx_images(os.path.join(ddir, img_file))
    labels = read_idx_labels(os.path.join(ddir, lbl_file))
    if images.shape[0] != labels.shape[0]:
        raise DataFormatError(
            f"{name}/{split}: {images.shape[0]} images but {labels.shape[0]} labels"
        )
    labels = labels.astype(np.int64) - offset
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        bad = int(labels.min() if labels.min() < 0 else labels.max())
        raise DataFormatError(f"{name}/{split}: label {bad + offset} outside declared range of {classes} classes")
    return [
        ImageSample(pixels=images[i][:, :, None], label=int(labels[i]), base_id=f"{name}-{split}-{i:05d}")
        for i in range(images.shape[0])
    ]

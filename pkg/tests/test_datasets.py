import gzip
import os

import numpy as np
import pytest

from zsda.datasets import load_dataset, read_idx_images, write_idx
from zsda.errors import DataFormatError, DataLoadError
from zsda.toydata import install_glyph_dataset, render_glyph_dataset


def make_toy_idx(root, name="mnist", n_train=30, n_test=10, classes=10, seed=0):
    rng = np.random.default_rng(seed)
    d = os.path.join(root, name)
    write_idx(d, "train", rng.integers(0, 256, (n_train, 28, 28)).astype(np.uint8),
              rng.integers(0, classes, n_train).astype(np.uint8))
    write_idx(d, "test", rng.integers(0, 256, (n_test, 28, 28)).astype(np.uint8),
              rng.integers(0, classes, n_test).astype(np.uint8))
    return d


def test_roundtrip_counts_and_determinism(tmp_path):
    make_toy_idx(tmp_path)
    a = load_dataset("mnist", "train", tmp_path)
    b = load_dataset("mnist", "train", tmp_path)
    assert len(a) == 30
    assert all(s.pixels.shape == (28, 28, 1) for s in a)
    assert [s.base_id for s in a] == [s.base_id for s in b]
    for sa, sb in zip(a, b):
        np.testing.assert_array_equal(sa.pixels, sb.pixels)


def test_missing_root_is_load_error(tmp_path):
    # empty root: the error names the missing file
    with pytest.raises(DataLoadError, match="t10k-images-idx3-ubyte"):
        load_dataset("mnist", "test", tmp_path)


def test_missing_file_named(tmp_path):
    with pytest.raises(DataLoadError) as err:
        load_dataset("mnist", "train", tmp_path)
    assert "train-images-idx3-ubyte" in str(err.value)


def test_corrupt_magic_is_format_error(tmp_path):
    d = make_toy_idx(tmp_path)
    path = os.path.join(d, "train-images-idx3-ubyte")
    blob = bytearray(open(path, "rb").read())
    blob[3] = 0x99
    open(path, "wb").write(bytes(blob))
    with pytest.raises(DataFormatError, match="bad magic"):
        load_dataset("mnist", "train", tmp_path)


def test_truncated_payload_is_format_error(tmp_path):
    d = make_toy_idx(tmp_path)
    path = os.path.join(d, "train-images-idx3-ubyte")
    blob = open(path, "rb").read()
    open(path, "wb").write(blob[:-5])
    with pytest.raises(DataFormatError):
        load_dataset("mnist", "train", tmp_path)


def test_label_out_of_range_is_format_error(tmp_path):
    d = make_toy_idx(tmp_path)
    path = os.path.join(d, "train-labels-idx1-ubyte")
    blob = bytearray(open(path, "rb").read())
    blob[8] = 200  # mnist declares 10 classes
    open(path, "wb").write(bytes(blob))
    with pytest.raises(DataFormatError, match="label"):
        load_dataset("mnist", "train", tmp_path)


def test_gzipped_files_supported(tmp_path):
    d = make_toy_idx(tmp_path)
    for fname in os.listdir(d):
        full = os.path.join(d, fname)
        with open(full, "rb") as fh:
            data = fh.read()
        with gzip.open(full + ".gz", "wb") as gz:
            gz.write(data)
        os.remove(full)
    assert len(load_dataset("mnist", "train", tmp_path)) == 30


def test_emnist_letters_label_offset(tmp_path):
    rng = np.random.default_rng(1)
    d = os.path.join(tmp_path, "emnist-letters")
    os.makedirs(d)
    imgs = rng.integers(0, 256, (20, 28, 28)).astype(np.uint8)
    labels = rng.integers(1, 27, 20).astype(np.uint8)  # letters ship 1-based
    import struct
    with open(os.path.join(d, "emnist-letters-train-images-idx3-ubyte"), "wb") as fh:
        fh.write(struct.pack(">IIII", 0x803, 20, 28, 28))
        fh.write(imgs.tobytes())
    with open(os.path.join(d, "emnist-letters-train-labels-idx1-ubyte"), "wb") as fh:
        fh.write(struct.pack(">II", 0x801, 20))
        fh.write(labels.tobytes())
    samples = load_dataset("emnist-letters", "train", tmp_path)
    assert all(0 <= s.label < 26 for s in samples)


def test_unknown_dataset_needs_sidecar(tmp_path):
    with pytest.raises(DataLoadError, match="dataset.json"):
        load_dataset("mystery", "train", tmp_path)


def test_glyph_dataset_installs_and_loads(tmp_path):
    install_glyph_dataset(tmp_path, "letters-render", "letters", n_train=40, n_test=10, seed=3)
    train = load_dataset("letters-render", "train", tmp_path)
    test = load_dataset("letters-render", "test", tmp_path)
    assert len(train) == 40 and len(test) == 10
    assert all(0 <= s.label < 26 for s in train)
    # glyphs must actually contain ink
    assert all((s.pixels > 0).sum() > 10 for s in train)


def test_glyph_rendering_deterministic():
    a, la = render_glyph_dataset("digits", 12, seed=5)
    b, lb = render_glyph_dataset("digits", 12, seed=5)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(la, lb)


@pytest.mark.skipif(
    not os.environ.get("ZSDA_DATA_ROOT") or not os.path.exists(
        os.path.join(os.environ.get("ZSDA_DATA_ROOT", ""), "mnist", "train-images-idx3-ubyte")),
    reason="full MNIST IDX files not present under ZSDA_DATA_ROOT",
)
def test_full_mnist_split_sizes():
    root = os.environ["ZSDA_DATA_ROOT"]
    assert len(load_dataset("mnist", "train", root)) == 60000
    assert len(load_dataset("mnist", "test", root)) == 10000

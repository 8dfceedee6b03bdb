"""Offline dataset fabrication for desk-scale experiments.

Renders digit/letter glyph datasets (DejaVu fonts with random affine
jitter) into standard IDX layout, and can install a real MNIST subset when
the optional mlxtend package (which bundles 5000 MNIST digits) is present.
"""

import glob
import json
import os
import string

import numpy as np
from PIL import Image, ImageDraw, ImageFilter, ImageFont

from .datasets import write_idx
from .errors import DataLoadError
from .rngutil import make_rng

_FONT_DIRS = ["/usr/share/fonts/truetype/dejavu"]


def _font_files():
    found = []
    for d in _FONT_DIRS:
        found.extend(sorted(glob.glob(os.path.join(d, "*.ttf"))))
    if not found:
        try:
            import matplotlib
            found = sorted(glob.glob(os.path.join(
                os.path.dirname(matplotlib.__file__), "mpl-data/fonts/ttf/DejaVu*.ttf")))
        except ImportError:
            pass
    return found


_FONT_CACHE = {}


def _font(path, size):
    key = (path, size)
    if key not in _FONT_CACHE:
        _FONT_CACHE[key] = (ImageFont.truetype(path, size) if path
                            else ImageFont.load_default(size))
    return _FONT_CACHE[key]


def render_glyph(char, font_path, size_px, angle, dx, dy, blur):
    im = Image.new("L", (28, 28), 0)
    draw = ImageDraw.Draw(im)
    draw.text((14 + dx, 14 + dy), char, fill=255, font=_font(font_path, size_px), anchor="mm")
    if angle:
        im = im.rotate(angle, resample=Image.BILINEAR, center=(14, 14), fillcolor=0)
    if blur > 0:
        im = im.filter(ImageFilter.GaussianBlur(blur))
    return np.asarray(im, dtype=np.uint8)


def render_glyph_dataset(kind, n, seed):
    """(n, 28, 28) uint8 images + labels for a synthetic digits/letters task."""
    if kind == "digits":
        charsets = [string.digits]
    elif kind == "letters":
        charsets = [string.ascii_uppercase, string.ascii_lowercase]
    else:
        raise ValueError(f"unknown glyph dataset kind {kind!r}")
    fonts = _font_files() or [None]
    rng = make_rng("glyphs", kind, seed)
    images = np.empty((n, 28, 28), dtype=np.uint8)
    labels = np.empty(n, dtype=np.int64)
    n_classes = len(charsets[0])
    for i in range(n):
        label = int(rng.integers(n_classes))
        chars = charsets[int(rng.integers(len(charsets)))]
        img = render_glyph(
            chars[label],
            fonts[int(rng.integers(len(fonts)))],
            size_px=int(rng.integers(16, 25)),
            angle=float(rng.uniform(-20, 20)),
            dx=float(rng.uniform(-2.5, 2.5)),
            dy=float(rng.uniform(-2.5, 2.5)),
            blur=float(rng.choice([0.0, 0.4, 0.7])),
        )
        images[i] = img
        labels[i] = label
    return images, labels


def install_glyph_dataset(root, name, kind, n_train, n_test, seed):
    """Materialize a glyph dataset in IDX layout under <root>/<name>/."""
    out = os.path.join(root, name)
    images, labels = render_glyph_dataset(kind, n_train + n_test, seed)
    write_idx(out, "train", images[:n_train], labels[:n_train])
    write_idx(out, "test", images[n_train:], labels[n_train:])
    classes = 10 if kind == "digits" else 26
    with open(os.path.join(out, "dataset.json"), "w") as fh:
        json.dump({"classes": classes, "label_offset": 0, "kind": kind, "seed": seed}, fh)
    return out


def install_mnist_subset(root, n_train, n_test, seed):
    """Install a stratified subset of real MNIST digits (via the bundled
    copy inside mlxtend) in IDX layout under <root>/mnist/."""
    try:
        from mlxtend.data import mnist_data
    except ImportError as exc:
        raise DataLoadError(
            "real MNIST unavailable: install mlxtend (bundles a 5000-sample subset) "
            "or place MNIST IDX files under the data root"
        ) from exc
    x, y = mnist_data()
    x = x.reshape(-1, 28, 28).astype(np.uint8)
    y = y.astype(np.int64)
    per_class_train = n_train // 10
    per_class_test = n_test // 10
    rng = make_rng("mnist-subset", seed)
    tr_idx, te_idx = [], []
    for c in range(10):
        idx = np.flatnonzero(y == c)
        idx = idx[rng.permutation(len(idx))]
        if len(idx) < per_class_train + per_class_test:
            raise DataLoadError(f"not enough class-{c} samples for the requested subset")
        tr_idx.extend(idx[:per_class_train])
        te_idx.extend(idx[per_class_train:per_class_train + per_class_test])
    tr_idx = np.array(sorted(tr_idx))
    te_idx = np.array(sorted(te_idx))
    out = os.path.join(root, "mnist")
    write_idx(out, "train", x[tr_idx], y[tr_idx])
    write_idx(out, "test", x[te_idx], y[te_idx])
    return out

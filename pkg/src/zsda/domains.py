"""Synthetic image domains: gray, colored, edge, and negative views.

A DomainView is a deterministic rendering of a base grayscale dataset into
one domain, with a pairing manifest back to the base images. Pairing is
bookkeeping only; training code never consumes correspondences across
domains for the task of interest.
"""

import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import ConfigError, DataFormatError, ZsdaError
from .rngutil import make_rng

IMAGE_SIZE = 28

DOMAIN_KINDS = ("gray", "color", "edge", "negative")

DEFAULT_CANNY = {"low": 50.0, "high": 150.0, "sigma": 1.0}


@dataclass
class ImageSample:
    """One image: (H, W, C) uint8 pixels in [0,255] plus label and identity."""

    pixels: np.ndarray
    label: int
    base_id: str


@dataclass
class DomainSpec:
    """Which domain to render and with what transform parameters."""

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in DOMAIN_KINDS:
            raise ConfigError(f"unknown domain kind {self.kind!r}, expected one of {DOMAIN_KINDS}")

    @property
    def channels(self):
        return 3 if self.kind == "color" else 1

    def canonical(self):
        """Deterministic serialization (sorted keys) for hashing/manifests."""
        items = ",".join(f"{k}={self.params[k]!r}" for k in sorted(self.params))
        return f"{self.kind}({items})"


@dataclass
class DomainView:
    domain: DomainSpec
    samples: list
    pairing: dict  # base_id -> sample index
    seed: int

    def __len__(self):
        return len(self.samples)

    @property
    def channels(self):
        return self.domain.channels

    def base_ids(self):
        return set(self.pairing)


@dataclass
class TaskSplit:
    toi_classes: frozenset
    irt_classes: frozenset


def transform_negative(img: ImageSample) -> ImageSample:
    if img.pixels.shape[2] != 1:
        raise ZsdaError(f"negative transform needs a single-channel image, got {img.pixels.shape[2]} channels")
    return ImageSample(pixels=(255 - img.pixels).astype(np.uint8), label=img.label, base_id=img.base_id)


def canny_edges(gray, low, high, sigma):
    """Canny on a (H,W) uint8 array -> binary uint8 {0,255} edge map.

    Steps: gaussian smoothing (skipped for sigma=0), sobel gradients with
    'nearest' border handling, 4-sector non-maximum suppression (plateau
    ties broken toward the negative gradient side so step edges stay one
    pixel thin), then hysteresis by binary propagation from strong pixels
    through weak ones with 8-connectivity. Thresholds apply to the raw
    sobel magnitude on the 0..255 intensity scale.
    """
    x = gray.astype(np.float64)
    if sigma > 0:
        x = ndimage.gaussian_filter(x, sigma, mode="nearest")
    gx = ndimage.sobel(x, axis=1, mode="nearest")
    gy = ndimage.sobel(x, axis=0, mode="nearest")
    mag = np.hypot(gx, gy)

    # sector index: 0 = E/W, 1 = NE/SW, 2 = N/S, 3 = NW/SE
    angle = np.mod(np.degrees(np.arctan2(gy, gx)), 180.0)
    sector = np.zeros(angle.shape, dtype=np.int8)
    sector[(angle >= 22.5) & (angle < 67.5)] = 1
    sector[(angle >= 67.5) & (angle < 112.5)] = 2
    sector[(angle >= 112.5) & (angle < 157.5)] = 3

    padded = np.pad(mag, 1, mode="constant")
    offsets = {0: (0, 1), 1: (1, 1), 2: (1, 0), 3: (1, -1)}
    keep = np.zeros(mag.shape, dtype=bool)
    for s, (dy, dx) in offsets.items():
        fwd = padded[1 + dy:1 + dy + mag.shape[0], 1 + dx:1 + dx + mag.shape[1]]
        bwd = padded[1 - dy:1 - dy + mag.shape[0], 1 - dx:1 - dx + mag.shape[1]]
        keep |= (sector == s) & (mag >= fwd) & (mag > bwd)

    nms = np.where(keep, mag, 0.0)
    strong = nms >= high
    weak = nms >= low
    edges = ndimage.binary_propagation(strong, structure=np.ones((3, 3), dtype=bool), mask=weak)
    return (edges * 255).astype(np.uint8)


def transform_edge(img: ImageSample, low=None, high=None, sigma=None) -> ImageSample:
    if img.pixels.shape[2] != 1:
        raise ZsdaError("edge transform needs a single-channel image")
    low = DEFAULT_CANNY["low"] if low is None else low
    high = DEFAULT_CANNY["high"] if high is None else high
    sigma = DEFAULT_CANNY["sigma"] if sigma is None else sigma
    if not (0 <= low <= high <= 255 * 8):
        raise ZsdaError(f"invalid canny thresholds low={low} high={high}")
    out = canny_edges(img.pixels[:, :, 0], low, high, sigma)
    return ImageSample(pixels=out[:, :, None], label=img.label, base_id=img.base_id)


def transform_color(img: ImageSample, patch: np.ndarray) -> ImageSample:
    """Blend with a color patch: per channel o = |patch - img|."""
    if img.pixels.shape[2] != 1:
        raise ZsdaError("color transform needs a single-channel image")
    if patch.shape != img.pixels.shape[:2] + (3,):
        raise ZsdaError(f"patch shape {patch.shape} does not match image {img.pixels.shape[:2] + (3,)}")
    diff = np.abs(patch.astype(np.int16) - img.pixels.astype(np.int16))
    return ImageSample(pixels=diff.astype(np.uint8), label=img.label, base_id=img.base_id)


class PatchSource:
    """Seeded 28x28x3 color-patch sampler; patch(i) is a pure function of
    (mode, seed, i), so patch sequences replay and parallelize trivially."""

    def __init__(self, mode, seed, directory=None, size=IMAGE_SIZE):
        if mode not in ("procedural", "directory_of_images"):
            raise ConfigError(f"unknown patch source mode {mode!r}")
        self.mode = mode
        self.seed = seed
        self.size = size
        self._cache = {}
        if mode == "directory_of_images":
            if directory is None:
                raise ConfigError("directory_of_images patch source needs a directory")
            exts = (".png", ".jpg", ".jpeg", ".bmp", ".ppm", ".tif", ".tiff")
            self.files = sorted(
                os.path.join(directory, f) for f in os.listdir(directory)
                if f.lower().endswith(exts)
            ) if os.path.isdir(directory) else []
            if not self.files:
                raise ConfigError(f"patch directory {directory!r} contains no readable images")

    def patch(self, index):
        rng = make_rng("patch", self.mode, self.seed, index)
        if self.mode == "procedural":
            return self._procedural(rng)
        return self._crop(rng)

    def _procedural(self, rng):
        # low-frequency value noise: coarse random color grid, bilinear upsample
        coarse = rng.uniform(0.0, 255.0, size=(4, 4, 3))
        zoomed = ndimage.zoom(coarse, (self.size / 4, self.size / 4, 1), order=1)
        return np.clip(np.round(zoomed), 0, 255).astype(np.uint8)

    def _crop(self, rng):
        path = self.files[int(rng.integers(len(self.files)))]
        arr = self._cache.get(path)
        if arr is None:
            with Image.open(path) as im:
                im = im.convert("RGB")
                if min(im.size) < self.size:
                    scale = self.size / min(im.size)
                    im = im.resize((max(self.size, round(im.width * scale)),
                                    max(self.size, round(im.height * scale))), Image.BILINEAR)
                arr = np.asarray(im, dtype=np.uint8)
            self._cache[path] = arr
        y = int(rng.integers(arr.shape[0] - self.size + 1))
        x = int(rng.integers(arr.shape[1] - self.size + 1))
        return arr[y:y + self.size, x:x + self.size].copy()


def make_patch_source(mode, seed, directory=None):
    return PatchSource(mode, seed, directory=directory)


def standardize_base(pixels):
    """Bring any grayscale base image to (28, 28, 1) uint8."""
    if pixels.ndim == 2:
        pixels = pixels[:, :, None]
    if pixels.shape[2] != 1:
        raise DataFormatError(f"base images must be single-channel, got shape {pixels.shape}")
    h, w = pixels.shape[:2]
    if (h, w) == (IMAGE_SIZE, IMAGE_SIZE):
        return pixels.astype(np.uint8)
    scale = IMAGE_SIZE / max(h, w)
    resized = ndimage.zoom(pixels[:, :, 0].astype(np.float64), scale, order=1)
    resized = np.clip(np.round(resized), 0, 255).astype(np.uint8)
    out = np.zeros((IMAGE_SIZE, IMAGE_SIZE), dtype=np.uint8)
    oy = (IMAGE_SIZE - resized.shape[0]) // 2
    ox = (IMAGE_SIZE - resized.shape[1]) // 2
    out[oy:oy + resized.shape[0], ox:ox + resized.shape[1]] = resized
    return out[:, :, None]


def _transform_one(sample, spec, seed, index, patch_source):
    base = ImageSample(pixels=standardize_base(sample.pixels), label=sample.label, base_id=sample.base_id)
    if spec.kind == "gray":
        return base
    if spec.kind == "negative":
        return transform_negative(base)
    if spec.kind == "edge":
        return transform_edge(base, low=spec.params.get("low"), high=spec.params.get("high"),
                              sigma=spec.params.get("sigma"))
    if spec.kind == "color":
        patch = patch_source.patch((seed, index))
        return transform_color(base, patch)
    raise ConfigError(f"unhandled domain kind {spec.kind!r}")


def _patch_source_for(spec):
    if spec.kind != "color":
        return None
    return make_patch_source(spec.params.get("patch_mode", "procedural"),
                             spec.params.get("patch_seed", 0),
                             directory=spec.params.get("patch_dir"))


def make_domain_view(base, spec: DomainSpec, seed: int) -> DomainView:
    """Render every base sample into the domain; deterministic in (base, spec, seed)."""
    base = list(base)
    if not base:
        raise ZsdaError("cannot build a domain view from an empty base set")
    patch_source = _patch_source_for(spec)
    samples, pairing = [], {}
    for i, s in enumerate(base):
        try:
            out = _transform_one(s, spec, seed, i, patch_source)
        except ZsdaError as exc:
            raise ZsdaError(f"sample {i} ({s.base_id}): {exc}") from exc
        if s.base_id in pairing:
            raise DataFormatError(f"duplicate base_id {s.base_id!r} in base set")
        pairing[s.base_id] = i
        samples.append(out)
    return DomainView(domain=spec, samples=samples, pairing=pairing, seed=seed)


def split_categories(samples, toi_classes):
    """Partition a labeled set into (ToI, IrT) by class; both relabeled densely."""
    labels = sorted({s.label for s in samples})
    toi_classes = frozenset(toi_classes)
    if not toi_classes or not toi_classes < set(labels):
        raise ZsdaError(f"toi_classes must be a non-empty proper subset of {labels}")
    irt_classes = frozenset(labels) - toi_classes
    toi_map = {c: i for i, c in enumerate(sorted(toi_classes))}
    irt_map = {c: i for i, c in enumerate(sorted(irt_classes))}
    toi, irt = [], []
    for s in samples:
        if s.label in toi_map:
            toi.append(ImageSample(pixels=s.pixels, label=toi_map[s.label], base_id=s.base_id))
        else:
            irt.append(ImageSample(pixels=s.pixels, label=irt_map[s.label], base_id=s.base_id))
    return toi, irt


def to_array(samples_or_view, dtype=np.float32):
    """Stack samples into (N, H, W, C) float in [-1, 1] plus int64 labels."""
    samples = samples_or_view.samples if isinstance(samples_or_view, DomainView) else list(samples_or_view)
    x = np.stack([s.pixels for s in samples]).astype(dtype)
    x /= 127.5
    x -= 1.0
    y = np.array([s.label for s in samples], dtype=np.int64)
    return x, y


def batch_iter(view, batch_size, seed, epoch):
    """Yield (x, labels) minibatches, reshuffled per (seed, epoch); the final
    short batch is emitted. Pixels rescaled to [-1, 1]."""
    if batch_size < 1:
        raise ZsdaError("batch_size must be >= 1")
    n = len(view.samples) if isinstance(view, DomainView) else len(view)
    if n == 0:
        return
    order = make_rng("batch", seed, epoch).permutation(n)
    samples = view.samples if isinstance(view, DomainView) else view
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        yield to_array([samples[i] for i in idx])


def endless_batches(view, batch_size, seed):
    """Infinite batch stream cycling epochs 0,1,2,... deterministically."""
    epoch = 0
    while True:
        yield from batch_iter(view, batch_size, seed, epoch)
        epoch += 1


def materialize_view(view, out_dir, config_hash=""):
    """Write images/<base_id>.png plus manifest.tsv for a view."""
    img_dir = os.path.join(out_dir, "images")
    os.makedirs(img_dir, exist_ok=True)
    lines = [f"# config\t{config_hash}", "base_id\tlabel\tdomain\tseed"]
    for base_id, idx in sorted(view.pairing.items()):
        s = view.samples[idx]
        arr = s.pixels[:, :, 0] if s.pixels.shape[2] == 1 else s.pixels
        Image.fromarray(arr).save(os.path.join(img_dir, f"{base_id}.png"))
        lines.append(f"{base_id}\t{s.label}\t{view.domain.kind}\t{view.seed}")
    with open(os.path.join(out_dir, "manifest.tsv"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return os.path.join(out_dir, "manifest.tsv")

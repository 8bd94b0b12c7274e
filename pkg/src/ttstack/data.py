"""Grayscale corpus ingestion, stratified splitting, balancing and batching.

Images are 8-bit single channel. Everything random draws from named
substreams of one seed, so a run is a pure function of corpus bytes,
config and seed.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from ._flatfile import read_flat
from ._rng import substream
from .errors import ConfigError, CorpusError

NON_CANCER, CANCER = 0, 1
DEFAULT_POSITIVE_CLASS = "Cancer"


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Single-channel 8-bit image; ``pixels`` is a read-only (height, width) uint8 array."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.shape[0] == 0 or px.shape[1] == 0:
            raise ValueError(f"pixels must be a non-empty 2-D array, got shape {px.shape}")
        if px.dtype != np.uint8:
            if px.size and (px.min() < 0 or px.max() > 255 or not np.all(px == np.round(px))):
                raise ValueError("pixel values must be integers in [0, 255]")
            px = px.astype(np.uint8)
        px = np.array(px, dtype=np.uint8, copy=True, order="C")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @classmethod
    def from_flat(cls, width: int, height: int, values: Sequence[int]) -> "GrayImage":
        values = np.asarray(values)
        if width <= 0 or height <= 0 or values.size != width * height:
            raise ValueError("pixel count must equal width * height")
        return cls(values.reshape(height, width))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def __eq__(self, other):
        return isinstance(other, GrayImage) and np.array_equal(self.pixels, other.pixels)

    __hash__ = None


@dataclass(frozen=True)
class LabeledSample:
    id: str
    image: GrayImage
    label: int

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")


@dataclass(frozen=True)
class Dataset:
    samples: tuple
    class_names: tuple = ("NonCancer", "Cancer")

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        ids = [s.id for s in self.samples]
        if len(set(ids)) != len(ids):
            raise ValueError("sample ids must be unique within a Dataset")

    @property
    def class_counts(self) -> dict:
        counts = {0: 0, 1: 0}
        for s in self.samples:
            counts[s.label] += 1
        return counts

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)

    @property
    def ids(self) -> list:
        return [s.id for s in self.samples]

    def __len__(self):
        return len(self.samples)

    def subset(self, indices) -> "Dataset":
        return Dataset(tuple(self.samples[i] for i in indices), self.class_names)


@dataclass(frozen=True)
class PipelineConfig:
    split_ratio: float = 0.8
    target_size: int = 32
    batch_size: int = 64
    rotation_limit: float = 5.0
    flip_probability: float = 0.5
    seed: int = 42
    positive_class: str = DEFAULT_POSITIVE_CLASS

    def __post_init__(self):
        if not 0 < self.split_ratio < 1:
            raise ConfigError(f"split_ratio must be in (0, 1), got {self.split_ratio}")
        if int(self.target_size) != self.target_size or self.target_size <= 0:
            raise ConfigError(f"target_size must be a positive integer, got {self.target_size}")
        if int(self.batch_size) != self.batch_size or self.batch_size <= 0:
            raise ConfigError(f"batch_size must be a positive integer, got {self.batch_size}")
        if self.rotation_limit < 0:
            raise ConfigError("rotation_limit must be >= 0")
        if not 0 <= self.flip_probability <= 1:
            raise ConfigError("flip_probability must be in [0, 1]")

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown pipeline keys: {sorted(unknown)}")
        return cls(**d)


def load_pipeline_config(path) -> PipelineConfig:
    """Read a flat key-value file; keys may be bare or prefixed with ``pipeline.``."""
    flat = read_flat(path)
    return PipelineConfig.from_dict({k.removeprefix("pipeline."): v for k, v in flat.items()})


# --------------------------------------------------------------------- PGM I/O

def _pgm_tokens(data: bytes, n: int):
    """First ``n`` whitespace-separated header tokens (comments skipped) and the body offset."""
    tokens, pos = [], 0
    while len(tokens) < n:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ValueError("truncated header")
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates header and raster
    return tokens, pos + 1


def read_pgm(path) -> GrayImage:
    path = Path(path)
    try:
        data = path.read_bytes()
        tokens, offset = _pgm_tokens(data, 4)
        if tokens[0] != b"P5":
            raise ValueError(f"unsupported magic {tokens[0]!r} (need binary P5)")
        width, height, maxval = (int(t) for t in tokens[1:])
        if maxval != 255:
            raise ValueError(f"maxval {maxval} is not 8-bit")
        body = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=offset)
        return GrayImage(body.reshape(height, width))
    except (OSError, ValueError) as exc:
        raise CorpusError(f"cannot decode {path}: {exc}") from exc


def write_pgm(path, img: GrayImage) -> None:
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + img.pixels.tobytes())


# ------------------------------------------------------------------ operations

def class_mapping(names: Sequence[str], positive_class: Optional[str] = DEFAULT_POSITIVE_CLASS) -> dict:
    """Map the two class directory names to labels.

    ``positive_class`` gets label 1 when present; otherwise names are
    numbered in lexicographic order.
    """
    names = sorted(names)
    if positive_class in names:
        other = next(n for n in names if n != positive_class)
        return {other: NON_CANCER, positive_class: CANCER}
    return {name: i for i, name in enumerate(names)}


def load_dataset(root, positive_class: Optional[str] = DEFAULT_POSITIVE_CLASS) -> Dataset:
    """Load ``<root>/<class_name>/*.pgm``; exactly two class directories."""
    root = Path(root)
    if not root.is_dir():
        raise CorpusError(f"corpus root {root} is not a directory")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if len(class_dirs) != 2:
        raise CorpusError(
            f"corpus root {root} must contain exactly two class directories, "
            f"found {[p.name for p in class_dirs]}")
    mapping = class_mapping([p.name for p in class_dirs], positive_class)
    samples = []
    for d in class_dirs:
        for f in sorted(d.glob("*.pgm")):
            samples.append(LabeledSample(f"{d.name}/{f.name}", read_pgm(f), mapping[d.name]))
    names = tuple(sorted(mapping, key=mapping.get))
    return Dataset(tuple(samples), names)


def stratified_split(ds: Dataset, ratio: float, seed: int) -> tuple:
    """Per class, floor(ratio * count) samples go to train and the rest to val.

    Both splits keep the original dataset order.
    """
    if not 0 < ratio < 1:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    labels = ds.labels
    rng = substream(seed, "split")
    train_idx = []
    for c in (0, 1):
        idx = np.flatnonzero(labels == c)
        if idx.size < 2:
            raise CorpusError(
                f"class {c} ({ds.class_names[c]}) has {idx.size} samples; need >= 2 to split")
        n_train = min(max(math.floor(ratio * idx.size + 1e-9), 1), idx.size - 1)
        train_idx.extend(rng.permutation(idx)[:n_train].tolist())
    in_train = np.zeros(len(ds), dtype=bool)
    in_train[train_idx] = True
    return ds.subset(np.flatnonzero(in_train)), ds.subset(np.flatnonzero(~in_train))


def balance_by_upsampling(train: Dataset, seed: int) -> Dataset:
    """Append minority copies, drawn uniformly with replacement, until class counts match.

    Copies get ids ``<id>@up<k>``; majority samples appear once.
    """
    counts = train.class_counts
    if min(counts.values()) == 0:
        raise CorpusError(f"cannot balance a single-class training set (counts {counts})")
    minority = min(counts, key=lambda c: (counts[c], c))
    deficit = counts[1 - minority] - counts[minority]
    if deficit == 0:
        return train
    pool = [s for s in train.samples if s.label == minority]
    draws = substream(seed, "balance").integers(0, len(pool), size=deficit)
    extra = tuple(
        dataclasses.replace(pool[j], id=f"{pool[j].id}@up{k}") for k, j in enumerate(draws))
    return Dataset(train.samples + extra, train.class_names)


def _bilinear_sample(src: np.ndarray, ys: np.ndarray, xs: np.ndarray, fill: Optional[float]) -> np.ndarray:
    """Bilinear lookup at real coordinates.

    With ``fill`` None coordinates are clamped to the border; otherwise
    neighbours outside the image read as ``fill``.
    """
    h, w = src.shape
    src = src.astype(np.float64)
    if fill is None:
        ys = np.clip(ys, 0, h - 1)
        xs = np.clip(xs, 0, w - 1)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    fy = ys - y0
    fx = xs - x0

    def tap(yy, xx):
        inside = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        vals = src[np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]
        return vals if fill is None else np.where(inside, vals, fill)

    return ((1 - fy) * (1 - fx) * tap(y0, x0) + (1 - fy) * fx * tap(y0, x0 + 1)
            + fy * (1 - fx) * tap(y0 + 1, x0) + fy * fx * tap(y0 + 1, x0 + 1))


def _to_uint8(values: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(values), 0, 255).astype(np.uint8)


def hflip(img: GrayImage) -> GrayImage:
    return GrayImage(img.pixels[:, ::-1])


def rotate(img: GrayImage, degrees: float) -> GrayImage:
    """Counter-clockwise rotation about the image centre, bilinear, zero fill."""
    if degrees == 0:
        return img
    h, w = img.pixels.shape
    cy, cx = (h - 1) / 2, (w - 1) / 2
    theta = math.radians(degrees)
    c, s = math.cos(theta), math.sin(theta)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    # inverse map: output pixel -> source location (rows grow downwards)
    src_x = c * dx - s * dy + cx
    src_y = s * dx + c * dy + cy
    return GrayImage(_to_uint8(_bilinear_sample(img.pixels, src_y, src_x, fill=0.0)))


def sample_augment_params(rng: np.random.Generator, flip_probability: float = 0.5,
                          rotation_limit: float = 5.0) -> tuple:
    """Draw (flip, angle_degrees). Always consumes two draws so streams stay aligned."""
    flip = rng.random() < flip_probability
    angle = rng.uniform(-rotation_limit, rotation_limit)
    return bool(flip), float(angle)


def augment(img: GrayImage, rng: np.random.Generator, flip_probability: float = 0.5,
            rotation_limit: float = 5.0) -> GrayImage:
    """Random horizontal flip, then a random rotation within +-rotation_limit degrees."""
    flip, angle = sample_augment_params(rng, flip_probability, rotation_limit)
    if flip:
        img = hflip(img)
    return rotate(img, angle)


def resize(img: GrayImage, target: int) -> GrayImage:
    """Bilinear resize to target x target (pixel-centre aligned, edges clamped)."""
    if target <= 0:
        raise ValueError("target must be positive")
    h, w = img.pixels.shape
    if (h, w) == (target, target):
        return img
    ys = (np.arange(target) + 0.5) * (h / target) - 0.5
    xs = (np.arange(target) + 0.5) * (w / target) - 0.5
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    return GrayImage(_to_uint8(_bilinear_sample(img.pixels, gy, gx, fill=None)))


def normalize(img: GrayImage) -> np.ndarray:
    """(pixel / 255 - 0.5) / 0.5 as a (1, H, W) float64 array in [-1, 1]."""
    return ((img.pixels.astype(np.float64) / 255.0 - 0.5) / 0.5)[None]


def denormalize(t: np.ndarray) -> np.ndarray:
    """Inverse of :func:`normalize`, giving intensities on the [0, 1] scale."""
    return np.asarray(t) * 0.5 + 0.5


def preprocess(img: GrayImage, cfg: PipelineConfig, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Eval path when ``rng`` is None; otherwise augment first."""
    if rng is not None:
        img = augment(img, rng, cfg.flip_probability, cfg.rotation_limit)
    return normalize(resize(img, cfg.target_size))


def make_batches(ds: Dataset, cfg: PipelineConfig, training: bool, seed: int,
                 epoch: int = 0) -> Iterator[tuple]:
    """Yield ``(x, y)`` with x of shape (B, 1, S, S) and y int64 labels.

    Training mode shuffles and augments from streams keyed on (seed, epoch);
    eval mode keeps dataset order and uses no randomness at all.
    """
    if len(ds) == 0:
        raise ValueError("cannot batch an empty dataset")
    if training:
        order = substream(seed, "shuffle", epoch).permutation(len(ds))
        rng = substream(seed, "augment", epoch)
    else:
        order = np.arange(len(ds))
        rng = None
    labels = ds.labels
    for start in range(0, len(ds), cfg.batch_size):
        idx = order[start:start + cfg.batch_size]
        x = np.stack([preprocess(ds.samples[i].image, cfg, rng) for i in idx])
        yield x, labels[idx]


def eval_tensors(ds: Dataset, cfg: PipelineConfig) -> tuple:
    """Whole dataset through the eval path as one (N, 1, S, S) array plus labels."""
    if len(ds) == 0:
        raise ValueError("empty dataset")
    return np.stack([preprocess(s.image, cfg) for s in ds.samples]), ds.labels

"""Two-class stand-in corpus: class-dependent brightness plus Gaussian texture."""
from pathlib import Path

import numpy as np

from ._rng import substream
from .data import Dataset, GrayImage, LabeledSample, write_pgm

DEFAULT_COUNTS = {0: 620, 1: 125}
CLASS_DIRS = {0: "NonCancer", 1: "Cancer"}
# per-image base intensity ranges; disjoint so mean intensity separates the classes
BASE_RANGE = {0: (70.0, 110.0), 1: (145.0, 185.0)}
TEXTURE_STD = 20.0


def synthetic_image(rng: np.random.Generator, label: int, size: int = 32) -> GrayImage:
    lo, hi = BASE_RANGE[label]
    base = rng.uniform(lo, hi)
    px = base + TEXTURE_STD * rng.standard_normal((size, size))
    return GrayImage(np.clip(np.rint(px), 0, 255).astype(np.uint8))


def make_synthetic(counts=None, size: int = 32, seed: int = 42) -> Dataset:
    counts = dict(DEFAULT_COUNTS if counts is None else counts)
    samples = []
    for label in sorted(counts, key=lambda c: CLASS_DIRS[c]):
        rng = substream(seed, "synthetic", label)
        for i in range(counts[label]):
            samples.append(LabeledSample(f"{CLASS_DIRS[label]}/img_{i:05d}.pgm",
                                         synthetic_image(rng, label, size), label))
    return Dataset(tuple(samples), (CLASS_DIRS[0], CLASS_DIRS[1]))


def write_synthetic(root, counts=None, size: int = 32, seed: int = 42) -> Dataset:
    """Write the corpus as ``<root>/<class>/*.pgm`` and return it."""
    ds = make_synthetic(counts, size, seed)
    root = Path(root)
    for name in CLASS_DIRS.values():
        (root / name).mkdir(parents=True, exist_ok=True)
    for s in ds.samples:
        write_pgm(root / s.id, s.image)
    return ds

"""Run configuration read from a flat dotted-key file.

Example::

    seed = 42
    corpus = "corpus"
    output_dir = "run"
    pipeline.batch_size = 64
    train.max_epochs = 30
    learners[0].id = "vit_p8"
    learners[0].patch_size = 8
    meta.max_iter = 500

Relative paths are resolved against the config file's directory.
"""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ._flatfile import format_flat, indexed_sections, parse_flat, read_flat, section
from ._rng import substream
from .data import PipelineConfig
from .errors import ConfigError
from .trainer import TrainConfig
from .vit import ViTConfig

TOP_LEVEL_KEYS = {"seed", "corpus", "output_dir"}


@dataclass(frozen=True)
class MetaConfig:
    max_iter: int = 500
    tolerance: float = 1e-6

    def __post_init__(self):
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ConfigError("meta.max_iter must be a positive integer")
        if not self.tolerance > 0:
            raise ConfigError("meta.tolerance must be > 0")


def derived_seed(root: int, *names) -> int:
    return int(substream(root, *names).integers(0, 2 ** 31 - 1))


@dataclass(frozen=True)
class RunConfig:
    learners: tuple
    pipeline: PipelineConfig = PipelineConfig()
    train: TrainConfig = TrainConfig()
    meta: MetaConfig = MetaConfig()
    corpus: Optional[Path] = None
    output_dir: Path = Path("run")
    seed: int = 42
    checksum: str = ""

    def __post_init__(self):
        ids = [lid for lid, _ in self.learners]
        if not ids:
            raise ConfigError("at least one learner is required")
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise ConfigError(f"duplicate learner ids: {dup}")
        for lid, vc in self.learners:
            if not lid or "," in lid or "/" in lid:
                raise ConfigError(f"learner id {lid!r} must be non-empty and free of ',' and '/'")
            if vc.image_size != self.pipeline.target_size:
                raise ConfigError(f"learner {lid!r}: image_size {vc.image_size} != pipeline.target_size "
                                  f"{self.pipeline.target_size}")
            if vc.patch_size > self.pipeline.target_size:
                raise ConfigError(f"learner {lid!r}: patch_size exceeds target_size")

    @property
    def learner_ids(self) -> list:
        return [lid for lid, _ in self.learners]


def _build(cls, d: dict, name: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown {name} keys: {sorted(unknown)}")
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"bad {name} section: {exc}") from exc


def run_config_from_flat(flat: dict, base_dir=".", seed_override: Optional[int] = None,
                         output_override=None) -> RunConfig:
    base_dir = Path(base_dir)
    prefixes = ("pipeline.", "train.", "meta.", "learners[")
    stray = [k for k in flat if k not in TOP_LEVEL_KEYS and not k.startswith(prefixes)]
    if stray:
        raise ConfigError(f"unknown config keys: {sorted(stray)}")
    seed = int(flat.get("seed", 42) if seed_override is None else seed_override)

    pipe = dict(section(flat, "pipeline"))
    pipe["seed"] = seed
    pipeline = _build(PipelineConfig, pipe, "pipeline")
    tr = dict(section(flat, "train"))
    tr["seed"] = seed
    train = _build(TrainConfig, tr, "train")
    meta = _build(MetaConfig, section(flat, "meta"), "meta")

    learners = []
    for i, entry in enumerate(indexed_sections(flat, "learners")):
        entry = dict(entry)
        lid = entry.pop("id", None)
        if not isinstance(lid, str):
            raise ConfigError(f"learners[{i}].id must be a string")
        entry.setdefault("image_size", pipeline.target_size)
        entry.setdefault("seed", derived_seed(seed, "init", lid))
        learners.append((lid, _build(ViTConfig, entry, f"learners[{i}]")))

    corpus = flat.get("corpus")
    out = output_override if output_override is not None else flat.get("output_dir", "run")
    checksum_src = dict(flat, seed=seed)
    checksum = hashlib.sha256(format_flat(dict(sorted(checksum_src.items()))).encode()).hexdigest()
    return RunConfig(tuple(learners), pipeline, train, meta,
                     None if corpus is None else base_dir / corpus, base_dir / out if output_override is None
                     else Path(out), seed, checksum)


def load_run_config(path, seed_override: Optional[int] = None, output_override=None) -> RunConfig:
    path = Path(path)
    return run_config_from_flat(read_flat(path), path.parent, seed_override, output_override)


def parse_run_config(text: str, base_dir=".", **kw) -> RunConfig:
    return run_config_from_flat(parse_flat(text), base_dir, **kw)

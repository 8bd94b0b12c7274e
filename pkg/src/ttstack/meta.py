"""Second tier: logistic regression over concatenated base-learner logits.

Meta features for K learners are the 2K columns
``[l1_logit0, l1_logit1, l2_logit0, ...]`` in a fixed learner order. They are
standardized with training statistics and fed to a class-weighted,
L2-regularized logistic regression fitted by damped Newton iterations.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import vit
from .data import Dataset, PipelineConfig, eval_tensors
from .errors import CorpusError, NumericalError

STD_FLOOR = 1e-12
LOGIT_CSV_HEADER = ["sample_id", "label", "learner_id", "logit_0", "logit_1"]


@dataclass
class MetaFeatures:
    matrix: np.ndarray
    labels: np.ndarray
    learner_order: tuple
    sample_ids: tuple = ()
    split: str = "train"

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.learner_order = tuple(self.learner_order)
        if self.matrix.ndim != 2 or self.matrix.shape[1] != 2 * len(self.learner_order):
            raise ValueError(f"matrix needs 2 x {len(self.learner_order)} columns, got shape {self.matrix.shape}")
        if self.labels.shape != (self.matrix.shape[0],):
            raise ValueError("labels must align with matrix rows")
        if not self.sample_ids:
            self.sample_ids = tuple(str(i) for i in range(len(self.labels)))
        self.sample_ids = tuple(self.sample_ids)

    def __len__(self):
        return len(self.labels)

    def block(self, learner_id: str) -> np.ndarray:
        """The (N, 2) logit block of one learner."""
        j = self.learner_order.index(learner_id)
        return self.matrix[:, 2 * j:2 * j + 2]

    def reorder(self, learner_order: Sequence[str]) -> "MetaFeatures":
        if sorted(learner_order) != sorted(self.learner_order):
            raise ValueError(f"learner sets differ: {sorted(learner_order)} vs {sorted(self.learner_order)}")
        cols = np.hstack([self.block(lid) for lid in learner_order])
        return MetaFeatures(cols, self.labels, learner_order, self.sample_ids, self.split)


def _named(learners) -> list:
    items = list(learners.items()) if isinstance(learners, dict) else list(learners)
    ids = [lid for lid, _ in items]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate learner ids: {ids}")
    return items


def learner_logits(learners, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Concatenated (N, 2K) logits for preprocessed images ``x``."""
    blocks = []
    for lid, model in _named(learners):
        if x.shape[1:] != (1, model.config.image_size, model.config.image_size):
            raise ValueError(f"learner {lid!r} expects {model.config.image_size}px input, "
                             f"got tensors of shape {x.shape[1:]}")
        blocks.append(np.vstack([vit.forward(model, x[s:s + batch_size])
                                 for s in range(0, len(x), batch_size)]))
    return np.hstack(blocks)


def extract_logits(learners, data: Dataset, pipeline: PipelineConfig, split: str = "train") -> MetaFeatures:
    """Eval-mode logits of every learner on every sample of ``data``.

    ``learners`` is an ordered sequence of (learner_id, model) pairs or a dict.
    """
    items = _named(learners)
    x, y = eval_tensors(data, pipeline)
    return MetaFeatures(learner_logits(items, x, pipeline.batch_size), y,
                        [lid for lid, _ in items], data.ids, split)


# ------------------------------------------------------------ interchange CSV

def logits_to_csv(feats: MetaFeatures) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOGIT_CSV_HEADER)
    for i, sid in enumerate(feats.sample_ids):
        for j, lid in enumerate(feats.learner_order):
            w.writerow([sid, int(feats.labels[i]), lid,
                        repr(float(feats.matrix[i, 2 * j])), repr(float(feats.matrix[i, 2 * j + 1]))])
    return buf.getvalue()


def write_logit_csv(path, feats: MetaFeatures) -> None:
    Path(path).write_text(logits_to_csv(feats), encoding="utf-8")


def logits_from_csv(text: str, split: str = "train", source: str = "<csv>") -> MetaFeatures:
    """Rebuild MetaFeatures; learner and sample order follow first appearance."""
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames != LOGIT_CSV_HEADER:
        raise CorpusError(f"{source}: header must be {','.join(LOGIT_CSV_HEADER)}, got {reader.fieldnames}")
    learners, samples, labels, cells = {}, {}, {}, {}
    for n, row in enumerate(reader, 2):
        try:
            sid, lid = row["sample_id"], row["learner_id"]
            label = int(row["label"])
            pair = (float(row["logit_0"]), float(row["logit_1"]))
        except (TypeError, ValueError) as exc:
            raise CorpusError(f"{source}:{n}: malformed row: {exc}") from exc
        if label not in (0, 1):
            raise CorpusError(f"{source}:{n}: label must be 0 or 1")
        learners.setdefault(lid, len(learners))
        samples.setdefault(sid, len(samples))
        if labels.setdefault(sid, label) != label:
            raise CorpusError(f"{source}:{n}: conflicting labels for sample {sid!r}")
        if (sid, lid) in cells:
            raise CorpusError(f"{source}:{n}: duplicate row for ({sid!r}, {lid!r})")
        cells[(sid, lid)] = pair
    if not samples:
        raise CorpusError(f"{source}: no data rows")
    if len(cells) != len(samples) * len(learners):
        raise CorpusError(f"{source}: expected {len(samples)} x {len(learners)} rows, got {len(cells)}")
    mat = np.array([[v for lid in learners for v in cells[(sid, lid)]] for sid in samples])
    return MetaFeatures(mat, [labels[s] for s in samples], list(learners), list(samples), split)


def read_logit_csv(path, split: str = "train") -> MetaFeatures:
    return logits_from_csv(Path(path).read_text(encoding="utf-8"), split, str(path))


# --------------------------------------------------------------- standardizer

@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    def transform(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.mean.size:
            raise ValueError(f"expected {self.mean.size} columns, got {x.shape[-1]}")
        return (x - self.mean) / self.std


def fit_standardizer(x) -> Standardizer:
    """Column mean and population std; near-constant columns get std 1."""
    x = np.asarray(x.matrix if isinstance(x, MetaFeatures) else x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need at least 2 rows to fit a standardizer")
    constant = np.ptp(x, axis=0) == 0
    mean = np.where(constant, x[0], x.mean(axis=0))
    std = x.std(axis=0)
    std = np.where(std < STD_FLOOR * np.maximum(1.0, np.abs(mean)), 1.0, std)
    return Standardizer(mean, std)


def apply_standardizer(s: Standardizer, x) -> np.ndarray:
    return s.transform(x.matrix if isinstance(x, MetaFeatures) else x)


# -------------------------------------------------------- logistic regression

def compute_class_weights(labels) -> np.ndarray:
    """Balanced weights n_total / (2 * n_c) for classes 0 and 1."""
    labels = np.asarray(labels, dtype=np.int64)
    counts = np.bincount(labels, minlength=2)[:2]
    if counts.min() == 0 or counts.sum() != labels.size:
        raise ValueError(f"both classes required (and no others), got counts {counts.tolist()}")
    return labels.size / (2.0 * counts)


def _sigmoid(z):
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


def logreg_objective(w, b, x, y, sample_weight, lam: float = 1.0) -> float:
    """sum_i s_i * logloss_i + lam/2 * ||w||^2 (bias unpenalized)."""
    z = x @ w + b
    # log(1 + exp(-z)) for y=1, log(1 + exp(z)) for y=0
    nll = np.logaddexp(0.0, np.where(y == 1, -z, z))
    return float(sample_weight @ nll + 0.5 * lam * w @ w)


def logreg_gradient(w, b, x, y, sample_weight, lam: float = 1.0) -> tuple:
    r = sample_weight * (_sigmoid(x @ w + b) - y)
    return x.T @ r + lam * w, float(r.sum())


@dataclass
class LogRegModel:
    weights: np.ndarray
    bias: float
    regularization_strength: float = 1.0
    class_weights: np.ndarray = field(default_factory=lambda: np.ones(2))
    iterations_run: int = 0
    converged: bool = False
    objective: float = math.nan

    def decision_function(self, x) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.weights + self.bias

    def predict_proba(self, x) -> np.ndarray:
        """Probability of class 1."""
        return _sigmoid(self.decision_function(x))


def fit_logreg(x, labels, class_weights=None, max_iter: int = 500, tol: float = 1e-6,
               lam: float = 1.0, init: Optional[tuple] = None) -> LogRegModel:
    """Minimize the class-weighted L2 logistic loss by Newton steps with backtracking.

    Stops when the gradient norm drops to ``tol`` or after ``max_iter`` steps.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    n, d = x.shape
    if n < 2 or set(np.unique(y)) != {0, 1}:
        raise ValueError("need >= 2 rows covering both classes")
    cw = compute_class_weights(y) if class_weights is None else np.asarray(class_weights, dtype=np.float64)
    sw = cw[y]
    xa = np.hstack([x, np.ones((n, 1))])
    theta = np.zeros(d + 1)
    if init is not None:
        theta[:d], theta[d] = np.asarray(init[0], dtype=np.float64), float(init[1])
    reg = np.full(d + 1, lam)
    reg[d] = 0.0

    def obj(t):
        return logreg_objective(t[:d], t[d], x, y, sw, lam)

    f = obj(theta)
    it, converged = 0, False
    while True:
        if not math.isfinite(f):
            raise NumericalError("non-finite logistic-regression objective")
        p = _sigmoid(xa @ theta)
        grad = xa.T @ (sw * (p - y)) + reg * theta
        if np.linalg.norm(grad) <= tol:
            converged = True
            break
        if it >= max_iter:
            break
        hess = (xa * (sw * p * (1 - p))[:, None]).T @ xa + np.diag(reg)
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        t = 1.0
        slope = grad @ step
        while True:
            cand = theta - t * step
            fc = obj(cand)
            if fc <= f - 1e-4 * t * slope or t < 1e-10:
                break
            t *= 0.5
        theta, f = cand, fc
        it += 1
    return LogRegModel(theta[:d].copy(), float(theta[d]), lam, cw, it, converged, f)


# ------------------------------------------------------------ stacked learner

@dataclass
class MetaLearner:
    """Standardizer + logistic regression bound to a learner order."""

    learner_order: tuple
    standardizer: Standardizer
    model: LogRegModel

    def predict_proba(self, feats: MetaFeatures) -> np.ndarray:
        if feats.learner_order != tuple(self.learner_order):
            raise ValueError(f"learner order {feats.learner_order} does not match "
                             f"training order {tuple(self.learner_order)}")
        return self.model.predict_proba(self.standardizer.transform(feats.matrix))

    def predict(self, feats: MetaFeatures) -> tuple:
        """(class, cancer probability); probability >= 0.5 means class 1."""
        p = self.predict_proba(feats)
        return (p >= 0.5).astype(np.int64), p

    def to_dict(self) -> dict:
        m = self.model
        return {
            "format": "ttstack-meta/1",
            "learner_order": list(self.learner_order),
            "standardizer": {"mean": [float(v) for v in self.standardizer.mean],
                             "std": [float(v) for v in self.standardizer.std]},
            "logreg": {"weights": [float(v) for v in m.weights], "bias": float(m.bias),
                       "regularization_strength": m.regularization_strength,
                       "class_weights": [float(v) for v in m.class_weights],
                       "iterations_run": m.iterations_run, "converged": m.converged,
                       "objective": float(m.objective)},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetaLearner":
        if d.get("format") != "ttstack-meta/1":
            raise ValueError("unrecognised meta model format")
        s, lr = d["standardizer"], d["logreg"]
        model = LogRegModel(np.array(lr["weights"], dtype=np.float64), float(lr["bias"]),
                            lr["regularization_strength"], np.array(lr["class_weights"]),
                            lr["iterations_run"], lr["converged"], lr["objective"])
        return cls(tuple(d["learner_order"]), Standardizer(np.array(s["mean"]), np.array(s["std"])), model)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "MetaLearner":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def fit_meta_learner(train_feats: MetaFeatures, max_iter: int = 500, tol: float = 1e-6,
                     lam: float = 1.0) -> MetaLearner:
    """Fit standardizer and balanced logistic regression on meta-train rows only."""
    if train_feats.split != "train":
        raise ValueError(f"meta-learner must be fitted on train rows, got split {train_feats.split!r}")
    std = fit_standardizer(train_feats.matrix)
    xs = std.transform(train_feats.matrix)
    model = fit_logreg(xs, train_feats.labels, compute_class_weights(train_feats.labels),
                       max_iter=max_iter, tol=tol, lam=lam)
    return MetaLearner(train_feats.learner_order, std, model)


def stack_predict(learners, meta: MetaLearner, images: np.ndarray, batch_size: int = 256) -> tuple:
    """End-to-end prediction for preprocessed images of shape (N, 1, S, S)."""
    items = _named(learners)
    if tuple(lid for lid, _ in items) != tuple(meta.learner_order):
        raise ValueError(f"learner order {[lid for lid, _ in items]} does not match "
                         f"training order {list(meta.learner_order)}")
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 3:
        images = images[None]
    logits = learner_logits(items, images, batch_size)
    feats = MetaFeatures(logits, np.zeros(len(images), dtype=np.int64), meta.learner_order, split="inference")
    return meta.predict(feats)

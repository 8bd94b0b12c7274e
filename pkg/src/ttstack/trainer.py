"""Base-learner training: AdamW, plateau LR halving, best-val-loss checkpointing."""
from __future__ import annotations

import csv
import dataclasses
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import vit
from .data import Dataset, PipelineConfig, eval_tensors, make_batches
from .errors import ConfigError, NumericalError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    max_epochs: int = 30
    plateau_patience: int = 3
    plateau_factor: float = 0.5
    min_lr: float = 1e-7
    seed: int = 42

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if not 0 < self.plateau_factor < 1:
            raise ConfigError("plateau_factor must be in (0, 1)")
        if int(self.max_epochs) != self.max_epochs or self.max_epochs < 1:
            raise ConfigError("max_epochs must be an integer >= 1")
        if self.plateau_patience < 1:
            raise ConfigError("plateau_patience must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class OptimizerState:
    current_lr: float
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict, lr: float) -> "OptimizerState":
        return cls(lr, 0, {k: np.zeros_like(v) for k, v in params.items()},
                   {k: np.zeros_like(v) for k, v in params.items()})


def adamw_step(params: dict, grads: dict, state: OptimizerState, cfg: TrainConfig) -> tuple:
    """One AdamW update, in place on ``params`` and ``state``.

    theta <- theta * (1 - lr * wd) - lr * m_hat / (sqrt(v_hat) + eps), which is
    the decoupled-decay rule with the decay written as an exact shrink.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {name!r}")
    state.step_count += 1
    t = state.step_count
    lr = state.current_lr
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    for name, theta in params.items():
        g = grads[name]
        m = state.first_moment[name]
        v = state.second_moment[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        step = (m / bc1) / (np.sqrt(v / bc2) + cfg.epsilon)
        if cfg.weight_decay:
            theta *= 1.0 - lr * cfg.weight_decay
        theta -= lr * step
    return params, state


class PlateauScheduler:
    """Multiply the LR by ``factor`` once val loss has gone ``patience`` epochs without a strict decrease."""

    def __init__(self, patience: int = 3, factor: float = 0.5, min_lr: float = 1e-7):
        self.patience = patience
        self.factor = factor
        self.min_lr = min_lr
        self.best = math.inf
        self.num_bad_epochs = 0

    def step(self, val_loss: float, lr: float) -> float:
        if val_loss < self.best:
            self.best = val_loss
            self.num_bad_epochs = 0
            return lr
        self.num_bad_epochs += 1
        if self.num_bad_epochs >= self.patience:
            self.num_bad_epochs = 0
            return max(lr * self.factor, self.min_lr)
        return lr


def plateau_lr_trace(val_losses, lr: float, patience: int = 3, factor: float = 0.5,
                     min_lr: float = 1e-7) -> list:
    """LR in effect after each epoch for a sequence of validation losses."""
    sched = PlateauScheduler(patience, factor, min_lr)
    out = []
    for loss in val_losses:
        lr = sched.step(loss, lr)
        out.append(lr)
    return out


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    train_accuracy: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = math.inf

    def __len__(self):
        return len(self.val_loss)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "train_acc", "val_loss", "val_acc", "lr"])
        for i in range(len(self)):
            w.writerow([i + 1, repr(self.train_loss[i]), repr(self.train_accuracy[i]),
                        repr(self.val_loss[i]), repr(self.val_accuracy[i]), repr(self.lr[i])])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TrainHistory":
        h = cls()
        for row in csv.DictReader(io.StringIO(text)):
            h.train_loss.append(float(row["train_loss"]))
            h.train_accuracy.append(float(row["train_acc"]))
            h.val_loss.append(float(row["val_loss"]))
            h.val_accuracy.append(float(row["val_acc"]))
            h.lr.append(float(row["lr"]))
        if h.val_loss:
            h.best_epoch = int(np.argmin(h.val_loss))
            h.best_val_loss = min(h.val_loss)
        return h


def loss_accuracy_arrays(model: vit.TinyViTModel, x: np.ndarray, y: np.ndarray,
                         batch_size: int = 256) -> tuple:
    total, correct = 0.0, 0
    for start in range(0, len(y), batch_size):
        logits = vit.forward(model, x[start:start + batch_size])
        yb = y[start:start + batch_size]
        total += vit.cross_entropy(logits, yb) * len(yb)
        correct += int((vit.argmax_logits(logits) == yb).sum())
    return total / len(y), correct / len(y)


def evaluate_loss_accuracy(model: vit.TinyViTModel, data: Dataset, pipeline: PipelineConfig) -> tuple:
    """Mean cross-entropy and accuracy over ``data`` on the eval path."""
    x, y = eval_tensors(data, pipeline)
    return loss_accuracy_arrays(model, x, y, pipeline.batch_size)


def train(model: vit.TinyViTModel, train_data: Dataset, val_data: Dataset, cfg: TrainConfig,
          pipeline: Optional[PipelineConfig] = None, name: str = "model") -> tuple:
    """Run all ``cfg.max_epochs`` epochs and return (best-val-loss model, history).

    ``model`` itself is left untouched.
    """
    pipeline = pipeline or PipelineConfig()
    if len(train_data) == 0 or len(val_data) == 0:
        raise ValueError("train and validation sets must be non-empty")
    model = model.copy()
    state = OptimizerState.for_params(model.params, cfg.learning_rate)
    sched = PlateauScheduler(cfg.plateau_patience, cfg.plateau_factor, cfg.min_lr)
    hist = TrainHistory()
    best = model.copy()
    train_x, train_y = eval_tensors(train_data, pipeline)
    val_x, val_y = eval_tensors(val_data, pipeline)

    for epoch in range(cfg.max_epochs):
        lr_used = state.current_lr
        for b, (xb, yb) in enumerate(make_batches(train_data, pipeline, True, cfg.seed, epoch)):
            loss, grads = vit.backward(model, xb, yb)
            if not math.isfinite(loss):
                raise NumericalError(f"{name}: non-finite loss at epoch {epoch + 1}, batch {b + 1}")
            try:
                adamw_step(model.params, grads, state, cfg)
            except NumericalError as exc:
                raise NumericalError(f"{name}: epoch {epoch + 1}, batch {b + 1}: {exc}") from exc

        tr_loss, tr_acc = loss_accuracy_arrays(model, train_x, train_y, pipeline.batch_size)
        va_loss, va_acc = loss_accuracy_arrays(model, val_x, val_y, pipeline.batch_size)
        if not (math.isfinite(tr_loss) and math.isfinite(va_loss)):
            raise NumericalError(f"{name}: non-finite evaluation loss at epoch {epoch + 1}")
        hist.train_loss.append(tr_loss)
        hist.train_accuracy.append(tr_acc)
        hist.val_loss.append(va_loss)
        hist.val_accuracy.append(va_acc)
        hist.lr.append(lr_used)
        if va_loss < hist.best_val_loss:
            hist.best_val_loss = va_loss
            hist.best_epoch = epoch
            best = model.copy()
        state.current_lr = sched.step(va_loss, state.current_lr)
        log.info("%s epoch %d/%d train_loss=%.4f train_acc=%.4f val_loss=%.4f val_acc=%.4f lr=%.2e",
                 name, epoch + 1, cfg.max_epochs, tr_loss, tr_acc, va_loss, va_acc, lr_used)
    return best, hist

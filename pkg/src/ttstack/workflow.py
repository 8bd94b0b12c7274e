"""End-to-end orchestration behind the CLI verbs.

Output directory layout::

    checkpoints/<learner>.ckpt   history/<learner>.csv
    logits/train.csv             logits/val.csv
    meta/meta_model.json
    reports/<name>.json          roc/<name>.csv
    comparison.csv               manifest.json       timings.json

Every file is written via temp file + rename. ``manifest.json`` holds only
content-derived data so repeated runs give identical bytes; wall-clock
times go to ``timings.json``, which the manifest does not list.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import tempfile
import time
from pathlib import Path
from typing import Optional

import numpy as np

from . import metrics, vit
from .config import MetaConfig, RunConfig
from .data import balance_by_upsampling, load_dataset, stratified_split
from .errors import CorpusError
from .meta import MetaFeatures, MetaLearner, extract_logits as _extract, fit_meta_learner, \
    logits_to_csv, read_logit_csv
from .trainer import TrainHistory, train

log = logging.getLogger(__name__)

STACK_NAME = "ttstack"
MANIFEST = "manifest.json"
TIMINGS = "timings.json"
COMPARISON_COLUMNS = ["model", "precision", "recall", "f1", "train_acc", "train_loss",
                      "val_acc", "val_loss", "roc_auc"]


def write_atomic(path, data) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _record_timing(out: Path, step: str, seconds: float) -> None:
    p = out / TIMINGS
    try:
        data = json.loads(p.read_text())
    except (OSError, ValueError):
        data = {}
    data[step] = {"finished_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"), "seconds": round(seconds, 3)}
    write_atomic(p, json.dumps(data, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------- data

def prepare_data(rc: RunConfig) -> dict:
    """Load the corpus, split it, and balance the training part."""
    if rc.corpus is None:
        raise CorpusError("config has no 'corpus' path")
    ds = load_dataset(rc.corpus, rc.pipeline.positive_class)
    train_ds, val_ds = stratified_split(ds, rc.pipeline.split_ratio, rc.seed)
    balanced = balance_by_upsampling(train_ds, rc.seed)
    log.info("corpus %s: counts %s, train %s, val %s, balanced %s", rc.corpus, ds.class_counts,
             train_ds.class_counts, val_ds.class_counts, balanced.class_counts)
    return {"full": ds, "train": train_ds, "val": val_ds, "balanced": balanced}


# ------------------------------------------------------------------- tier 1

def checkpoint_path(out, lid) -> Path:
    return Path(out) / "checkpoints" / f"{lid}.ckpt"


def train_base(rc: RunConfig, data: Optional[dict] = None) -> dict:
    """Train every configured learner under the same protocol; returns {id: (model, history)}."""
    t0 = time.time()
    data = data or prepare_data(rc)
    out = Path(rc.output_dir)
    results = {}
    for lid, vcfg in rc.learners:
        model, hist = train(vit.init_model(vcfg), data["balanced"], data["val"], rc.train, rc.pipeline, name=lid)
        write_atomic(checkpoint_path(out, lid), vit.checkpoint_bytes(model))
        write_atomic(out / "history" / f"{lid}.csv", hist.to_csv())
        results[lid] = (model, hist)
    write_manifest(rc, data["full"].class_names)
    _record_timing(out, "train-base", time.time() - t0)
    return results


def load_learners(rc: RunConfig) -> list:
    learners = []
    for lid, _ in rc.learners:
        p = checkpoint_path(rc.output_dir, lid)
        if not p.exists():
            raise CorpusError(f"missing checkpoint for learner {lid!r}: {p}")
        learners.append((lid, vit.load_checkpoint(p)))
    return learners


def extract_logits(rc: RunConfig, splits=("train", "val"), data: Optional[dict] = None) -> dict:
    """Write ``logits/<split>.csv``; "train" is the balanced training loader."""
    t0 = time.time()
    learners = load_learners(rc)
    data = data or prepare_data(rc)
    source = {"train": data["balanced"], "val": data["val"]}
    out = {}
    for split in splits:
        if split not in source:
            raise ValueError(f"unknown split {split!r}")
        feats = _extract(learners, source[split], rc.pipeline, split)
        write_atomic(Path(rc.output_dir) / "logits" / f"{split}.csv", logits_to_csv(feats))
        out[split] = feats
    write_manifest(rc, data["full"].class_names)
    _record_timing(Path(rc.output_dir), "extract-logits", time.time() - t0)
    return out


# ------------------------------------------------------------------- tier 2

def _load_pair(train_csv, val_csv) -> tuple:
    for p in (train_csv, val_csv):
        if not Path(p).exists():
            raise CorpusError(f"missing logit file {p}")
    tr = read_logit_csv(train_csv, "train")
    va = read_logit_csv(val_csv, "val")
    if set(tr.learner_order) != set(va.learner_order):
        raise CorpusError(f"learner sets differ between {train_csv} {sorted(tr.learner_order)} "
                          f"and {val_csv} {sorted(va.learner_order)}")
    return tr, va.reorder(tr.learner_order)


def _class_names(out: Path) -> tuple:
    try:
        return tuple(json.loads((out / MANIFEST).read_text())["class_names"])
    except (OSError, ValueError, KeyError):
        return ("NonCancer", "Cancer")


def train_meta(out_dir, meta_cfg: MetaConfig = MetaConfig(), train_csv=None, val_csv=None,
               rc: Optional[RunConfig] = None) -> tuple:
    """Fit the meta-learner on train logits; report on val logits. Needs no checkpoints."""
    t0 = time.time()
    out = Path(out_dir)
    tr, va = _load_pair(train_csv or out / "logits" / "train.csv", val_csv or out / "logits" / "val.csv")
    meta = fit_meta_learner(tr, meta_cfg.max_iter, meta_cfg.tolerance)
    write_atomic(out / "meta" / "meta_model.json", json.dumps(meta.to_dict(), indent=2) + "\n")
    pred, prob = meta.predict(va)
    names = _class_names(out)
    report = metrics.classification_report(va.labels, pred, prob, names)
    write_atomic(out / "reports" / f"{STACK_NAME}.json", report.to_json())
    write_atomic(out / "roc" / f"{STACK_NAME}.csv", metrics.roc_to_csv(metrics.roc_curve(va.labels, prob)))
    write_manifest(rc, names, out)
    _record_timing(out, "train-meta", time.time() - t0)
    return meta, report


def _binary_log_loss(labels, prob) -> float:
    p = np.clip(prob, 1e-300, 1 - 1e-16)
    return float(-np.mean(np.where(labels == 1, np.log(p), np.log1p(-p))))


def evaluate(out_dir, train_csv=None, val_csv=None, rc: Optional[RunConfig] = None) -> dict:
    """Per-learner and stacked reports plus ``comparison.csv`` from logit files and the meta model."""
    t0 = time.time()
    out = Path(out_dir)
    tr, va = _load_pair(train_csv or out / "logits" / "train.csv", val_csv or out / "logits" / "val.csv")
    meta_path = out / "meta" / "meta_model.json"
    if not meta_path.exists():
        raise CorpusError(f"missing meta model {meta_path}; run train-meta first")
    meta = MetaLearner.load(meta_path)
    names = _class_names(out)
    reports, rows = {}, []

    def add(name, tr_pred, tr_loss, va_pred, va_prob, va_loss):
        rep = metrics.classification_report(va.labels, va_pred, va_prob, names)
        reports[name] = rep
        write_atomic(out / "reports" / f"{name}.json", rep.to_json())
        write_atomic(out / "roc" / f"{name}.csv", metrics.roc_to_csv(metrics.roc_curve(va.labels, va_prob)))
        rows.append([name, rep.precision, rep.recall, rep.f1, float(np.mean(tr_pred == tr.labels)), tr_loss,
                     rep.accuracy, va_loss, rep.roc_auc])

    for lid in tr.learner_order:
        tl, vl = tr.block(lid), va.block(lid)
        add(lid, vit.argmax_logits(tl), vit.cross_entropy(tl, tr.labels), vit.argmax_logits(vl),
            vit.softmax(vl)[:, 1], vit.cross_entropy(vl, va.labels))
    tr_pred, tr_prob = meta.predict(tr.reorder(meta.learner_order))
    va_pred, va_prob = meta.predict(va.reorder(meta.learner_order))
    add(STACK_NAME, tr_pred, _binary_log_loss(tr.labels, tr_prob), va_pred, va_prob,
        _binary_log_loss(va.labels, va_prob))

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COMPARISON_COLUMNS)
    for r in rows:
        w.writerow([r[0]] + [f"{v:.6f}" for v in r[1:]])
    write_atomic(out / "comparison.csv", buf.getvalue())
    write_manifest(rc, names, out)
    _record_timing(out, "evaluate", time.time() - t0)
    return reports


def run_all(rc: RunConfig) -> dict:
    t0 = time.time()
    data = prepare_data(rc)
    train_base(rc, data)
    extract_logits(rc, ("train", "val"), data)
    train_meta(rc.output_dir, rc.meta, rc=rc)
    reports = evaluate(rc.output_dir, rc=rc)
    _record_timing(Path(rc.output_dir), "run-all", time.time() - t0)
    return reports


# ----------------------------------------------------------------- manifest

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def build_manifest(out_dir, rc: Optional[RunConfig] = None, class_names=("NonCancer", "Cancer")) -> dict:
    out = Path(out_dir)
    files = {}
    for p in sorted(out.rglob("*")):
        rel = p.relative_to(out).as_posix()
        if p.is_file() and rel not in (MANIFEST, TIMINGS) and not p.name.startswith("."):
            files[rel] = _sha256(p)
    learners = {}
    for h in sorted((out / "history").glob("*.csv")):
        hist = TrainHistory.from_csv(h.read_text())
        if len(hist):
            learners[h.stem] = {"best_epoch": hist.best_epoch + 1, "best_val_loss": hist.best_val_loss,
                                "best_val_accuracy": hist.val_accuracy[hist.best_epoch]}
    meta_metrics = None
    stack = out / "reports" / f"{STACK_NAME}.json"
    if stack.exists():
        rep = metrics.MetricsReport.load(stack)
        meta_metrics = {k: getattr(rep, k) for k in ("accuracy", "precision", "recall", "f1", "roc_auc")}
    return {
        "format": "ttstack-manifest/1",
        "config_checksum": rc.checksum if rc else None,
        "seed": rc.seed if rc else None,
        "class_names": list(class_names),
        "learners": learners,
        "meta_metrics": meta_metrics,
        "files": files,
    }


def write_manifest(rc: Optional[RunConfig], class_names, out_dir=None) -> dict:
    out = Path(out_dir if out_dir is not None else rc.output_dir)
    m = build_manifest(out, rc, class_names)
    if rc is None:
        # keep provenance recorded by earlier steps
        try:
            old = json.loads((out / MANIFEST).read_text())
            m["config_checksum"], m["seed"] = old.get("config_checksum"), old.get("seed")
        except (OSError, ValueError):
            pass
    write_atomic(out / MANIFEST, json.dumps(m, indent=2, sort_keys=True) + "\n")
    return m


def verify_manifest(out_dir) -> list:
    """Inventory entries whose file is missing or whose checksum differs."""
    out = Path(out_dir)
    m = json.loads((out / MANIFEST).read_text())
    return [rel for rel, digest in m["files"].items()
            if not (out / rel).is_file() or _sha256(out / rel) != digest]

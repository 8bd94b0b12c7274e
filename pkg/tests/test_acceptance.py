"""Exit criteria. Each test prints one PASS/FAIL line; run with ``pytest tests/test_acceptance.py -s``
or read them in the terminal summary (they are printed with capture disabled)."""
import csv
import itertools
import json
import shutil
import time

import numpy as np
import pytest

from golden import TABLE_ROWS, TRAIN_ACCURACY
from oracles import gd_logreg, random_logreg_problems
from ttstack import vit
from ttstack.cli import main
from ttstack.data import balance_by_upsampling, load_dataset, stratified_split
from ttstack.meta import compute_class_weights, fit_logreg
from ttstack.metrics import ConfusionMatrix, MetricsReport, accuracy, f1, precision, recall, roc_auc

HETERO_LEARNERS = """
learners[0].id = "vit_p8_d1_h2"
learners[0].patch_size = 8
learners[0].embed_dim = 32
learners[0].depth = 1
learners[0].num_heads = 2
learners[1].id = "vit_p4_d1_h4"
learners[1].patch_size = 4
learners[1].embed_dim = 16
learners[1].depth = 1
learners[1].num_heads = 4
learners[2].id = "vit_p16_d2_h4"
learners[2].patch_size = 16
learners[2].embed_dim = 32
learners[2].depth = 2
learners[2].num_heads = 4
"""


@pytest.fixture
def verdict(capsys):
    def emit(number, title, ok, detail=""):
        with capsys.disabled():
            print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'}  {title}  {detail}")
        assert ok, f"criterion {number} failed: {detail}"
    return emit


def run_config(path, corpus, epochs, learners):
    path.write_text(f'seed = 42\ncorpus = "{corpus}"\noutput_dir = "out"\n'
                    f"train.max_epochs = {epochs}\n" + learners)
    return path


def read_rows(path):
    with open(path, newline="") as fh:
        return {r["model"]: r for r in csv.DictReader(fh)}


# 1 ---------------------------------------------------------------------------

def test_c1_golden_metric_fidelity(verdict):
    bad = []
    for name, ((tp, fn, fp, tn), expected) in TABLE_ROWS.items():
        cm = ConfusionMatrix(tp=tp, fp=fp, tn=tn, fn=fn)
        got = tuple(round(m(cm), 6) for m in (precision, recall, f1, accuracy))
        if got != expected:
            bad.append((name, got, expected))
    verdict(1, "golden precision/recall/F1/val-accuracy from 7 confusion matrices (6 dp)", not bad,
            f"mismatches={bad}")


# 2 ---------------------------------------------------------------------------

def test_c2_class_weight_arithmetic(verdict):
    labels = [0] * 124 + [1] * 25
    w = compute_class_weights(labels)
    ok = abs(w[0] - 0.600806) < 1e-6 and abs(w[1] - 2.98) < 1e-6 and w[0] * 124 + w[1] * 25 == 149
    verdict(2, "balanced class weights for {0:124, 1:25}", ok, f"w={w.tolist()} sum={w[0] * 124 + w[1] * 25}")


# 3 ---------------------------------------------------------------------------

def test_c3_gradient_correctness(verdict):
    t0 = time.time()
    cfg = vit.ViTConfig(image_size=16, patch_size=4, embed_dim=8, depth=1, num_heads=2, seed=0)
    model = vit.init_model(cfg)
    r = np.random.default_rng(0)
    # O(1) weights keep every gradient entry well above finite-difference noise
    for k in model.params:
        model.params[k] += r.normal(0, 0.3, model.params[k].shape)
    x = r.uniform(-1, 1, (2, 1, 16, 16))
    y = np.array([0, 1])
    _, grads = vit.backward(model, x, y)
    h, worst, worst_name = 1e-4, 0.0, ""
    for name, a in model.params.items():
        for idx in np.ndindex(a.shape):
            orig = a[idx]
            a[idx] = orig + h
            lp = vit.cross_entropy(vit.forward(model, x), y)
            a[idx] = orig - h
            lm = vit.cross_entropy(vit.forward(model, x), y)
            a[idx] = orig
            num, ana = (lp - lm) / (2 * h), grads[name][idx]
            # denominator floor 1e-6: the key-bias gradient is identically zero
            err = abs(num - ana) / max(abs(num), abs(ana), 1e-6)
            if err > worst:
                worst, worst_name = err, f"{name}{list(idx)}"
    elapsed = time.time() - t0
    verdict(3, "analytic vs central-difference gradients, every parameter", worst < 1e-4 and elapsed < 10,
            f"max_rel_err={worst:.2e} at {worst_name}, {model.num_parameters} params, {elapsed:.1f}s")


# 4 ---------------------------------------------------------------------------

def pairwise_auc(y, s):
    pos = [b for a, b in zip(y, s) if a == 1]
    neg = [b for a, b in zip(y, s) if a == 0]
    return sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg) / (len(pos) * len(neg))


def test_c4_auc_oracle_equivalence(verdict):
    t0 = time.time()
    r = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(200):
        n = int(r.integers(2, 51))
        y = r.integers(0, 2, n)
        y[r.choice(n, 2, replace=False)] = [0, 1]
        s = r.integers(0, max(2, n // 3), n) / 7.0  # coarse grid forces ties
        worst = max(worst, abs(roc_auc(y, s) - pairwise_auc(y, s)))
    exhaustive = 0
    for n in range(2, 9):
        for labels in itertools.product((0, 1), repeat=n):
            if 0 < sum(labels) < n:
                s = r.integers(0, 3, n).astype(float)
                worst = max(worst, abs(roc_auc(labels, s) - pairwise_auc(labels, s)))
                exhaustive += 1
    elapsed = time.time() - t0
    verdict(4, "trapezoidal AUC == pairwise Mann-Whitney", worst <= 1e-12 and elapsed < 30,
            f"200 random + {exhaustive} exhaustive patterns, max_diff={worst:.1e}, {elapsed:.1f}s")


# 5 ---------------------------------------------------------------------------

@pytest.mark.slow
def test_c5_logreg_convexity(verdict):
    x, y = random_logreg_problems(20, n=20, d=4, seed=99)
    _, _, gd_obj, gd_gnorm = gd_logreg(x, y, lr=1e-3, steps=1_000_000)
    r = np.random.default_rng(5)
    worst_oracle = worst_restart = 0.0
    for i in range(20):
        base = fit_logreg(x[i], y[i])
        worst_oracle = max(worst_oracle, abs(base.objective - gd_obj[i]))
        for _ in range(5):
            m = fit_logreg(x[i], y[i], init=(r.normal(0, 3, 4), r.normal(0, 3)))
            worst_restart = max(worst_restart, abs(m.objective - base.objective))
    ok = worst_oracle < 1e-3 and worst_restart < 1e-6
    verdict(5, "logistic regression vs 1e6-step gradient descent, 5 restarts", ok,
            f"max|obj-gd|={worst_oracle:.1e} max|obj-restart|={worst_restart:.1e} "
            f"gd_grad_norm<={gd_gnorm.max():.1e}")


# 6 ---------------------------------------------------------------------------

@pytest.mark.slow
def test_c6_pipeline_determinism(verdict, tmp_path, synthetic_root):
    learners = HETERO_LEARNERS.split("learners[2]")[0]
    cfg = run_config(tmp_path / "run.cfg", synthetic_root, 2, learners)
    codes = [main(["-q", "run-all", "--config", str(cfg), "--seed", "42", "--output", str(tmp_path / d)])
             for d in ("a", "b")]
    ma, mb = ((tmp_path / d / "manifest.json").read_bytes() for d in ("a", "b"))
    files = json.loads(ma)["files"]
    kinds = {k.split("/")[0] for k in files}
    ok = codes == [0, 0] and ma == mb and {"checkpoints", "history", "logits", "reports"} <= kinds
    verdict(6, "run-all twice with seed 42 -> identical manifests", ok, f"{len(files)} files checksummed")


# 7 ---------------------------------------------------------------------------

def test_c7_stratification_and_balancing(verdict, synthetic_root):
    ds = load_dataset(synthetic_root)
    train, val = stratified_split(ds, 0.8, 42)
    before = val.class_counts
    bal = balance_by_upsampling(train, 42)
    implied = {name: acc * 992 for name, (_, acc) in TRAIN_ACCURACY.items()}
    ok = (ds.class_counts == {0: 620, 1: 125} and train.class_counts == {0: 496, 1: 100}
          and val.class_counts == {0: 124, 1: 25} and bal.class_counts == {0: 496, 1: 496} and len(bal) == 992
          and val.class_counts == before
          and all(abs(v - TRAIN_ACCURACY[k][0]) < 992 * 5e-7 for k, v in implied.items()))
    verdict(7, "620/125 -> train 496/100, val 124/25, balanced 992", ok,
            f"train={train.class_counts} val={val.class_counts} balanced={bal.class_counts} "
            f"implied_correct={ {k: round(v, 4) for k, v in implied.items()} }")


# 8 / 9 ------------------------------------------------------------------------

@pytest.fixture(scope="module")
def full_run(tmp_path_factory, synthetic_root):
    tmp = tmp_path_factory.mktemp("accept_run")
    cfg = run_config(tmp / "run.cfg", synthetic_root, 30, HETERO_LEARNERS)
    t0 = time.time()
    code = main(["-q", "run-all", "--config", str(cfg)])
    return code, tmp / "out", time.time() - t0


@pytest.mark.slow
def test_c8_stacking_benefit(verdict, full_run):
    code, out, elapsed = full_run
    rows = read_rows(out / "comparison.csv")
    stack = rows.pop("ttstack")
    best_single = max(float(r["val_acc"]) for r in rows.values())
    ok = (code == 0 and len(rows) == 3 and float(stack["val_acc"]) >= best_single - 0.01
          and float(stack["roc_auc"]) >= 0.99 and elapsed < 300)
    verdict(8, "3 heterogeneous learners x 30 epochs: stack acc >= best - 0.01, AUC >= 0.99", ok,
            f"stack_acc={stack['val_acc']} best_single={best_single:.6f} stack_auc={stack['roc_auc']} "
            f"runtime={elapsed:.0f}s")


@pytest.mark.slow
def test_c9_tier_separation(verdict, full_run, tmp_path):
    _, out, _ = full_run
    only_csv = tmp_path / "csv_only"
    shutil.copytree(out / "logits", only_csv / "logits")
    assert not (only_csv / "checkpoints").exists()
    codes = [main(["-q", verb, "--output", str(only_csv)]) for verb in ("train-meta", "evaluate")]
    rep = MetricsReport.load(only_csv / "reports" / "ttstack.json")
    fractions = [rep.accuracy, rep.precision, rep.recall, rep.f1, rep.roc_auc]
    ok = (codes == [0, 0] and rep.confusion.total == 149 and all(0 <= v <= 1 for v in fractions)
          and (only_csv / "comparison.csv").is_file())
    verdict(9, "train-meta + evaluate from logit CSVs only", ok, f"exit={codes} acc={rep.accuracy:.6f}")

"""
Metrics from confusion matrices
===============================

Recompute precision, recall, F1 and accuracy for seven reference
validation confusion matrices (149 images each), then draw a small ROC.
"""
import numpy as np

from ttstack.metrics import ConfusionMatrix, accuracy, f1, mann_whitney_auc, precision, recall, roc_auc, roc_curve

# (tp, fn, fp, tn) with Cancer as the positive class
tables = {
    "RepViT": (22, 3, 0, 124),
    "DaViT": (24, 1, 1, 123),
    "EfficientViT": (24, 1, 0, 124),
    "MobileViT": (24, 1, 6, 118),
    "FasterViT": (23, 2, 1, 123),
    "MViT": (24, 1, 1, 123),
    "PVT v2": (24, 1, 0, 124),
}
print("%-13s %9s %9s %9s %9s" % ("model", "precision", "recall", "f1", "accuracy"))
for name, (tp, fn, fp, tn) in tables.items():
    cm = ConfusionMatrix(tp=tp, fp=fp, tn=tn, fn=fn)
    print("%-13s %9.6f %9.6f %9.6f %9.6f" % (name, precision(cm), recall(cm), f1(cm), accuracy(cm)))

# ties in the scores move the ROC diagonally
y = np.array([0, 0, 1, 1, 0, 1, 0, 1])
s = np.array([0.1, 0.4, 0.4, 0.8, 0.2, 0.9, 0.6, 0.6])
for p in roc_curve(y, s):
    print("thr %5s  fpr %.2f  tpr %.2f" % (p.threshold, p.fpr, p.tpr))
print("auc %.4f  rank statistic %.4f" % (roc_auc(y, s), mann_whitney_auc(y, s)))

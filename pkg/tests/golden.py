"""Reference confusion matrices (validation split, 25 cancer / 124 non-cancer)
and the matching precision / recall / F1 / validation-accuracy table rows."""

# name: (tp, fn, fp, tn), (precision, recall, f1, val_accuracy)
TABLE_ROWS = {
    "RepViT": ((22, 3, 0, 124), (1.000000, 0.88, 0.936170, 0.979866)),
    "DaViT": ((24, 1, 1, 123), (0.960000, 0.96, 0.960000, 0.986577)),
    "EfficientViT": ((24, 1, 0, 124), (1.000000, 0.96, 0.979592, 0.993289)),
    "MobileViT": ((24, 1, 6, 118), (0.800000, 0.96, 0.872727, 0.953020)),
    "FasterViT": ((23, 2, 1, 123), (0.958333, 0.92, 0.938776, 0.979866)),
    "MViT": ((24, 1, 1, 123), (0.960000, 0.96, 0.960000, 0.986577)),
    "PVT v2": ((24, 1, 0, 124), (1.000000, 0.96, 0.979592, 0.993289)),
}

# training accuracies reported for RepViT and MobileViT on the balanced 992-image set
TRAIN_ACCURACY = {"RepViT": (990, 0.997984), "MobileViT": (989, 0.996976)}


def vectors(tp, fn, fp, tn):
    """Label / prediction vectors realising a confusion matrix."""
    y_true = [1] * (tp + fn) + [0] * (fp + tn)
    y_pred = [1] * tp + [0] * fn + [1] * fp + [0] * tn
    return y_true, y_pred

"""Classification and auditor-detection metrics."""

from __future__ import annotations

import math

import numpy as np


def accuracy(conf: np.ndarray) -> float:
    total = conf.sum()
    return float(np.trace(conf) / total) if total else 0.0


def class_accuracy(conf: np.ndarray, classes) -> float:
    """Accuracy restricted to rows (true labels) in ``classes``."""
    rows = np.asarray(list(classes), dtype=int)
    if rows.size == 0:
        return 0.0
    total = conf[rows].sum()
    return float(conf[rows, rows].sum() / total) if total else 0.0


def macro_f1(conf: np.ndarray) -> float:
    """Mean F1 over classes that occur in truth or predictions."""
    tp = np.diag(conf).astype(float)
    pred = conf.sum(axis=0)
    true = conf.sum(axis=1)
    present = (pred + true) > 0
    if not present.any():
        return 0.0
    denom = pred + true
    f1 = np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)
    return float(f1[present].mean())


def targeted_asr(conf: np.ndarray, source: int, target: int) -> float:
    """Fraction of ``source`` test rows predicted as ``target``."""
    total = conf[source].sum()
    return float(conf[source, target] / total) if total else 0.0


def untargeted_asr(acc_attacked: float, acc_clean: float) -> float:
    if acc_clean <= 0:
        return 0.0
    return max(0.0, (acc_clean - acc_attacked) / acc_clean)


def split_class_accuracy(conf: np.ndarray, source: int, target: int) -> tuple[float, float]:
    """(attack-class accuracy, benign-class accuracy).

    Binary confusion matrices report the per-class accuracy of class 1 and
    class 0.  Multi-class ones report accuracy on ``source`` rows and on rows
    of every class other than ``source`` and ``target``.
    """
    c = conf.shape[0]
    if c == 2:
        return class_accuracy(conf, [1]), class_accuracy(conf, [0])
    others = [k for k in range(c) if k not in (source, target)]
    return class_accuracy(conf, [source]), class_accuracy(conf, others)


def roc_curve(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    """(fpr, tpr) obtained by sweeping a threshold down through ``scores``.

    ``labels`` are 1 for positives (adversaries).  Tied scores move together.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    pos, neg = labels.sum(), (~labels).sum()
    if pos == 0 or neg == 0:
        raise ValueError("ROC needs at least one positive and one negative")
    order = np.argsort(-scores, kind="stable")
    s, l = scores[order], labels[order]
    # Last index of each run of tied scores.
    cut = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tp = np.cumsum(l)[cut]
    fp = np.cumsum(~l)[cut]
    return np.r_[0.0, fp / neg], np.r_[0.0, tp / pos]


def auc(fpr, tpr) -> float:
    fpr, tpr = np.asarray(fpr, float), np.asarray(tpr, float)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))


def roc_auc(scores, labels) -> float:
    try:
        return auc(*roc_curve(scores, labels))
    except ValueError:
        return math.nan

"""Confusion-matrix metrics, kappa, multiclass MCC, probability errors and ROC AUC.

Class indices are 0-based throughout (REBA class ``k`` is index ``k - 1``).
A metric whose denominator is zero is reported as 0 and its name is added
to the report's ``flags``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import rankdata

from .errors import ShapeError

N_CLASSES = 8
RATE_NAMES = ("precision", "recall", "f1", "specificity", "npv", "fpr", "fdr", "fnr")


def confusion(true_labels, predicted_labels, num_classes: int = N_CLASSES) -> np.ndarray:
    """Counts matrix, rows = true class, columns = predicted class."""
    t = np.asarray(true_labels, dtype=np.int64).reshape(-1)
    p = np.asarray(predicted_labels, dtype=np.int64).reshape(-1)
    if t.shape != p.shape:
        raise ShapeError(f"{t.size} true labels vs {p.size} predictions")
    for name, arr in (("true", t), ("predicted", p)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise ValueError(f"{name} labels must lie in 0..{num_classes - 1}")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (t, p), 1)
    return cm


def one_vs_rest_counts(cm: np.ndarray, c: int) -> tuple[int, int, int, int]:
    """(TP, TN, FP, FN) for class ``c`` against all others."""
    cm = np.asarray(cm)
    tp = int(cm[c, c])
    fn = int(cm[c, :].sum()) - tp
    fp = int(cm[:, c].sum()) - tp
    tn = int(cm.sum()) - tp - fn - fp
    return tp, tn, fp, fn


def _ratio(num: float, den: float, name: str, flags: set) -> float:
    if den == 0:
        flags.add(name)
        return 0.0
    return num / den


@dataclass
class BasicMetrics:
    precision: float
    recall: float
    f1: float
    specificity: float
    npv: float
    fpr: float
    fdr: float
    fnr: float
    flags: set = field(default_factory=set)


def basic_metrics(tp: int, tn: int, fp: int, fn: int) -> BasicMetrics:
    flags: set = set()
    precision = _ratio(tp, tp + fp, "precision", flags)
    recall = _ratio(tp, tp + fn, "recall", flags)
    f1 = _ratio(2 * precision * recall, precision + recall, "f1", flags)
    specificity = _ratio(tn, tn + fp, "specificity", flags)
    npv = _ratio(tn, tn + fn, "npv", flags)
    return BasicMetrics(
        precision=precision,
        recall=recall,
        f1=f1,
        specificity=specificity,
        npv=npv,
        fpr=1.0 - specificity,
        fdr=1.0 - precision,
        fnr=1.0 - recall,
        flags=flags,
    )


def accuracy(cm: np.ndarray) -> float:
    n = cm.sum()
    return float(np.trace(cm) / n) if n else 0.0


def cohen_kappa(cm: np.ndarray) -> float:
    cm = np.asarray(cm, dtype=np.float64)
    n = cm.sum()
    if n == 0:
        return 0.0
    p_o = np.trace(cm) / n
    p_e = float(cm.sum(axis=1) @ cm.sum(axis=0)) / (n * n)
    if p_e == 1.0:
        return 1.0 if p_o == 1.0 else 0.0
    return float((p_o - p_e) / (1.0 - p_e))


def mcc_multiclass(cm: np.ndarray) -> float:
    """Matthews correlation from the full confusion matrix (covariance form).

    On a 2x2 matrix this is the binary ``(TP*TN - FP*FN) / sqrt(...)``.
    A zero denominator (all truths or all predictions in one class) gives 0,
    the same value the binary form takes under the zero-denominator rule.
    """
    cm = np.asarray(cm, dtype=np.float64)
    s = cm.sum()
    c = np.trace(cm)
    t = cm.sum(axis=1)
    p = cm.sum(axis=0)
    num = c * s - float(t @ p)
    den = math.sqrt((s * s - float(p @ p)) * (s * s - float(t @ t)))
    return float(num / den) if den else 0.0


def _one_hot(labels, k: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    y = np.zeros((labels.size, k))
    y[np.arange(labels.size), labels] = 1.0
    return y


def prob_rmse(probs, labels) -> float:
    """``sqrt(mean_i ||p_i - y_i||_2^2)`` against one-hot targets."""
    probs = np.asarray(probs, dtype=np.float64)
    d = probs - _one_hot(labels, probs.shape[1])
    return float(np.sqrt(np.mean(np.sum(d * d, axis=1))))


def prob_mae(probs, labels) -> float:
    """``mean_i ||p_i - y_i||_1`` against one-hot targets."""
    probs = np.asarray(probs, dtype=np.float64)
    return float(np.mean(np.sum(np.abs(probs - _one_hot(labels, probs.shape[1])), axis=1)))


def prob_mae_per_element(probs, labels) -> float:
    """Mean absolute deviation averaged over all n * K probability entries."""
    probs = np.asarray(probs, dtype=np.float64)
    return float(np.mean(np.abs(probs - _one_hot(labels, probs.shape[1]))))


def prob_rmse_per_element(probs, labels) -> float:
    probs = np.asarray(probs, dtype=np.float64)
    return float(np.sqrt(np.mean((probs - _one_hot(labels, probs.shape[1])) ** 2)))


def roc_auc_ovr(probs, labels, c: int) -> Optional[float]:
    """Rank AUC of class-``c`` scores, one-vs-rest; ties count one half.

    Returns None when the labels contain no positives or no negatives.
    """
    scores = np.asarray(probs, dtype=np.float64)[:, c]
    pos = np.asarray(labels) == c
    n_pos = int(pos.sum())
    n_neg = pos.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class EvalReport:
    num_samples: int
    confusion: np.ndarray
    accuracy: float
    per_class: dict
    macro: dict
    cohen_kappa: float
    mcc: float
    prob_rmse: float
    prob_mae: float
    prob_rmse_per_element: float
    prob_mae_per_element: float
    auc: list
    macro_auc: float
    flags: list

    def to_json(self) -> dict:
        return {
            "num_samples": self.num_samples,
            "accuracy": self.accuracy,
            "cohen_kappa": self.cohen_kappa,
            "mcc": self.mcc,
            "prob_rmse": self.prob_rmse,
            "prob_mae": self.prob_mae,
            "prob_rmse_per_element": self.prob_rmse_per_element,
            "prob_mae_per_element": self.prob_mae_per_element,
            "macro": {k: self.macro[k] for k in RATE_NAMES},
            "macro_auc": self.macro_auc,
            "per_class": {
                name: [float(v) for v in self.per_class[name]] for name in RATE_NAMES
            },
            "auc": self.auc,
            "support": [int(v) for v in self.confusion.sum(axis=1)],
            "confusion": self.confusion.tolist(),
            "flags": self.flags,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2) + "\n"

    def to_text(self) -> str:
        k = self.confusion.shape[0]
        head = f"{'class':>7}" + "".join(f"{n:>12}" for n in RATE_NAMES) + f"{'auc':>10}{'support':>9}"
        lines = [head, "-" * len(head)]
        support = self.confusion.sum(axis=1)
        for c in range(k):
            auc = "n/a" if self.auc[c] is None else f"{self.auc[c]:.4f}"
            row = "".join(f"{self.per_class[n][c]:>12.4f}" for n in RATE_NAMES)
            lines.append(f"{c + 1:>7}{row}{auc:>10}{int(support[c]):>9}")
        lines.append("-" * len(head))
        macro = "".join(f"{self.macro[n]:>12.4f}" for n in RATE_NAMES)
        lines.append(f"{'average':>7}{macro}{self.macro_auc:>10.4f}{int(support.sum()):>9}")
        lines.append("")
        lines.append(f"accuracy      {self.accuracy:.4f}")
        lines.append(f"cohen kappa   {self.cohen_kappa:.4f}")
        lines.append(f"mcc           {self.mcc:.4f}")
        lines.append(f"prob rmse     {self.prob_rmse:.4f}  (per-element {self.prob_rmse_per_element:.4f})")
        lines.append(f"prob mae      {self.prob_mae:.4f}  (per-element {self.prob_mae_per_element:.4f})")
        if self.flags:
            lines.append("undefined metrics (rates reported as 0, AUC as n/a): " + ", ".join(self.flags))
        return "\n".join(lines) + "\n"


def evaluate_predictions(labels, probs, num_classes: int = N_CLASSES) -> EvalReport:
    """Build the full report from true labels and predicted probability rows."""
    labels = np.asarray(labels, dtype=np.int64)
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape != (labels.size, num_classes):
        raise ShapeError(f"probabilities must be [{labels.size}, {num_classes}], got {probs.shape}")
    cm = confusion(labels, probs.argmax(axis=1) if labels.size else labels, num_classes)
    per_class = {n: np.zeros(num_classes) for n in RATE_NAMES}
    flags = []
    for c in range(num_classes):
        m = basic_metrics(*one_vs_rest_counts(cm, c))
        for n in RATE_NAMES:
            per_class[n][c] = getattr(m, n)
        flags += [f"{n}[{c + 1}]" for n in sorted(m.flags)]
    auc = [roc_auc_ovr(probs, labels, c) for c in range(num_classes)] if labels.size else [None] * num_classes
    defined = [a for a in auc if a is not None]
    flags += [f"auc[{c + 1}]" for c, a in enumerate(auc) if a is None]
    if not labels.size:
        flags.append("empty")
    return EvalReport(
        num_samples=int(labels.size),
        confusion=cm,
        accuracy=accuracy(cm),
        per_class=per_class,
        macro={n: float(per_class[n].mean()) for n in RATE_NAMES},
        cohen_kappa=cohen_kappa(cm),
        mcc=mcc_multiclass(cm),
        prob_rmse=prob_rmse(probs, labels) if labels.size else 0.0,
        prob_mae=prob_mae(probs, labels) if labels.size else 0.0,
        prob_rmse_per_element=prob_rmse_per_element(probs, labels) if labels.size else 0.0,
        prob_mae_per_element=prob_mae_per_element(probs, labels) if labels.size else 0.0,
        auc=auc,
        macro_auc=float(np.mean(defined)) if defined else 0.0,
        flags=flags,
    )

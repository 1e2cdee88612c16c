"""
Evaluation over the k known classes plus the augmented class
============================================================
Accuracy, macro-F1 and one-vs-rest macro-AUC, reported together with the
per-class breakdown and the confusion matrix.
"""

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn import metrics

from pllac.errors import DataError, ShapeError
from pllac.model import predict_proba

logger = logging.getLogger(__name__)


@dataclass
class EvalReport:
    accuracy: float
    macro_f1: float
    macro_auc: float
    per_class_f1: list = field(default_factory=list)
    per_class_recall: list = field(default_factory=list)
    per_class_auc: list = field(default_factory=list)   # None where the class was skipped
    confusion: list = field(default_factory=list)       # rows = truth, columns = prediction

    def to_dict(self):
        return asdict(self)

    @property
    def ac_recall(self):
        return self.per_class_recall[-1]


def predict(params, features):
    """argmax over the k+1 probabilities; np.argmax resolves ties to the lowest index."""
    return np.argmax(predict_proba(params, features), axis=1)


def _check_pair(pred, truth):
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape:
        raise ShapeError(f"{len(pred)} predictions for {len(truth)} labels")
    if len(truth) == 0:
        raise DataError("cannot evaluate an empty test set")
    return pred, truth


def confusion_matrix(pred, truth, class_count):
    pred, truth = _check_pair(pred, truth)
    return metrics.confusion_matrix(truth, pred, labels=np.arange(class_count))


def accuracy(pred, truth):
    pred, truth = _check_pair(pred, truth)
    return float(metrics.accuracy_score(truth, pred))


def per_class_f1(pred, truth, class_count):
    """F1 per class, with 0/0 taken as 0."""
    pred, truth = _check_pair(pred, truth)
    return metrics.f1_score(truth, pred, labels=np.arange(class_count), average=None, zero_division=0)


def macro_f1(pred, truth, class_count):
    """Unweighted mean of per-class F1 over the classes present in truth."""
    present = np.unique(np.asarray(truth, dtype=np.int64))
    return float(per_class_f1(pred, truth, class_count)[present].mean())


def per_class_auc(prob_matrix, truth, class_count):
    """One-vs-rest AUC per class; None for a class with no positives or no negatives."""
    prob_matrix = np.asarray(prob_matrix, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.int64)
    if prob_matrix.shape != (len(truth), class_count):
        raise ShapeError(f"score matrix must be {(len(truth), class_count)}, got {prob_matrix.shape}")

    aucs = []
    for c in range(class_count):
        positive = truth == c
        if positive.all() or not positive.any():
            aucs.append(None)
            continue
        aucs.append(float(metrics.roc_auc_score(positive, prob_matrix[:, c])))
    return aucs


def macro_auc(prob_matrix, truth, class_count):
    aucs = [a for a in per_class_auc(prob_matrix, truth, class_count) if a is not None]
    if not aucs:
        raise DataError("every class lacks positives or negatives; AUC undefined")
    return float(np.mean(aucs))


def evaluate_scores(scores, truth, pred=None):
    """EvalReport from a score matrix; predictions default to its argmax."""
    scores = np.asarray(scores, dtype=np.float64)
    class_count = scores.shape[1]
    if pred is None:
        pred = np.argmax(scores, axis=1)
    labels = np.arange(class_count)
    matrix = confusion_matrix(pred, truth, class_count)
    f1 = per_class_f1(pred, truth, class_count)
    recall = metrics.recall_score(truth, pred, labels=labels, average=None, zero_division=0)
    present = matrix.sum(axis=1) > 0
    aucs = per_class_auc(scores, truth, class_count)
    known = [a for a in aucs if a is not None]
    if not known:
        raise DataError("every class lacks positives or negatives; AUC undefined")

    report = EvalReport(
        accuracy=accuracy(pred, truth),
        macro_f1=float(f1[present].mean()),
        macro_auc=float(np.mean(known)),
        per_class_f1=f1.tolist(),
        per_class_recall=recall.tolist(),
        per_class_auc=aucs,
        confusion=matrix.tolist(),
    )
    logger.debug(f"Evaluation: acc={report.accuracy:.4f} f1={report.macro_f1:.4f} auc={report.macro_auc:.4f}")
    return report


def evaluate(params, features, truth):
    return evaluate_scores(predict_proba(params, features), truth)

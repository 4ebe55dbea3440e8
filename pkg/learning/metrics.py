"""
Evaluation metrics: micro / macro F1 for multi-label predictions, overall
pixel accuracy for segmentation maps.

"""

import numpy as np
from sklearn.metrics import accuracy_score, f1_score

from .enums import Task

THRESHOLD = 0.5


def binarize(probabilities, threshold: float = THRESHOLD) -> np.ndarray:
    return (np.asarray(probabilities) >= threshold).astype(np.int64)


def multilabel_scores(targets, predictions) -> dict:
    """
    F1 over binary indicator matrices. Classes with no positives in either
    targets or predictions score 0.

    Returns:
        dict: {"micro_f1": float, "macro_f1": float}

    """
    targets = np.asarray(targets, dtype=np.int64)
    predictions = np.asarray(predictions, dtype=np.int64)
    if targets.shape != predictions.shape or targets.ndim != 2:
        raise ValueError(f"Cannot score predictions {predictions.shape} against {targets.shape}.")
    return {
        "micro_f1": float(f1_score(targets, predictions, average="micro", zero_division=0)),
        "macro_f1": float(f1_score(targets, predictions, average="macro", zero_division=0)),
    }


def overall_accuracy(targets, predictions) -> float:
    targets = np.asarray(targets).reshape(-1)
    predictions = np.asarray(predictions).reshape(-1)
    if targets.shape != predictions.shape:
        raise ValueError(f"Cannot score {predictions.size} pixels against {targets.size}.")
    return float(accuracy_score(targets, predictions))


def score(task: Task, targets, predictions) -> dict:
    """
    All metrics of a task, keyed by name.

    """
    if task is Task.SEGMENTATION:
        return {"overall_accuracy": overall_accuracy(targets, predictions)}
    return multilabel_scores(targets, predictions)


def headline_metric(task: Task) -> str:
    """
    The metric runs are selected and compared by.

    """
    return "overall_accuracy" if task is Task.SEGMENTATION else "macro_f1"

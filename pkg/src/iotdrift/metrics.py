"""Accuracy, device-set F1 and comparison helpers."""
from __future__ import annotations

from typing import Collection, Mapping

import numpy as np

DAY_TIE_TOLERANCE = 1e-12


class NoAccepted(ValueError):
    """No accepted prediction to score."""


def macro_accuracy(predicted, true, accepted=None) -> float:
    """Mean per-class hit rate over accepted predictions.

    A flow counts towards its true class; classes with no accepted flow are
    left out of the mean.
    """
    predicted = np.asarray(predicted)
    true = np.asarray(true)
    if accepted is not None:
        keep = np.asarray(accepted, dtype=bool)
        predicted, true = predicted[keep], true[keep]
    if len(true) == 0:
        raise NoAccepted("no accepted predictions")
    classes, inverse = np.unique(true, return_inverse=True)
    hits = np.bincount(inverse, weights=(predicted == true).astype(np.float64), minlength=len(classes))
    totals = np.bincount(inverse, minlength=len(classes))
    return float(np.mean(hits / totals))


def set_f1(predicted: Collection, true: Collection) -> tuple[float, float, float]:
    """Precision, recall and F1 of a predicted device set against the true set.

    An empty prediction has precision 1 by convention.
    """
    predicted, true = set(predicted), set(true)
    if not true:
        raise ValueError("true device set is empty")
    hit = len(predicted & true)
    precision = hit / len(predicted) if predicted else 1.0
    recall = hit / len(true)
    if precision + recall == 0:
        return precision, recall, 0.0
    return precision, recall, 2 * precision * recall / (precision + recall)


def ratio_to_ideal(selected: float, ideal: float) -> float:
    if ideal == 0:
        raise ZeroDivisionError("ideal metric is zero")
    return selected / ideal


def compare_days(
    dynamic: Mapping[int, float], static: Mapping[int, float], tol: float = DAY_TIE_TOLERANCE
) -> tuple[int, int, int]:
    """(wins, losses, ties) of ``dynamic`` over ``static`` on shared days."""
    wins = losses = ties = 0
    for day in sorted(set(dynamic) & set(static)):
        delta = dynamic[day] - static[day]
        if abs(delta) <= tol:
            ties += 1
        elif delta > 0:
            wins += 1
        else:
            losses += 1
    return wins, losses, ties

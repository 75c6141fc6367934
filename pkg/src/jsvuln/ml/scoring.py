"""Confusion-matrix counts and the IR metrics derived from them."""

from __future__ import annotations

import math

import numpy as np


def confusion(y_true, y_pred) -> tuple[int, int, int, int]:
    """Return (tp, fp, tn, fn) with label 1 as the positive class."""
    t = np.asarray(y_true).astype(bool)
    p = np.asarray(y_pred).astype(bool)
    return (
        int(np.sum(t & p)),
        int(np.sum(~t & p)),
        int(np.sum(~t & ~p)),
        int(np.sum(t & ~p)),
    )


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def precision(tp, fp, tn, fn) -> float:
    return _ratio(tp, tp + fp)


def recall(tp, fp, tn, fn) -> float:
    return _ratio(tp, tp + fn)


def f_measure(tp, fp, tn, fn) -> float:
    p, r = precision(tp, fp, tn, fn), recall(tp, fp, tn, fn)
    return _ratio(2 * p * r, p + r)


def mcc(tp, fp, tn, fn) -> float:
    den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if den == 0:
        return 0.0
    return (tp * tn - fp * fn) / math.sqrt(den)

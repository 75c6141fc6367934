"""k-nearest neighbours with Euclidean distance."""

from __future__ import annotations

import numpy as np
from scipy.spatial.distance import cdist

_CHUNK = 512


def fit_knn(X: np.ndarray, y: np.ndarray, params: dict) -> dict:
    k = params["k"]
    if k > len(y):
        raise ValueError(f"k={k} exceeds the {len(y)} training rows")
    return {"k": k, "X": X.copy(), "y": y.copy()}


def neighbours(train_X: np.ndarray, X: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k nearest training rows; equal distances keep the lower index."""
    out = np.empty((X.shape[0], k), dtype=int)
    for lo in range(0, X.shape[0], _CHUNK):
        d = cdist(X[lo : lo + _CHUNK], train_X, "sqeuclidean")
        out[lo : lo + _CHUNK] = _k_smallest(d, k)
    return out


def _k_smallest(d: np.ndarray, k: int) -> np.ndarray:
    """Row-wise indices of the k smallest entries, ordered by (value, index)."""
    if k >= d.shape[1]:
        return np.argsort(d, axis=1, kind="stable")[:, :k]
    part = np.argpartition(d, k - 1, axis=1)[:, :k]
    vals = np.take_along_axis(d, part, axis=1)
    kth = vals.max(axis=1, keepdims=True)
    # rows where the k-th distance is shared beyond the cut need a full stable sort
    crowded = np.count_nonzero(d <= kth, axis=1) > k
    order = np.lexsort((part, vals), axis=1) if part.size else part
    out = np.take_along_axis(part, order, axis=1)
    if crowded.any():
        out[crowded] = np.argsort(d[crowded], axis=1, kind="stable")[:, :k]
    return out


def predict_knn(state: dict, X: np.ndarray) -> np.ndarray:
    train_X = np.asarray(state["X"], dtype=float)
    train_y = np.asarray(state["y"], dtype=int)
    k = int(state["k"])
    labels = train_y[neighbours(train_X, X, k)]
    pos = labels.sum(axis=1)
    out = (2 * pos > k).astype(int)
    # an even split goes to the nearest neighbour's label
    tie = 2 * pos == k
    out[tie] = labels[tie, 0]
    return out

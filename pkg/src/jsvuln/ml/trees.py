"""CART decision trees (Gini impurity) and bootstrap random forests."""

from __future__ import annotations

import math

import numpy as np


def gini(pos: np.ndarray, n: np.ndarray) -> np.ndarray:
    p = np.divide(pos, n, out=np.zeros_like(pos, dtype=float), where=n > 0)
    return 2.0 * p * (1.0 - p)


def best_split(X: np.ndarray, y: np.ndarray, features: np.ndarray):
    """Best (feature, threshold, impurity) over ``features``, or None.

    Ties keep the earliest feature in ``features`` and the lowest threshold.
    """
    n = len(y)
    parent = gini(np.array([y.sum()], float), np.array([n], float))[0]
    cols = X[:, features]
    order = np.argsort(cols, axis=0, kind="stable")
    xs = np.take_along_axis(cols, order, axis=0)
    ys = y[order]
    left_pos = np.cumsum(ys, axis=0)[:-1].astype(float)
    left_n = np.arange(1, n, dtype=float)[:, None]
    right_pos = ys.sum(axis=0)[None, :] - left_pos
    right_n = n - left_n
    impurity = (left_n * gini(left_pos, left_n) + right_n * gini(right_pos, right_n)) / n
    valid = xs[:-1] < xs[1:]
    impurity = np.where(valid, impurity, np.inf)
    # column-major argmin so the first feature wins ties
    flat = np.argmin(impurity.T)
    f_pos, row = divmod(int(flat), n - 1)
    best = impurity[row, f_pos]
    if not np.isfinite(best) or best >= parent - 1e-12:
        return None
    lo, hi = xs[row, f_pos], xs[row + 1, f_pos]
    threshold = lo + (hi - lo) / 2.0
    if not threshold < hi:
        threshold = lo
    return int(features[f_pos]), float(threshold), float(best)


def fit_tree(X, y, max_depth, min_samples_split, max_features, rng) -> dict:
    """Grow a binary tree; ``max_features`` random features per split (None = all)."""
    n_features = X.shape[1]
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(y[idx].mean()))
        return len(feature) - 1

    root_idx = np.arange(len(y))
    stack = [(new_node(root_idx), root_idx, 0)]
    while stack:
        node, idx, depth = stack.pop()
        n = len(idx)
        pos = int(y[idx].sum())
        if (max_depth is not None and depth >= max_depth) or n < min_samples_split or pos in (0, n) or n < 2:
            continue
        if max_features is None or max_features >= n_features:
            feats = np.arange(n_features)
        else:
            feats = np.sort(rng.choice(n_features, size=max_features, replace=False))
        split = best_split(X[idx], y[idx], feats)
        if split is None:
            continue
        f, thr, _ = split
        go_left = X[idx, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        feature[node] = f
        threshold[node] = thr
        left[node] = new_node(li)
        right[node] = new_node(ri)
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))
    return {
        "feature": np.array(feature, dtype=int),
        "threshold": np.array(threshold, dtype=float),
        "left": np.array(left, dtype=int),
        "right": np.array(right, dtype=int),
        "value": np.array(value, dtype=float),
    }


def tree_depth(state: dict) -> int:
    left, right = np.asarray(state["left"]), np.asarray(state["right"])

    def depth(node):
        if left[node] < 0:
            return 0
        return 1 + max(depth(left[node]), depth(right[node]))

    return depth(0)


def tree_proba(state: dict, X: np.ndarray) -> np.ndarray:
    feature = np.asarray(state["feature"], dtype=int)
    threshold = np.asarray(state["threshold"], dtype=float)
    left = np.asarray(state["left"], dtype=int)
    right = np.asarray(state["right"], dtype=int)
    value = np.asarray(state["value"], dtype=float)
    node = np.zeros(X.shape[0], dtype=int)
    active = feature[node] >= 0
    while active.any():
        rows = np.nonzero(active)[0]
        cur = node[rows]
        go_left = X[rows, feature[cur]] <= threshold[cur]
        node[rows] = np.where(go_left, left[cur], right[cur])
        active = feature[node] >= 0
    return value[node]


def forest_max_features(n_features: int) -> int:
    return max(1, int(math.isqrt(n_features)))


def fit_forest(X, y, params: dict, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    n = len(y)
    max_features = forest_max_features(X.shape[1])
    trees = []
    for _ in range(params["n_trees"]):
        boot = rng.integers(0, n, size=n)
        tree_rng = np.random.default_rng(int(rng.integers(2**32)))
        trees.append(
            fit_tree(X[boot], y[boot], params["max_depth"], params["min_samples_split"], max_features, tree_rng)
        )
    return {"trees": trees}


def forest_votes(state: dict, X: np.ndarray) -> np.ndarray:
    return np.sum([tree_proba(t, X) > 0.5 for t in state["trees"]], axis=0)


def predict_forest(state: dict, X: np.ndarray) -> np.ndarray:
    votes = forest_votes(state, X)
    return (2 * votes > len(state["trees"])).astype(int)

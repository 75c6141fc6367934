"""Gaussian naive Bayes."""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp


def fit_bayes(X: np.ndarray, y: np.ndarray, params: dict) -> dict:
    eps = params["var_smoothing"] * float(np.max(X.var(axis=0), initial=0.0))
    priors, means, variances = [], [], []
    for cls in (0, 1):
        rows = X[y == cls]
        priors.append(len(rows) / len(y))
        if len(rows):
            means.append(rows.mean(axis=0))
            variances.append(rows.var(axis=0) + eps)
        else:
            means.append(np.zeros(X.shape[1]))
            variances.append(np.ones(X.shape[1]))
    var = np.array(variances)
    # all-constant data: keep the likelihood finite
    var[var <= 0] = 1.0
    return {"prior": np.array(priors), "mean": np.array(means), "var": var}


def joint_log_likelihood(state: dict, X: np.ndarray) -> np.ndarray:
    prior = np.asarray(state["prior"], float)
    mean = np.asarray(state["mean"], float)
    var = np.asarray(state["var"], float)
    with np.errstate(divide="ignore"):
        log_prior = np.log(prior)
    out = np.empty((X.shape[0], 2))
    for cls in (0, 1):
        ll = -0.5 * np.sum(np.log(2.0 * np.pi * var[cls])) - 0.5 * np.sum((X - mean[cls]) ** 2 / var[cls], axis=1)
        out[:, cls] = log_prior[cls] + ll
    return out


def posterior(state: dict, X: np.ndarray) -> np.ndarray:
    jll = joint_log_likelihood(state, X)
    return np.exp(jll - logsumexp(jll, axis=1, keepdims=True))

"""Linear models: logistic regression, least squares and a linear SVM."""

from __future__ import annotations

import logging

import numpy as np
from scipy.special import expit as sigmoid

logger = logging.getLogger(__name__)


def logistic_loss_grad(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray, l2: float):
    """Mean cross-entropy plus (l2/2)*||w||^2, and its gradient in (w, b)."""
    z = X @ w + b
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * (w @ w))
    r = (sigmoid(z) - y) / len(y)
    return loss, X.T @ r + l2 * w, float(r.sum())


def fit_logistic(X, y, params: dict, warnings: list[str]) -> dict:
    w = np.zeros(X.shape[1])
    b = 0.0
    lr, l2, tol = params["lr"], params["l2"], params["tol"]
    best = (np.inf, w.copy(), b)
    converged = False
    for _ in range(params["max_iter"]):
        loss, gw, gb = logistic_loss_grad(w, b, X, y, l2)
        if loss < best[0]:
            best = (loss, w.copy(), b)
        if np.sqrt(gw @ gw + gb * gb) < tol:
            converged = True
            break
        w = w - lr * gw
        b = b - lr * gb
    else:
        loss, _, _ = logistic_loss_grad(w, b, X, y, l2)
        if loss < best[0]:
            best = (loss, w.copy(), b)
    if not converged:
        logger.debug("logistic regression stopped after %d iterations", params["max_iter"])
        warnings.append("logistic regression did not converge; returning the lowest-loss iterate")
    return {"w": best[1], "b": best[2], "converged": converged}


def fit_linear(X, y, params: dict) -> dict:
    """Least squares on 0/1 targets via the normal equations."""
    Xa = np.hstack([X, np.ones((X.shape[0], 1))])
    gram = Xa.T @ Xa
    jitter = np.full(Xa.shape[1], params["ridge"])
    jitter[-1] = 0.0
    gram[np.diag_indices_from(gram)] += jitter
    try:
        beta = np.linalg.solve(gram, Xa.T @ y)
    except np.linalg.LinAlgError:
        beta = np.linalg.lstsq(Xa, y, rcond=None)[0]
    return {"w": beta[:-1], "b": float(beta[-1])}


def fit_svm(X, y, params: dict, seed: int) -> dict:
    """Linear soft-margin SVM by averaged mini-batch subgradient descent.

    Minimizes mean hinge loss + ||w||^2 / (2 * C * n), i.e. the usual
    C-weighted primal divided by C * n.
    """
    rng = np.random.default_rng(seed)
    n, d = X.shape
    t = np.where(y == 1, 1.0, -1.0)
    reg = 1.0 / (params["C"] * n)
    w = np.zeros(d)
    b = 0.0
    w_avg = np.zeros(d)
    b_avg = 0.0
    step = 0
    bs = params["batch_size"]
    for _ in range(params["epochs"]):
        order = rng.permutation(n)
        for lo in range(0, n, bs):
            batch = order[lo : lo + bs]
            Xb, tb = X[batch], t[batch]
            active = tb * (Xb @ w + b) < 1.0
            gw = reg * w - (Xb[active].T @ tb[active]) / len(batch)
            gb = -tb[active].sum() / len(batch)
            step += 1
            eta = params["lr"] / np.sqrt(step)
            w = w - eta * gw
            b = b - eta * gb
            w_avg += (w - w_avg) / step
            b_avg += (b - b_avg) / step
    return {"w": w_avg, "b": float(b_avg)}


def svm_objective(w, b, X, y, C) -> float:
    t = np.where(y == 1, 1.0, -1.0)
    return float(np.mean(np.maximum(0.0, 1.0 - t * (X @ w + b))) + (w @ w) / (2.0 * C * len(y)))


def predict_linear_model(algo: str, state: dict, X: np.ndarray) -> np.ndarray:
    w = np.asarray(state["w"], dtype=float)
    score = X @ w + float(state["b"])
    if algo == "linear":
        return (score >= 0.5).astype(int)
    return (score > 0.0).astype(int)

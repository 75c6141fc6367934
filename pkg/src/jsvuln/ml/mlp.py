"""Multilayer perceptrons: fixed-epoch training and the adaptive-rate variant.

Hidden layers use ReLU, the output unit a sigmoid; the loss is mean binary
cross-entropy, minimized with plain mini-batch gradient descent.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from jsvuln.ml.scoring import confusion, f_measure


def init_params(n_in: int, hidden: list[int], rng: np.random.Generator) -> list[tuple[np.ndarray, np.ndarray]]:
    sizes = [n_in, *hidden, 1]
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        W = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
        params.append((W, np.zeros(fan_out)))
    return params


def forward(params, X):
    """Return the output logits and the per-layer activations/pre-activations."""
    acts = [X]
    pres = []
    h = X
    for W, b in params[:-1]:
        a = h @ W + b
        pres.append(a)
        h = np.maximum(a, 0.0)
        acts.append(h)
    W, b = params[-1]
    return (h @ W + b)[:, 0], acts, pres


def loss_and_grads(params, X, y):
    """Mean cross-entropy and its gradient for every (W, b)."""
    z, acts, pres = forward(params, X)
    n = len(y)
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
    delta = ((expit(z) - y) / n)[:, None]
    grads = [None] * len(params)
    for layer in range(len(params) - 1, -1, -1):
        W, _ = params[layer]
        grads[layer] = (acts[layer].T @ delta, delta.sum(axis=0))
        if layer > 0:
            delta = (delta @ W.T) * (pres[layer - 1] > 0)
    return loss, grads


def sgd_epoch(params, X, y, lr: float, batch_size: int, rng: np.random.Generator):
    params = [(W.copy(), b.copy()) for W, b in params]
    order = rng.permutation(len(y))
    for lo in range(0, len(y), batch_size):
        batch = order[lo : lo + batch_size]
        _, grads = loss_and_grads(params, X[batch], y[batch])
        params = [(W - lr * gW, b - lr * gb) for (W, b), (gW, gb) in zip(params, grads)]
    return params


def mlp_predict_params(params, X) -> np.ndarray:
    return (forward(params, X)[0] > 0.0).astype(int)


def _to_state(params, extra=None) -> dict:
    state = {"weights": [W for W, _ in params], "biases": [b for _, b in params]}
    state.update(extra or {})
    return state


def _from_state(state):
    return [(np.asarray(W, float), np.asarray(b, float)) for W, b in zip(state["weights"], state["biases"])]


def predict_mlp(state: dict, X) -> np.ndarray:
    return mlp_predict_params(_from_state(state), X)


def fit_dnn_s(X, y, params: dict, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    net = init_params(X.shape[1], list(params["hidden"]), rng)
    for _ in range(params["epochs"]):
        net = sgd_epoch(net, X, y, params["lr"], params["batch_size"], rng)
    return _to_state(net)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    lr: float
    score: float
    improved: bool
    misses: int


def adaptive_schedule(state, run_epoch, evaluate, lr: float, max_misses: int = 4, max_epochs: int = 100):
    """Train with checkpoint/restore and learning-rate halving.

    After each epoch the state is scored. A better score becomes the new
    checkpoint; anything else is a miss: training resumes from the
    checkpoint at half the learning rate. Stops after ``max_misses``
    consecutive misses (or ``max_epochs``) and returns the checkpoint, the
    per-epoch history and the final learning rate.
    """
    best_state = copy.deepcopy(state)
    best_score = -np.inf
    misses = 0
    history: list[EpochRecord] = []
    epoch = 0
    while misses < max_misses and epoch < max_epochs:
        epoch += 1
        used_lr = lr
        state = run_epoch(state, used_lr)
        score = evaluate(state)
        if score > best_score:
            best_state, best_score = copy.deepcopy(state), score
            misses = 0
            history.append(EpochRecord(epoch, used_lr, score, True, misses))
        else:
            misses += 1
            state = copy.deepcopy(best_state)
            lr = lr / 2.0
            history.append(EpochRecord(epoch, used_lr, score, False, misses))
    return best_state, history, lr


def fit_dnn_c(X, y, X_dev, y_dev, params: dict, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    net = init_params(X.shape[1], list(params["hidden"]), rng)

    def run_epoch(p, lr):
        return sgd_epoch(p, X, y, lr, params["batch_size"], rng)

    def evaluate(p):
        return f_measure(*confusion(y_dev, mlp_predict_params(p, X_dev)))

    best, history, final_lr = adaptive_schedule(
        net, run_epoch, evaluate, params["lr"], params["max_misses"], params["max_epochs"]
    )
    return _to_state(
        best,
        {
            "history": [[r.epoch, r.lr, r.score, r.improved] for r in history],
            "final_lr": final_lr,
        },
    )

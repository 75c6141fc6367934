"""Common train/predict interface over the from-scratch classifiers."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

FORMAT_VERSION = 1

ALGORITHMS = ("dnn_s", "dnn_c", "knn", "tree", "svm", "forest", "logistic", "linear", "bayes", "zeror")

# Hyper-parameters each algorithm accepts, with their defaults.
DEFAULTS: dict[str, dict] = {
    "knn": {"k": 5},
    "tree": {"max_depth": None, "min_samples_split": 2},
    "forest": {"n_trees": 50, "max_depth": None, "min_samples_split": 2},
    "bayes": {"var_smoothing": 1e-9},
    "logistic": {"l2": 0.0, "lr": 0.5, "max_iter": 500, "tol": 1e-6},
    "linear": {"ridge": 1e-8},
    "svm": {"C": 1.0, "lr": 0.1, "epochs": 20, "batch_size": 64},
    "dnn_s": {"hidden": [32], "lr": 0.1, "epochs": 20, "batch_size": 64},
    "dnn_c": {"hidden": [32], "lr": 0.1, "batch_size": 64, "max_epochs": 100, "max_misses": 4},
    "zeror": {},
}

STANDARDIZED = frozenset({"knn", "svm", "logistic", "linear", "dnn_s", "dnn_c"})

_POSITIVE_INT = {"k", "min_samples_split", "n_trees", "max_iter", "epochs", "batch_size", "max_epochs", "max_misses"}
_POSITIVE_REAL = {"lr", "C", "tol"}
_NONNEG_REAL = {"l2", "ridge", "var_smoothing"}


class HyperparameterError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    algorithm: str
    hyperparams: dict = field(default_factory=dict)

    def __post_init__(self):
        validate_spec(self)

    def resolved(self) -> dict:
        params = dict(DEFAULTS[self.algorithm])
        params.update(self.hyperparams)
        return params

    def to_json(self) -> dict:
        return {"algorithm": self.algorithm, "hyperparams": dict(sorted(self.hyperparams.items()))}

    def label(self) -> str:
        return json.dumps(self.hyperparams, sort_keys=True)


def validate_spec(spec: ModelSpec) -> None:
    if spec.algorithm not in DEFAULTS:
        raise HyperparameterError(f"unknown algorithm {spec.algorithm!r}")
    allowed = DEFAULTS[spec.algorithm]
    for key, value in spec.hyperparams.items():
        if key not in allowed:
            raise HyperparameterError(f"{spec.algorithm} has no hyper-parameter {key!r}")
        if key in _POSITIVE_INT and not (isinstance(value, int) and not isinstance(value, bool) and value > 0):
            raise HyperparameterError(f"{key} must be a positive integer, got {value!r}")
        if key in _POSITIVE_REAL and not (isinstance(value, (int, float)) and value > 0):
            raise HyperparameterError(f"{key} must be positive, got {value!r}")
        if key in _NONNEG_REAL and not (isinstance(value, (int, float)) and value >= 0):
            raise HyperparameterError(f"{key} must be non-negative, got {value!r}")
        if key == "max_depth" and value is not None and not (isinstance(value, int) and value > 0):
            raise HyperparameterError(f"max_depth must be a positive integer or null, got {value!r}")
        if key == "hidden" and not (
            isinstance(value, (list, tuple)) and value and all(isinstance(h, int) and h > 0 for h in value)
        ):
            raise HyperparameterError(f"hidden must be a non-empty list of layer widths, got {value!r}")


@dataclass(frozen=True)
class Scaler:
    mean: np.ndarray
    std: np.ndarray

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        live = self.std > 0
        out = np.zeros_like(X)
        out[:, live] = (X[:, live] - self.mean[live]) / self.std[live]
        return out


def standardize(X: np.ndarray) -> Scaler:
    """Z-score parameters from training rows; zero-variance columns map to 0."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("cannot standardize an empty matrix")
    if X.shape[0] < 2:
        raise ValueError("standardization needs at least two rows")
    return Scaler(X.mean(axis=0), X.std(axis=0))


@dataclass
class TrainedModel:
    spec: ModelSpec
    state: dict
    n_features: int
    scaler: Scaler | None = None
    warnings: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "spec": self.spec.to_json(),
            "n_features": self.n_features,
            "scaler": None if self.scaler is None else {"mean": self.scaler.mean, "std": self.scaler.std},
            "state": self.state,
            "warnings": self.warnings,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, default=_jsonable)

    @classmethod
    def loads(cls, text: str) -> TrainedModel:
        data = json.loads(text)
        if data.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model format {data.get('format_version')!r}")
        spec = ModelSpec(data["spec"]["algorithm"], data["spec"]["hyperparams"])
        scaler = None
        if data["scaler"] is not None:
            scaler = Scaler(np.asarray(data["scaler"]["mean"], float), np.asarray(data["scaler"]["std"], float))
        return cls(spec, data["state"], data["n_features"], scaler, data.get("warnings", []))


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _check_xy(X, y=None):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("feature matrix must be a non-empty 2-D array")
    if not np.all(np.isfinite(X)):
        raise ValueError("feature matrix contains non-finite values")
    if y is None:
        return X
    y = np.asarray(y).astype(int)
    if y.shape != (X.shape[0],):
        raise ValueError("labels must have one entry per row")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    return X, y


def train(spec: ModelSpec, X, y, seed: int = 0, dev: tuple | None = None) -> TrainedModel:
    """Fit ``spec`` on (X, y). ``dev`` = (X_dev, y_dev) is required by dnn_c."""
    from jsvuln.ml import bayes, linear, mlp, neighbors, trees

    X, y = _check_xy(X, y)
    params = spec.resolved()
    scaler = None
    if spec.algorithm in STANDARDIZED:
        scaler = standardize(X)
        X = scaler.transform(X)
        if dev is not None:
            dev = (scaler.transform(_check_xy(dev[0])), np.asarray(dev[1]).astype(int))
    warnings: list[str] = []
    algo = spec.algorithm
    if algo == "zeror":
        state = {"label": 1}
    elif algo == "knn":
        state = neighbors.fit_knn(X, y, params)
    elif algo == "tree":
        state = trees.fit_tree(X, y, params["max_depth"], params["min_samples_split"], None, np.random.default_rng(seed))
    elif algo == "forest":
        state = trees.fit_forest(X, y, params, seed)
    elif algo == "bayes":
        state = bayes.fit_bayes(X, y, params)
    elif algo == "logistic":
        state = linear.fit_logistic(X, y, params, warnings)
    elif algo == "linear":
        state = linear.fit_linear(X, y, params)
    elif algo == "svm":
        state = linear.fit_svm(X, y, params, seed)
    elif algo == "dnn_s":
        state = mlp.fit_dnn_s(X, y, params, seed)
    elif algo == "dnn_c":
        if dev is None:
            raise ValueError("dnn_c needs a dev set")
        state = mlp.fit_dnn_c(X, y, dev[0], dev[1], params, seed)
    else:  # pragma: no cover - guarded by validate_spec
        raise HyperparameterError(algo)
    return TrainedModel(spec, state, X.shape[1], scaler, warnings)


def predict(model: TrainedModel, X) -> np.ndarray:
    from jsvuln.ml import bayes, linear, mlp, neighbors, trees

    X = _check_xy(X)
    if X.shape[1] != model.n_features:
        raise ValueError(f"model expects {model.n_features} features, got {X.shape[1]}")
    if model.scaler is not None:
        X = model.scaler.transform(X)
    algo = model.spec.algorithm
    state = model.state
    if algo == "zeror":
        return np.ones(X.shape[0], dtype=int)
    if algo == "knn":
        return neighbors.predict_knn(state, X)
    if algo == "tree":
        return (trees.tree_proba(state, X) > 0.5).astype(int)
    if algo == "forest":
        return trees.predict_forest(state, X)
    if algo == "bayes":
        return (bayes.posterior(state, X)[:, 1] > 0.5).astype(int)
    if algo in ("logistic", "linear", "svm"):
        return linear.predict_linear_model(algo, state, X)
    return mlp.predict_mlp(state, X)

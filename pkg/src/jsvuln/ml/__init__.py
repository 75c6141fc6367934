"""From-scratch binary classifiers behind one train/predict interface."""

from jsvuln.ml.core import ALGORITHMS, DEFAULTS, HyperparameterError, ModelSpec, TrainedModel, predict, train

__all__ = ["ALGORITHMS", "DEFAULTS", "HyperparameterError", "ModelSpec", "TrainedModel", "predict", "train"]

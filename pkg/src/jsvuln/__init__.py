"""Vulnerable-function datasets for JavaScript projects and the classifiers trained on them."""

__version__ = "0.1.0"

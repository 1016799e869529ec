"""Perturbation probing of language-model representations."""

__version__ = "0.1.0"

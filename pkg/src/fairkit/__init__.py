"""Fairness optimisation toolkit: adversarial debiasing, latent augmentation, ITA, metrics."""

__version__ = "0.1.0"

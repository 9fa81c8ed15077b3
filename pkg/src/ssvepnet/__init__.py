"""SSVEP classification workbench: synthetic data, filtering, Riemannian
features, classical baselines and SCU convolutional networks."""

__version__ = "0.1.0"

"""Full-batch HMC for Bayesian neural networks, with approximate-inference baselines."""

__version__ = "0.1.0"

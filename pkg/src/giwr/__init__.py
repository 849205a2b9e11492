"""Offline RL laboratory: generalized importance-weighted regression agents,
proposal distributions, in-repo environments, dataset tooling, and exact
tabular oracles, on a self-contained float64 autodiff core."""

__version__ = "0.1.0"

"""Bayesian inference on the number of components of a Gaussian mixture."""

from kmix.priors import (
    Geometric,
    KPrior,
    LossBased,
    LossBasedFinite,
    LossBasedFixedRate,
    TruncatedPoisson,
    UniformK,
    elicit_beta,
    parse_prior,
)

__version__ = "0.1.0"

"""Gaussian component families and their prior machinery.

Two families are supported:

* ``ConjugateNormalGamma``: per-dimension Normal-Gamma prior on (mean,
  precision) with closed-form cluster marginal likelihoods, used by the
  collapsed sampler and the exact enumeration oracle.
* ``RichardsonGreenModel``: univariate semi-conjugate prior with independent
  Normal mean and Gamma precision, a Gamma hyperprior on the shared rate b,
  and data-dependent hyperparameters; runs on the instantiated-parameter
  sampler path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ConjugateNormalGamma",
    "RichardsonGreenModel",
    "ClusterStats",
    "FlatModel",
    "log_marginal",
    "log_predictive",
    "gibbs_update_params",
    "gibbs_update_b",
    "data_dependent_hyperparams",
]

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True, eq=False)
class ConjugateNormalGamma:
    """Per-dimension conjugate prior: lambda ~ Gamma(a, b), mu | lambda ~ N(m0, (w lambda)^-1).

    Dimensions are independent and share (w, a, b); m0 may vary per dimension.
    """

    dim: int = 1
    m0: np.ndarray = 0.0
    w: float = 1.0
    a: float = 1.0
    b: float = 1.0

    def __post_init__(self):
        if self.dim < 1 or int(self.dim) != self.dim:
            raise ValueError(f"dim must be an integer >= 1, got {self.dim}")
        m0 = np.broadcast_to(np.asarray(self.m0, dtype=float), (self.dim,)).copy()
        m0.setflags(write=False)
        object.__setattr__(self, "m0", m0)
        for name in ("w", "a", "b"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0.0):
                raise ValueError(f"{name} must be positive and finite, got {v}")


@dataclass
class RichardsonGreenModel:
    """Univariate semi-conjugate prior with a random shared precision rate.

    mu_j ~ N(mu0, sigma0^2), lambda_j ~ Gamma(a, b), b ~ Gamma(a0, b0), with
    a = 2, a0 = 0.2 and b0 = 10/sigma0^2 fixed by convention. The field ``b``
    is chain hyperstate: samplers update it in place on their own copy.
    """

    mu0: float
    sigma0: float
    b: float
    a: float = field(default=2.0, init=False)
    a0: float = field(default=0.2, init=False)
    b0: float = field(init=False)

    def __post_init__(self):
        if not (math.isfinite(self.sigma0) and self.sigma0 > 0.0):
            raise ValueError(f"sigma0 must be positive, got {self.sigma0}")
        if not (math.isfinite(self.b) and self.b > 0.0):
            raise ValueError(f"b must be positive, got {self.b}")
        self.b0 = 10.0 / self.sigma0**2

    @property
    def dim(self) -> int:
        return 1

    def sample_b_prior(self, rng: np.random.Generator) -> float:
        return float(rng.gamma(self.a0, 1.0 / self.b0))


def data_dependent_hyperparams(data, rng: np.random.Generator) -> RichardsonGreenModel:
    """Construct the semi-conjugate model with range-based hyperparameters.

    mu0 = (max + min)/2, sigma0 = max - min, b0 = 10/sigma0^2; the initial
    rate b is drawn from its Gamma(a0, b0) prior.
    """
    x = np.asarray(data, dtype=float).ravel()
    if x.size < 2:
        raise ValueError("need at least two observations to set range-based hyperparameters")
    lo, hi = float(x.min()), float(x.max())
    if hi <= lo:
        raise ValueError(
            "degenerate data range (all observations identical); jitter the data "
            "or use the conjugate model"
        )
    mu0 = (hi + lo) / 2.0
    sigma0 = hi - lo
    b0 = 10.0 / sigma0**2
    b = float(rng.gamma(0.2, 1.0 / b0))
    return RichardsonGreenModel(mu0=mu0, sigma0=sigma0, b=b)


class FlatModel:
    """Constant-likelihood stand-in: every cluster has marginal likelihood 1.

    Running a chain with it recovers the prior partition law, which is how
    the prior-recovery checks exercise the sampler's prior machinery alone.
    """

    def __init__(self, dim: int = 1):
        self.dim = dim


class ClusterStats:
    """Count, per-dimension sums and sums of squares of one cluster.

    Accumulation is centered on the first inserted point to control
    cancellation for large observation magnitudes. When the count returns to
    zero all internal state resets exactly, so rebuilding a cluster by
    inserting the same points in the same order reproduces bitwise-identical
    sums. The optional (mu, lam) slots carry instantiated parameters on the
    semi-conjugate path.
    """

    __slots__ = ("dim", "n", "_shift", "_sum", "_sumsq", "mu", "lam")

    def __init__(self, dim: int = 1):
        self.dim = dim
        self.n = 0
        self._shift = np.zeros(dim)
        self._sum = np.zeros(dim)
        self._sumsq = np.zeros(dim)
        self.mu = None
        self.lam = None

    @classmethod
    def from_points(cls, points) -> "ClusterStats":
        points = np.atleast_2d(np.asarray(points, dtype=float))
        stats = cls(points.shape[1])
        for row in points:
            stats.insert(row)
        return stats

    def insert(self, x) -> None:
        x = np.asarray(x, dtype=float).reshape(self.dim)
        if self.n == 0:
            self._shift = x.copy()
        self.n += 1
        d = x - self._shift
        self._sum += d
        self._sumsq += d * d

    def remove(self, x) -> None:
        if self.n < 1:
            raise ValueError("cannot remove from an empty cluster")
        x = np.asarray(x, dtype=float).reshape(self.dim)
        self.n -= 1
        if self.n == 0:
            self._shift[:] = 0.0
            self._sum[:] = 0.0
            self._sumsq[:] = 0.0
            return
        d = x - self._shift
        self._sum -= d
        self._sumsq -= d * d

    def mean(self) -> np.ndarray:
        assert self.n > 0
        return self._shift + self._sum / self.n

    def ssd(self) -> np.ndarray:
        """Per-dimension sum of squared deviations about the cluster mean."""
        assert self.n > 0
        return np.maximum(self._sumsq - self._sum**2 / self.n, 0.0)

    def copy(self) -> "ClusterStats":
        out = ClusterStats(self.dim)
        out.n = self.n
        out._shift = self._shift.copy()
        out._sum = self._sum.copy()
        out._sumsq = self._sumsq.copy()
        out.mu = self.mu
        out.lam = self.lam
        return out


def _posterior_params(model: ConjugateNormalGamma, n, mean, ssd):
    """Per-dimension Normal-Gamma posterior (w_n, m_n, a_n, b_n) after n points."""
    w_n = model.w + n
    if n == 0:
        return w_n, model.m0, model.a, np.broadcast_to(model.b, (model.dim,))
    m_n = (model.w * model.m0 + n * mean) / w_n
    a_n = model.a + 0.5 * n
    b_n = model.b + 0.5 * ssd + 0.5 * (n * model.w / w_n) * (mean - model.m0) ** 2
    return w_n, m_n, a_n, b_n


def log_marginal(model: ConjugateNormalGamma, stats: ClusterStats) -> float:
    """Log marginal likelihood of a cluster under the conjugate model.

    Closed form of the integral of the Gaussian likelihood against the
    Normal-Gamma prior, taken as a product over independent dimensions.
    """
    if isinstance(model, FlatModel):
        return 0.0
    assert stats.n >= 1, "log_marginal requires a nonempty cluster"
    n = stats.n
    w_n, _, a_n, b_n = _posterior_params(model, n, stats.mean(), stats.ssd())
    per_dim = (
        -0.5 * n * _LOG_2PI
        + 0.5 * (math.log(model.w) - math.log(w_n))
        + math.lgamma(a_n)
        - math.lgamma(model.a)
        + model.a * math.log(model.b)
        - a_n * np.log(b_n)
    )
    value = float(np.sum(per_dim))
    assert math.isfinite(value)
    return value


def log_predictive(model: ConjugateNormalGamma, stats: ClusterStats | None, x) -> float:
    """Log density of the posterior-predictive Student-t at x.

    Equals log_marginal(stats + {x}) - log_marginal(stats) but is computed
    directly from the posterior parameters; an empty or None stats gives the
    prior predictive.
    """
    if isinstance(model, FlatModel):
        return 0.0
    x = np.asarray(x, dtype=float).reshape(model.dim)
    if stats is None or stats.n == 0:
        w_n, m_n, a_n, b_n = _posterior_params(model, 0, None, None)
    else:
        w_n, m_n, a_n, b_n = _posterior_params(model, stats.n, stats.mean(), stats.ssd())
    nu = 2.0 * a_n
    q = 2.0 * b_n * (w_n + 1.0) / w_n  # = nu * squared scale of the predictive t
    per_dim = (
        math.lgamma(0.5 * (nu + 1.0))
        - math.lgamma(0.5 * nu)
        - 0.5 * (math.log(math.pi) + np.log(q))
        - 0.5 * (nu + 1.0) * np.log1p((x - m_n) ** 2 / q)
    )
    return float(np.sum(per_dim))


def mu_conditional_params(model: RichardsonGreenModel, stats: ClusterStats, lam: float):
    """Mean and variance of the full conditional of a cluster mean."""
    prec = lam * stats.n + 1.0 / model.sigma0**2
    mean = (lam * stats.n * float(stats.mean()[0]) + model.mu0 / model.sigma0**2) / prec
    return mean, 1.0 / prec

def lam_conditional_params(model: RichardsonGreenModel, stats: ClusterStats, mu: float):
    """Shape and rate of the full conditional of a cluster precision."""
    if stats.n == 0:
        return model.a, model.b
    sq = float(stats.ssd()[0]) + stats.n * (float(stats.mean()[0]) - mu) ** 2
    return model.a + 0.5 * stats.n, model.b + 0.5 * sq


def gibbs_update_params(model: RichardsonGreenModel, stats: ClusterStats, rng: np.random.Generator):
    """One Gibbs scan of a cluster's (mu, lam) on the semi-conjugate path.

    Draws mu from its Normal full conditional at the current lam, then lam
    from its Gamma full conditional at the new mu. Requires stats.lam set
    (or draws a fresh prior lam for an empty auxiliary cluster).
    """
    lam = stats.lam if stats.lam is not None else float(rng.gamma(model.a, 1.0 / model.b))
    if stats.n == 0:
        mu = float(rng.normal(model.mu0, model.sigma0))
        lam = float(rng.gamma(model.a, 1.0 / model.b))
    else:
        mean, var = mu_conditional_params(model, stats, lam)
        mu = float(rng.normal(mean, math.sqrt(var)))
        shape, rate = lam_conditional_params(model, stats, mu)
        lam = float(rng.gamma(shape, 1.0 / rate))
    stats.mu, stats.lam = mu, lam
    return mu, lam


def b_conditional_params(model: RichardsonGreenModel, lams):
    """Shape and rate of the full conditional of the shared rate b."""
    lams = np.asarray(lams, dtype=float)
    return model.a0 + lams.size * model.a, model.b0 + float(lams.sum())


def gibbs_update_b(model: RichardsonGreenModel, lams, rng: np.random.Generator) -> float:
    """Draw the shared rate b from its Gamma full conditional and store it."""
    shape, rate = b_conditional_params(model, lams)
    model.b = float(rng.gamma(shape, 1.0 / rate))
    return model.b

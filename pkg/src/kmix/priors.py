"""Priors on the number of mixture components k.

Every prior lives on the positive integers, either all of {1, 2, ...} or a
finite range {1, ..., K}. The central family is the beta-geometric prior
obtained by penalising model complexity at rate c and mixing p = exp(-c)
over a Beta(alpha, beta) hyperprior; alpha = beta = 1 gives the default
pmf 1/(k(k+1)).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.special import betaln, gammaln

__all__ = [
    "KPrior",
    "LossBased",
    "LossBasedFixedRate",
    "LossBasedFinite",
    "UniformK",
    "TruncatedPoisson",
    "Geometric",
    "PriorMoments",
    "PmfVector",
    "QuadratureError",
    "PriorSpecError",
    "conditional_geometric_pmf",
    "finite_support_pmf",
    "elicit_beta",
    "parse_prior",
]

_LOG_TINY = math.log(np.finfo(float).tiny)


class QuadratureError(ArithmeticError):
    """Raised when adaptive quadrature cannot meet the requested tolerance."""

    def __init__(self, message, achieved_error):
        super().__init__(f"{message} (achieved error estimate {achieved_error:.3e})")
        self.achieved_error = achieved_error


@dataclass(frozen=True)
class PriorMoments:
    """Prior mean and variance of k, with None marking an undefined moment."""

    mean: float | None
    variance: float | None


@dataclass(frozen=True)
class PmfVector:
    """Prefix P(1..k_max) of a pmf together with an upper bound on the missing tail."""

    probs: np.ndarray
    k_max: int
    tail_bound: float


def conditional_geometric_pmf(k: int, p: float) -> float:
    """pmf p^(k-1) (1-p) of the geometric law on {1, 2, ...}.

    This is the complexity prior at a fixed penalty rate c = -log(p).
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie strictly in (0, 1), got {p}")
    k = _check_k(k)
    return p ** (k - 1) * (1.0 - p)


def elicit_beta(target_mean: float, alpha: float) -> float:
    """Solve for beta so the beta-geometric prior has the requested mean.

    Inverts mean = (alpha + beta - 1)/(alpha - 1); requires alpha > 1 and a
    mean above the lower bound 1 that any prior on {1, 2, ...} must exceed.
    """
    if alpha <= 1.0:
        raise ValueError(f"alpha must exceed 1 for the mean to exist, got {alpha}")
    if target_mean <= 1.0:
        raise ValueError(f"prior mean on k >= 1 cannot be <= 1, got {target_mean}")
    return (target_mean - 1.0) * (alpha - 1.0)


def _check_k(k) -> int:
    if not float(k).is_integer():
        raise ValueError(f"k must be an integer, got {k!r}")
    k = int(k)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return k


def _check_positive(name, value) -> float:
    value = float(value)
    if not math.isfinite(value) or value <= 0.0:
        raise ValueError(f"{name} must be a positive finite real, got {value}")
    return value


class KPrior:
    """Common interface of all priors on the number of components.

    Instances are immutable after construction and safe to share; sampling
    takes a caller-owned numpy Generator.
    """

    #: largest supported k, or None for infinite support
    support_max: int | None = None

    def log_pmf(self, k: int) -> float:
        k = _check_k(k)
        if self.support_max is not None and k > self.support_max:
            raise ValueError(f"k={k} outside support 1..{self.support_max}")
        return float(self._log_pmf_array(np.array([k], dtype=float))[0])

    def pmf(self, k: int) -> float:
        return math.exp(self.log_pmf(k))

    def _log_pmf_array(self, k: np.ndarray) -> np.ndarray:
        """Vectorised log pmf on a float array of valid in-support k."""
        raise NotImplementedError

    def tail_mass(self, k_max: int) -> float:
        """Exact mass (or a tight analytic bound) of {k > k_max}."""
        raise NotImplementedError

    def moments(self) -> PriorMoments:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size: int | None = None):
        """Draw k from the prior; returns an int for size=None, else an int array."""
        raise NotImplementedError

    def pmf_vector(self, tail_epsilon: float) -> PmfVector:
        """P(1..k_max) where the mass beyond k_max is at most tail_epsilon."""
        if not 0.0 < tail_epsilon < 1.0:
            raise ValueError("tail_epsilon must lie in (0, 1)")
        k_max = self._tail_cutoff(tail_epsilon)
        ks = np.arange(1, k_max + 1, dtype=float)
        return PmfVector(np.exp(self._log_pmf_array(ks)), k_max, self.tail_mass(k_max))

    def _tail_cutoff(self, eps: float) -> int:
        if self.support_max is not None:
            return self.support_max
        # doubling then bisection on the analytic tail
        hi = 1
        while self.tail_mass(hi) > eps:
            hi *= 2
            if hi > 10**15:
                raise RuntimeError("tail cutoff search diverged")
        lo = hi // 2
        while lo + 1 < hi:
            mid = (lo + hi) // 2
            if self.tail_mass(mid) > eps:
                lo = mid
            else:
                hi = mid
        return hi

    def spec_string(self) -> str:
        raise NotImplementedError

    def cache_key(self) -> tuple:
        """Hashable identity used to memoise derived tables."""
        raise NotImplementedError

    def _summation_moments(self) -> PriorMoments:
        """Mean/variance by direct summation with an explicit tail bound."""
        k_max = self._tail_cutoff(1e-13)
        while True:
            bound = self._weighted_tail_bound(k_max)
            if bound <= 1e-12:
                break
            k_max *= 2
        ks = np.arange(1, k_max + 1, dtype=float)
        p = np.exp(self._log_pmf_array(ks))
        m1 = float(np.dot(ks, p))
        m2 = float(np.dot(ks * ks, p))
        var = m2 - m1 * m1
        return PriorMoments(m1, var)

    def _weighted_tail_bound(self, k_max: int) -> float:
        """Upper bound on sum_{k > k_max} k^2 P(k); inf if not yet geometric."""
        raise NotImplementedError


@dataclass(frozen=True)
class LossBased(KPrior):
    """Beta-geometric prior: p ~ Beta(alpha, beta), k | p geometric on {1, 2, ...}.

    P(k) = B(alpha + 1, k + beta - 1) / B(alpha, beta); the default
    alpha = beta = 1 reduces to P(k) = 1/(k (k + 1)).
    """

    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        _check_positive("alpha", self.alpha)
        _check_positive("beta", self.beta)

    @property
    def _log_norm(self) -> float:
        # log Gamma(a+b) + log Gamma(a+1) - log Gamma(a) - log Gamma(b)
        a, b = self.alpha, self.beta
        return math.lgamma(a + b) + math.lgamma(a + 1.0) - math.lgamma(a) - math.lgamma(b)

    def _log_pmf_array(self, k):
        a, b = self.alpha, self.beta
        return self._log_norm + gammaln(k + b - 1.0) - gammaln(k + a + b)

    def log_tail_mass(self, k_max: int) -> float:
        # telescoping of the gamma ratios: sum_{k>K} P(k) = C Gamma(K+b) / (a Gamma(K+a+b))
        a, b = self.alpha, self.beta
        K = float(k_max)
        return self._log_norm + math.lgamma(K + b) - math.log(a) - math.lgamma(K + a + b)

    def tail_mass(self, k_max):
        return math.exp(self.log_tail_mass(k_max))

    def moments(self):
        a, b = self.alpha, self.beta
        mean = (a + b - 1.0) / (a - 1.0) if a > 1.0 else None
        var = a * b * (a + b - 1.0) / ((a - 2.0) * (a - 1.0) ** 2) if a > 2.0 else None
        return PriorMoments(mean, var)

    def sample(self, rng, size=None):
        # mixing density is proportional to p^(beta-1) (1-p)^(alpha-1), the
        # orientation under which the marginal pmf and moment formulas hold
        p = rng.beta(self.beta, self.alpha, size=size)
        # guard against p rounding to 1.0 (rate of success 1-p must stay positive)
        q = np.maximum(1.0 - p, np.finfo(float).tiny)
        draw = rng.geometric(q)
        return draw if size is not None else int(draw)

    def spec_string(self):
        if self.alpha == 1.0 and self.beta == 1.0:
            return "lossbased-default"
        return f"lossbased({self.alpha:g},{self.beta:g})"

    def cache_key(self):
        return ("lossbased", self.alpha, self.beta)


@dataclass(frozen=True)
class LossBasedFixedRate(KPrior):
    """Complexity prior at a fixed penalty rate c: geometric with p = exp(-c)."""

    c: float

    def __post_init__(self):
        _check_positive("c", self.c)

    @property
    def p(self) -> float:
        return math.exp(-self.c)

    def _log_pmf_array(self, k):
        # log p = -c exactly, log(1-p) via expm1 for small c
        return -(k - 1.0) * self.c + math.log(-math.expm1(-self.c))

    def tail_mass(self, k_max):
        return math.exp(-self.c * k_max)

    def moments(self):
        return self._summation_moments()

    def _weighted_tail_bound(self, k_max):
        p = self.p
        r = p * (1.0 + 1.0 / (k_max + 1.0)) ** 2
        if r >= 1.0:
            return math.inf
        lead = (k_max + 1.0) ** 2 * p**k_max * (1.0 - p)
        return lead / (1.0 - r)

    def sample(self, rng, size=None):
        draw = rng.geometric(-math.expm1(-self.c), size=size)
        return draw if size is not None else int(draw)

    def spec_string(self):
        return f"geometric({self.p:.17g})"

    def cache_key(self):
        return ("geometric", self.p)


@dataclass(frozen=True)
class Geometric(KPrior):
    """Geometric prior on {1, 2, ...} with pmf p^(k-1) (1-p)."""

    p: float

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise ValueError(f"p must lie strictly in (0, 1), got {self.p}")

    def _log_pmf_array(self, k):
        return (k - 1.0) * math.log(self.p) + math.log1p(-self.p)

    def tail_mass(self, k_max):
        return self.p**k_max

    def moments(self):
        return self._summation_moments()

    _weighted_tail_bound = LossBasedFixedRate._weighted_tail_bound

    def sample(self, rng, size=None):
        draw = rng.geometric(1.0 - self.p, size=size)
        return draw if size is not None else int(draw)

    def spec_string(self):
        return f"geometric({self.p:g})"

    def cache_key(self):
        return ("geometric", self.p)


@dataclass(frozen=True)
class TruncatedPoisson(KPrior):
    """Poisson(lambda) conditioned on k >= 1."""

    lam: float

    def __post_init__(self):
        _check_positive("lambda", self.lam)

    @property
    def _log_renorm(self) -> float:
        # log(1 - exp(-lambda))
        return math.log(-math.expm1(-self.lam))

    def _log_pmf_array(self, k):
        return k * math.log(self.lam) - gammaln(k + 1.0) - self.lam - self._log_renorm

    def tail_mass(self, k_max):
        from scipy.stats import poisson

        return float(poisson.sf(k_max, self.lam)) / -math.expm1(-self.lam)

    def moments(self):
        return self._summation_moments()

    def _weighted_tail_bound(self, k_max):
        r = self.lam / (k_max + 2.0) * (1.0 + 1.0 / (k_max + 1.0)) ** 2
        if r >= 1.0:
            return math.inf
        lead = (k_max + 1.0) ** 2 * math.exp(self._log_pmf_array(np.array([k_max + 1.0]))[0])
        return lead / (1.0 - r)

    def sample(self, rng, size=None):
        if size is None:
            while True:
                k = int(rng.poisson(self.lam))
                if k >= 1:
                    return k
        out = rng.poisson(self.lam, size=size)
        while True:
            bad = out < 1
            n_bad = int(bad.sum())
            if n_bad == 0:
                return out
            out[bad] = rng.poisson(self.lam, size=n_bad)

    def spec_string(self):
        return f"poisson({self.lam:g})"

    def cache_key(self):
        return ("poisson", self.lam)


@dataclass(frozen=True)
class UniformK(KPrior):
    """Uniform prior over {1, ..., K}."""

    K: int

    def __post_init__(self):
        if int(self.K) != self.K or self.K < 1:
            raise ValueError(f"K must be an integer >= 1, got {self.K}")
        object.__setattr__(self, "K", int(self.K))

    @property
    def support_max(self):
        return self.K

    def _log_pmf_array(self, k):
        return np.full_like(k, -math.log(self.K), dtype=float)

    def tail_mass(self, k_max):
        return max(0, self.K - k_max) / self.K

    def moments(self):
        K = self.K
        return PriorMoments((K + 1.0) / 2.0, (K * K - 1.0) / 12.0 if K > 1 else 0.0)

    def sample(self, rng, size=None):
        draw = rng.integers(1, self.K + 1, size=size)
        return draw if size is not None else int(draw)

    def spec_string(self):
        return f"uniform({self.K})"

    def cache_key(self):
        return ("uniform", self.K)


def _truncated_geometric_factor(p: float, K: int) -> float:
    """(1 - p)/(1 - p^K), extended by its limit 1/K at p = 1."""
    if p <= 0.0:
        return 1.0
    denom = -math.expm1(K * math.log(p))
    if denom <= 0.0:
        return 1.0 / K
    return (1.0 - p) / denom


def finite_support_pmf(alpha: float, beta: float, K: int, k: int, tol: float = 1e-10) -> float:
    """P(k) for the complexity prior restricted to {1..K} and beta-mixed over p.

    Evaluates int_0^1 pi(p) p^(k-1) (1-p)/(1-p^K) dp by adaptive quadrature,
    with pi the same mixing density the infinite-support prior uses
    (proportional to p^(beta-1) (1-p)^(alpha-1)), so that K -> infinity
    recovers the infinite-support pmf pointwise. The density's endpoint
    behaviour goes into the quadrature weight so the remaining factor is
    smooth, with the removable point at p = 1 taking its limit value 1/K.
    """
    alpha = _check_positive("alpha", alpha)
    beta = _check_positive("beta", beta)
    if int(K) != K or K < 1:
        raise ValueError(f"K must be an integer >= 1, got {K}")
    k = _check_k(k)
    if k > K:
        raise ValueError(f"k={k} outside support 1..{K}")
    if K == 1:
        return 1.0
    log_b = betaln(alpha, beta)

    def smooth_part(p):
        return math.exp((k - 1) * math.log(p) - log_b) * _truncated_geometric_factor(p, K) if p > 0.0 else (0.0 if k > 1 else math.exp(-log_b))

    value, abserr = quad(smooth_part, 0.0, 1.0, weight="alg", wvar=(beta - 1.0, alpha - 1.0), epsabs=tol / 10.0, epsrel=1e-12, limit=200)
    if abserr > tol:
        raise QuadratureError(f"finite-support pmf quadrature failed for alpha={alpha}, beta={beta}, K={K}, k={k}", abserr)
    return value


@dataclass(frozen=True)
class LossBasedFinite(KPrior):
    """Beta-mixed complexity prior with finite support {1, ..., K}.

    The pmf has no closed form; values come from one-dimensional quadrature
    and are cached per instance.
    """

    alpha: float
    beta: float
    K: int
    _pmf_cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        _check_positive("alpha", self.alpha)
        _check_positive("beta", self.beta)
        if int(self.K) != self.K or self.K < 1:
            raise ValueError(f"K must be an integer >= 1, got {self.K}")
        object.__setattr__(self, "K", int(self.K))

    @property
    def support_max(self):
        return self.K

    def _pmf_one(self, k: int) -> float:
        if k not in self._pmf_cache:
            self._pmf_cache[k] = finite_support_pmf(self.alpha, self.beta, self.K, k)
        return self._pmf_cache[k]

    def _log_pmf_array(self, k):
        return np.array([math.log(self._pmf_one(int(ki))) for ki in np.atleast_1d(k)], dtype=float)

    def tail_mass(self, k_max):
        if k_max >= self.K:
            return 0.0
        return sum(self._pmf_one(k) for k in range(k_max + 1, self.K + 1))

    def moments(self):
        ks = np.arange(1, self.K + 1, dtype=float)
        p = np.exp(self._log_pmf_array(ks))
        m1 = float(np.dot(ks, p))
        var = float(np.dot(ks * ks, p)) - m1 * m1
        return PriorMoments(m1, var)

    def sample(self, rng, size=None):
        scalar = size is None
        p = np.atleast_1d(rng.beta(self.alpha, self.beta, size=size))
        u = np.atleast_1d(rng.random(size=size))
        draws = np.empty(p.shape, dtype=np.int64)
        for i, (pi, ui) in enumerate(zip(p, u)):
            draws[i] = self._inverse_truncated_geometric(pi, ui)
        return int(draws[0]) if scalar else draws

    def _inverse_truncated_geometric(self, p: float, u: float) -> int:
        if p <= 0.0:
            return 1
        log_p = math.log(p)
        total = -math.expm1(self.K * log_p)  # 1 - p^K
        x = math.log1p(-u * total) / log_p
        return min(max(1, math.ceil(x)), self.K)

    def spec_string(self):
        return f"lossbased-finite({self.alpha:g},{self.beta:g},{self.K})"

    def cache_key(self):
        return ("lossbased-finite", self.alpha, self.beta, self.K)


class PriorSpecError(ValueError):
    """Prior specification string failed to parse; carries the error position."""

    def __init__(self, text, position, message):
        super().__init__(f"invalid prior spec {text!r} at position {position}: {message}")
        self.position = position


_SPEC_GRAMMAR = {
    "lossbased-default": (LossBased, 0),
    "lossbased-finite": (None, 3),
    "lossbased": (LossBased, 2),
    "uniform": (None, 1),
    "poisson": (None, 1),
    "geometric": (None, 1),
}


def parse_prior(text: str) -> KPrior:
    """Parse a prior specification string.

    Grammar: ``lossbased(alpha,beta)`` | ``lossbased-default`` |
    ``lossbased-finite(alpha,beta,K)`` | ``uniform(K)`` | ``poisson(lambda)`` |
    ``geometric(p)``.
    """
    s = text.strip()
    m = re.match(r"[a-z][a-z-]*", s)
    if m is None:
        raise PriorSpecError(text, 0, "expected a prior name")
    name = m.group(0)
    if name not in _SPEC_GRAMMAR:
        raise PriorSpecError(text, 0, f"unknown prior {name!r}; expected one of {sorted(_SPEC_GRAMMAR)}")
    _, n_args = _SPEC_GRAMMAR[name]
    rest = s[m.end():]
    if n_args == 0:
        if rest:
            raise PriorSpecError(text, m.end(), f"{name} takes no arguments")
        return LossBased(1.0, 1.0)
    argm = re.fullmatch(r"\(([^()]*)\)", rest)
    if argm is None:
        raise PriorSpecError(text, m.end(), f"expected ({n_args} comma-separated argument{'s' if n_args > 1 else ''})")
    raw_args = argm.group(1).split(",")
    if len(raw_args) != n_args:
        raise PriorSpecError(text, m.end() + 1, f"{name} takes {n_args} arguments, got {len(raw_args)}")
    vals = []
    pos = m.end() + 1
    for raw in raw_args:
        try:
            vals.append(float(raw))
        except ValueError:
            raise PriorSpecError(text, pos, f"could not parse number {raw.strip()!r}") from None
        pos += len(raw) + 1
    try:
        if name == "lossbased":
            return LossBased(vals[0], vals[1])
        if name == "lossbased-finite":
            return LossBasedFinite(vals[0], vals[1], _as_int(text, vals[2]))
        if name == "uniform":
            return UniformK(_as_int(text, vals[0]))
        if name == "poisson":
            return TruncatedPoisson(vals[0])
        return Geometric(vals[0])
    except ValueError as exc:
        raise PriorSpecError(text, m.end() + 1, str(exc)) from None


def _as_int(text, value):
    if not float(value).is_integer():
        raise ValueError(f"expected an integer, got {value}")
    return int(value)

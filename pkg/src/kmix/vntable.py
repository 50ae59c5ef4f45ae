"""Log-domain coefficient tables of the partition law induced by a prior on k.

A prior P(k) on the number of components together with symmetric
Dirichlet(gamma, ..., gamma) weights induces an exchangeable partition law

    p(C) = V_n(t) * prod_{c in C} gamma^(|c|),    t = |C|,

with V_n(t) = sum_{k >= t} k_(t) / (gamma k)^(n) * P(k), falling factorial
k_(t) and rising factorial (x)^(n). The table stores log V_n(t) for
t = 1..n with per-entry bounds on the truncation error of the infinite sum.

Priors with exponentially decaying tails are summed directly in the log
domain until an analytic tail bound clears the tolerance. The beta-geometric
family decays only polynomially, and near t = n no feasible number of terms
reaches the tolerance; those entries are finished with arbitrary-precision
Euler-Maclaurin summation (mpmath).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, logsumexp

from kmix.priors import Geometric, KPrior, LossBased, LossBasedFixedRate, TruncatedPoisson

__all__ = ["VnTable", "build_vn_table", "log_rising", "sample_k_given_t", "k_given_t_log_pmf"]

_MPMATH_DPS = 30
# relative error budget assigned to mpmath-finished entries; cross-checked
# against higher precision in the test suite
_MPMATH_ERR = 1e-13


def log_rising(x: float, m: int) -> float:
    """log of the rising factorial x^(m) = x (x+1) ... (x+m-1)."""
    return math.lgamma(x + m) - math.lgamma(x)


def _log_summand(prior: KPrior, t: int, n: int, gamma: float, k: np.ndarray) -> np.ndarray:
    """log of P(k) k_(t) / (gamma k)^(n) on an array of k >= t."""
    return (
        prior._log_pmf_array(k)
        + gammaln(k + 1.0)
        - gammaln(k - t + 1.0)
        + gammaln(gamma * k)
        - gammaln(gamma * k + n)
    )


def _log_prior_tail(prior: KPrior, k_max: int) -> float:
    if isinstance(prior, LossBased):
        return prior.log_tail_mass(k_max)
    if isinstance(prior, (Geometric, LossBasedFixedRate)):
        return k_max * math.log(prior.p) if prior.p > 0.0 else -math.inf
    if isinstance(prior, TruncatedPoisson):
        tm = prior.tail_mass(k_max)
        return math.log(tm) if tm > 0.0 else -math.inf
    raise TypeError(f"no analytic tail for {type(prior).__name__}")


def _log_tail_bound(prior, t, n, gamma, k_max) -> float:
    """Bound on log sum_{k > k_max} of the summand.

    Uses k_(t)/(gamma k)^(n) <= gamma^-t (gamma (k_max+1))^-(n-t) for
    k > k_max, times the exact prior tail mass.
    """
    return (
        -t * math.log(gamma)
        - (n - t) * math.log(gamma * (k_max + 1.0))
        + _log_prior_tail(prior, k_max)
    )


def _mpmath_log_entry(prior: LossBased, t, n, gamma, dps=_MPMATH_DPS) -> float:
    import mpmath as mp

    a, b, g = prior.alpha, prior.beta, gamma
    with mp.workdps(dps):
        log_norm = mp.loggamma(a + b) + mp.loggamma(a + 1) - mp.loggamma(a) - mp.loggamma(b)

        def term(k):
            k = mp.mpf(k)
            lp = log_norm + mp.loggamma(k + b - 1) - mp.loggamma(k + a + b)
            la = mp.loggamma(k + 1) - mp.loggamma(k - t + 1) + mp.loggamma(g * k) - mp.loggamma(g * k + n)
            return mp.e ** (lp + la)

        value = mp.nsum(term, [t, mp.inf])
        return float(mp.log(value))


def _log_entry_infinite(prior, t, n, gamma, tol) -> tuple[float, float]:
    """(log V_n(t), relative error bound) for an infinite-support prior."""
    heavy_tail = isinstance(prior, LossBased)
    if heavy_tail and n - t <= 2:
        # polynomial decay k^-(n-t+alpha+1): direct summation cannot reach tol
        return _mpmath_log_entry(prior, t, n, gamma), _MPMATH_ERR
    log_tol = math.log(tol)
    acc = -math.inf
    k_lo = t
    chunk = 256
    while True:
        ks = np.arange(k_lo, k_lo + chunk, dtype=float)
        acc = np.logaddexp(acc, logsumexp(_log_summand(prior, t, n, gamma, ks)))
        k_hi = k_lo + chunk - 1
        bound = _log_tail_bound(prior, t, n, gamma, k_hi)
        if bound <= acc + log_tol:
            return float(acc), math.exp(bound - acc)
        k_lo = k_hi + 1
        chunk = min(chunk * 4, 1 << 16)
        if k_hi - t > (1 << 19):
            if heavy_tail:
                return _mpmath_log_entry(prior, t, n, gamma), _MPMATH_ERR
            raise RuntimeError(
                f"V-table summation did not converge for t={t}, n={n}, gamma={gamma}"
            )


def _log_entry_finite(prior, t, n, gamma) -> tuple[float, float]:
    K = prior.support_max
    if t > K:
        return -math.inf, 0.0
    ks = np.arange(t, K + 1, dtype=float)
    return float(logsumexp(_log_summand(prior, t, n, gamma, ks))), 0.0


@dataclass
class VnTable:
    """log V_n(t) for t = 1..n plus truncation-error metadata.

    ``log_v[t-1]`` holds log V_n(t); ``err_rel[t-1]`` bounds the relative
    truncation error of that entry. ``log_ratio[t-1]`` caches
    log V_n(t+1) - log V_n(t) with -inf past the end of the prior support.
    """

    prior: KPrior
    n: int
    gamma: float
    log_v: np.ndarray
    err_rel: np.ndarray
    log_ratio: np.ndarray
    _cond_cache: dict = field(default_factory=dict, repr=False)

    def log_value(self, t: int) -> float:
        if not 1 <= t <= self.n:
            raise ValueError(f"t must lie in 1..{self.n}, got {t}")
        return float(self.log_v[t - 1])


_table_cache: dict = {}


def build_vn_table(prior: KPrior, n: int, gamma: float, tol: float = 1e-12) -> VnTable:
    """Compute log V_n(t) for t = 1..n (memoised on (prior, n, gamma, tol))."""
    if n < 1 or int(n) != n:
        raise ValueError(f"n must be an integer >= 1, got {n}")
    if not (math.isfinite(gamma) and gamma > 0.0):
        raise ValueError(f"gamma must be positive, got {gamma}")
    key = (prior.cache_key(), int(n), float(gamma), float(tol))
    hit = _table_cache.get(key)
    if hit is not None:
        return hit

    log_v = np.empty(n)
    err = np.empty(n)
    finite = prior.support_max is not None
    for t in range(1, n + 1):
        if finite:
            log_v[t - 1], err[t - 1] = _log_entry_finite(prior, t, n, gamma)
        else:
            log_v[t - 1], err[t - 1] = _log_entry_infinite(prior, t, n, gamma, tol)
    if not math.isfinite(log_v[0]):
        raise RuntimeError("V_n(1) vanished; the prior is not a valid pmf on {1, 2, ...}")

    log_ratio = np.full(n, -math.inf)
    log_ratio[: n - 1] = log_v[1:] - log_v[:-1]
    table = VnTable(prior, int(n), float(gamma), log_v, err, log_ratio)
    _table_cache[key] = table
    return table


def k_given_t_log_pmf(table: VnTable, t: int, k_max: int) -> np.ndarray:
    """log p(k | t occupied clusters) for k = 1..k_max.

    The conditional is P(k) k_(t) / (gamma k)^(n) normalised by V_n(t); it
    depends on the data only through t. Entries below k = t are -inf.
    """
    log_v = table.log_value(t)
    if not math.isfinite(log_v):
        raise ValueError(f"prior puts no mass on k >= t = {t}")
    out = np.full(k_max, -math.inf)
    hi = k_max if table.prior.support_max is None else min(k_max, table.prior.support_max)
    if hi >= t:
        ks = np.arange(t, hi + 1, dtype=float)
        out[t - 1 : hi] = _log_summand(table.prior, t, table.n, table.gamma, ks) - log_v
    return out


def _cond_cdf(table: VnTable, t: int, upto: int) -> np.ndarray:
    """Cached cumulative conditional P(k <= . | t) over k = t..upto."""
    cached = table._cond_cache.get(t)
    if cached is None or len(cached) < upto - t + 1:
        probs = np.exp(k_given_t_log_pmf(table, t, upto)[t - 1 :])
        cached = np.cumsum(probs)
        table._cond_cache[t] = cached
    return cached


def sample_k_given_t(
    prior: KPrior,
    t: int,
    n: int,
    gamma: float,
    rng: np.random.Generator,
    table: VnTable | None = None,
) -> int:
    """Exact draw of the number of components k given t occupied clusters.

    Inverse-cdf walk over the normalised conditional; heavy-tailed priors can
    occasionally return very large k, which is correct behaviour.
    """
    if table is None:
        table = build_vn_table(prior, n, gamma)
    if not 1 <= t <= n:
        raise ValueError(f"t must lie in 1..{n}, got {t}")
    if prior.support_max is not None and t > prior.support_max:
        raise ValueError(f"prior puts no mass on k >= t = {t}")
    u = rng.random()
    upto = prior.support_max if prior.support_max is not None else t + 255
    cdf = _cond_cdf(table, t, upto)
    idx = int(np.searchsorted(cdf, u, side="left"))
    if idx < len(cdf):
        return t + idx
    if prior.support_max is not None:
        return prior.support_max
    # walk the tail chunk by chunk; the cached cdf covers all but ~1e-9 of
    # typical conditionals, so this path is rare
    cum = float(cdf[-1])
    k_lo = t + len(cdf)
    log_v = table.log_value(t)
    chunk = 1024
    while True:
        ks = np.arange(k_lo, k_lo + chunk, dtype=float)
        probs = np.exp(_log_summand(prior, t, n, gamma, ks) - log_v)
        csum = cum + np.cumsum(probs)
        idx = int(np.searchsorted(csum, u, side="left"))
        if idx < len(csum):
            return k_lo + idx
        cum = float(csum[-1])
        k_lo += chunk
        chunk = min(chunk * 2, 1 << 20)
        # numerically unreachable quantile: all remaining mass is below
        # resolution, return the current frontier rather than loop forever
        if _log_tail_bound(prior, t, n, gamma, k_lo - 1) - log_v < math.log(max(u - cum, 1e-300)) - 3.0:
            return k_lo - 1

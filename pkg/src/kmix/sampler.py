"""Partition MCMC for mixtures with a prior on the number of components.

The chain state is a partition of the observation indices. The conjugate
path runs collapsed allocation sweeps plus restricted-Gibbs split-merge
moves; the semi-conjugate path runs auxiliary-component sweeps with
instantiated parameters. The number of components k is recovered per
retained sweep from its conditional given the number of occupied clusters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from kmix import _kernels
from kmix.models import ClusterStats, ConjugateNormalGamma, FlatModel, RichardsonGreenModel
from kmix.priors import KPrior
from kmix.vntable import VnTable, build_vn_table, log_rising, sample_k_given_t

__all__ = [
    "SamplerConfig",
    "AllocationState",
    "KPosterior",
    "run_chain",
    "credible_interval",
    "partition_log_prior",
    "gibbs_allocation_sweep",
    "split_merge_move",
    "aux_allocation_sweep",
    "effective_sample_size",
]


@dataclass(frozen=True)
class SamplerConfig:
    """Chain schedule and reporting knobs; seed fixed means run reproducible."""

    iterations: int = 20_000
    burnin: int = 15_000
    thin: int = 1
    gamma: float = 1.0
    sweeps_per_iter: int = 1
    sm_attempts: int = 1
    sm_scans: int = 5
    m_aux: int = 3
    k_trunc: int = 50
    seed: int = 0
    update_hypers: bool = True

    def __post_init__(self):
        if not 0 <= self.burnin < self.iterations:
            raise ValueError("need 0 <= burnin < iterations")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if min(self.sweeps_per_iter, self.sm_attempts, self.sm_scans) < 0:
            raise ValueError("schedule counts must be >= 0")
        if self.m_aux < 1:
            raise ValueError("m_aux must be >= 1")
        if not (math.isfinite(self.gamma) and self.gamma > 0.0):
            raise ValueError("gamma must be positive")
        if self.k_trunc < 1:
            raise ValueError("k_trunc must be >= 1")

    @property
    def n_retained(self) -> int:
        return len(range(self.burnin, self.iterations, self.thin))

    @classmethod
    def paper_scale(cls, seed: int = 0, **kw) -> "SamplerConfig":
        """Long protocol: 100,000 iterations keeping the last 1,000."""
        return cls(iterations=100_000, burnin=99_000, thin=1, seed=seed, **kw)

    @classmethod
    def desk_scale(cls, seed: int = 0, **kw) -> "SamplerConfig":
        """Short protocol: 20,000 iterations keeping the last 5,000."""
        return cls(iterations=20_000, burnin=15_000, thin=1, seed=seed, **kw)


class AllocationState:
    """Partition of observations with per-cluster registry arrays.

    Data are shifted by their column means internally (every statistic the
    samplers compute is translation-equivariant); cluster slots live in flat
    arrays so the numba kernels can mutate them in place. One state is owned
    by one chain.
    """

    def __init__(self, data, model, rng: np.random.Generator):
        data = np.atleast_2d(np.asarray(data, dtype=float))
        if data.shape[0] == 1 and data.shape[1] > 1 and getattr(model, "dim", 1) == 1:
            data = data.T
        self.n, self.dim = data.shape
        self.model = model
        self.shift = data.mean(axis=0)
        self.x = np.ascontiguousarray(data - self.shift)
        cap = self.n + 1
        self.z = np.zeros(self.n, dtype=np.int64)
        self.counts = np.zeros(cap, dtype=np.int64)
        self.s1 = np.zeros((cap, self.dim))
        self.s2 = np.zeros((cap, self.dim))
        self.active = np.zeros(cap, dtype=np.int64)
        self.pos = np.zeros(cap, dtype=np.int64)
        self.free_stack = np.arange(cap - 1, 0, -1, dtype=np.int64)
        self.free_top = cap - 1
        self.tlen = 1
        self.counts[0] = self.n
        self.s1[0] = self.x.sum(axis=0)
        self.s2[0] = (self.x**2).sum(axis=0)

        self.is_rg = isinstance(model, RichardsonGreenModel)
        self.is_flat = isinstance(model, FlatModel)
        if self.is_rg:
            if self.dim != 1:
                raise ValueError("the semi-conjugate model is univariate")
            self.b = model.sample_b_prior(rng)
            self.mus = np.zeros(cap)
            self.lams = np.ones(cap)
            self.mus[0] = rng.normal(model.mu0 - self.shift[0], model.sigma0)
            self.lams[0] = rng.gamma(model.a, 1.0 / self.b)
            self._m0 = None
            self.g1 = np.zeros(1)
        else:
            a = 1.0 if self.is_flat else model.a
            m = np.arange(self.n + 1, dtype=float)
            from scipy.special import gammaln

            self.g1 = gammaln(a + 0.5 * (m + 1.0)) - gammaln(a + 0.5 * m)
            if self.is_flat:
                self._m0 = np.zeros(self.dim)
                self._w = self._a = self._b_ng = 1.0
            else:
                if model.dim != self.dim:
                    raise ValueError(f"model dimension {model.dim} != data dimension {self.dim}")
                self._m0 = np.ascontiguousarray(model.m0 - self.shift)
                self._w, self._a, self._b_ng = model.w, model.a, model.b

    @property
    def t(self) -> int:
        return self.tlen

    def cluster_sizes(self) -> list[int]:
        return [int(self.counts[s]) for s in self.active[: self.tlen]]

    def to_cluster_stats(self) -> list[ClusterStats]:
        """Rebuild per-cluster ClusterStats from the original (unshifted) data."""
        raw = self.x + self.shift
        out = []
        for s in self.active[: self.tlen]:
            members = np.flatnonzero(self.z == s)
            cs = ClusterStats.from_points(raw[members])
            if self.is_rg:
                cs.mu = float(self.mus[s] + self.shift[0])
                cs.lam = float(self.lams[s])
            out.append(cs)
        return out

    def stats_drift(self) -> float:
        """Max abs deviation of the incremental registry from recomputation."""
        worst = 0.0
        for s in self.active[: self.tlen]:
            members = self.z == s
            worst = max(worst, float(np.abs(self.x[members].sum(axis=0) - self.s1[s]).max()))
            worst = max(worst, float(np.abs((self.x[members] ** 2).sum(axis=0) - self.s2[s]).max()))
            if int(members.sum()) != self.counts[s]:
                raise AssertionError("cluster count out of sync with assignments")
        return worst


def gibbs_allocation_sweep(state: AllocationState, table: VnTable, model, rng) -> None:
    """One collapsed reassignment pass over all observations (conjugate path)."""
    state.tlen, state.free_top = _kernels.conj_sweep(
        state.x, state.z, state.counts, state.s1, state.s2,
        state.active, state.pos, state.free_stack, state.tlen, state.free_top,
        table.log_ratio, state._m0, state._w, state._a, state._b_ng,
        state.g1, table.gamma, state.is_flat, rng,
    )


def split_merge_move(state: AllocationState, table: VnTable, model, rng, scans: int = 5) -> bool:
    """One split-merge attempt; returns True if the proposal was accepted."""
    if state.n < 2:
        return False
    state.tlen, state.free_top, accepted, _ = _kernels.split_merge(
        state.x, state.z, state.counts, state.s1, state.s2,
        state.active, state.pos, state.free_stack, state.tlen, state.free_top,
        table.log_v, state._m0, state._w, state._a, state._b_ng,
        state.g1, table.gamma, state.is_flat, scans, rng,
    )
    return bool(accepted)


def aux_allocation_sweep(state: AllocationState, table: VnTable, model, rng, m_aux: int = 3,
                         update_hypers: bool = True) -> None:
    """One auxiliary-component pass plus parameter and shared-rate updates."""
    state.tlen, state.free_top, state.b = _kernels.rg_sweep(
        state.x[:, 0], state.z, state.counts, state.s1[:, 0], state.s2[:, 0],
        state.mus, state.lams, state.active, state.pos, state.free_stack,
        state.tlen, state.free_top, state.b, table.log_ratio,
        model.mu0 - state.shift[0], model.sigma0**2, model.a, model.a0, model.b0,
        table.gamma, m_aux, update_hypers, rng,
    )


def partition_log_prior(state: AllocationState, table: VnTable) -> float:
    """log p(partition) = log V_n(t) + sum_c log gamma^(|c|)."""
    return partition_log_prior_sizes(state.cluster_sizes(), table)


def partition_log_prior_sizes(sizes, table: VnTable) -> float:
    t = len(sizes)
    return table.log_value(t) + sum(log_rising(table.gamma, m) for m in sizes)


def credible_interval(probs, ks=None, level: float = 0.95) -> tuple[int, int]:
    """Central credible interval of an integer pmf.

    lo is the smallest k whose cumulative mass reaches (1-level)/2 and hi the
    smallest k reaching (1+level)/2. The pmf is normalised defensively.
    """
    probs = np.asarray(probs, dtype=float)
    if ks is None:
        ks = np.arange(1, len(probs) + 1)
    ks = np.asarray(ks)
    total = probs.sum()
    if total <= 0:
        raise ValueError("pmf has no mass")
    cum = np.cumsum(probs / total)
    alpha = (1.0 - level) / 2.0
    lo = int(ks[int(np.searchsorted(cum, alpha, side="left"))])
    hi = int(ks[min(int(np.searchsorted(cum, 1.0 - alpha, side="left")), len(ks) - 1)])
    return lo, hi


def effective_sample_size(x) -> float:
    """ESS by Geyer's initial positive sequence on the autocorrelations."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4 or np.ptp(x) == 0.0:
        return float(n)
    xc = x - x.mean()
    acov = np.correlate(xc, xc, "full")[n - 1 :] / n
    rho = acov / acov[0]
    s = 0.0
    for t in range(1, n // 2):
        pair = rho[2 * t - 1] + rho[2 * t]
        if pair < 0.0:
            break
        s += pair
    return float(min(n, n / (1.0 + 2.0 * s)))


@dataclass
class KPosterior:
    """Retained draws of (t, k) and the summaries reported from them.

    pmf[k-1] holds the empirical mass of k for k = 1..k_trunc; overflow is
    the mass above k_trunc, so pmf.sum() + overflow == 1. Mode and interval
    come from the untruncated draws.
    """

    draws_t: np.ndarray
    draws_k: np.ndarray
    k_trunc: int
    pmf: np.ndarray
    overflow: float
    mode: int
    ci: tuple[int, int]
    diagnostics: dict = field(default_factory=dict)
    trace: np.ndarray | None = None

    @classmethod
    def from_draws(cls, draws_t, draws_k, k_trunc, diagnostics=None, trace=None) -> "KPosterior":
        draws_t = np.asarray(draws_t, dtype=np.int64)
        draws_k = np.asarray(draws_k, dtype=np.int64)
        counts = np.bincount(draws_k, minlength=k_trunc + 1)
        total = draws_k.size
        pmf = counts[1 : k_trunc + 1] / total
        overflow = max(0.0, 1.0 - pmf.sum())
        mode = int(np.argmax(np.bincount(draws_k)))  # smallest k among maximisers
        full = np.bincount(draws_k) / total
        ci = credible_interval(full[1:], np.arange(1, full.size), 0.95)
        diag = dict(diagnostics or {})
        diag["ess_t"] = effective_sample_size(draws_t)
        return cls(draws_t, draws_k, k_trunc, pmf, overflow, mode, ci, diag, trace)


def _log_joint_conjugate(state: AllocationState, table: VnTable) -> float:
    total = table.log_value(state.tlen)
    for s in state.active[: state.tlen]:
        m = int(state.counts[s])
        total += log_rising(table.gamma, m)
        if not state.is_flat:
            total += _kernels._log_marg(
                m, state.s1[s], state.s2[s], state.dim,
                state._m0, state._w, state._a, state._b_ng,
            )
    return total


def _log_joint_rg(state: AllocationState, table: VnTable, model: RichardsonGreenModel) -> float:
    total = table.log_value(state.tlen)
    mu0 = model.mu0 - state.shift[0]
    lam_sum = 0.0
    for s in state.active[: state.tlen]:
        m = int(state.counts[s])
        mu, lam = state.mus[s], state.lams[s]
        lam_sum += lam
        total += log_rising(table.gamma, m)
        sq = state.s2[s, 0] - 2.0 * mu * state.s1[s, 0] + m * mu * mu
        total += 0.5 * m * math.log(lam) - 0.5 * lam * max(sq, 0.0) - 0.5 * m * _kernels.LOG_2PI
        total += -0.5 * ((mu - mu0) / model.sigma0) ** 2 - math.log(model.sigma0) - 0.5 * _kernels.LOG_2PI
        total += model.a * math.log(state.b) - math.lgamma(model.a) + (model.a - 1.0) * math.log(lam) - state.b * lam
    total += (
        model.a0 * math.log(model.b0)
        - math.lgamma(model.a0)
        + (model.a0 - 1.0) * math.log(state.b)
        - model.b0 * state.b
    )
    return total


def run_chain(data, model, prior: KPrior, config: SamplerConfig) -> KPosterior:
    """Run one MCMC chain and summarise the posterior over k.

    Interleaves allocation sweeps with split-merge attempts (conjugate path)
    per the schedule, then per retained iteration records t, draws k from its
    conditional given t, and logs the joint score. Deterministic given
    (data, config.seed).
    """
    rng = np.random.default_rng(config.seed)
    data = np.atleast_2d(np.asarray(data, dtype=float))
    if data.shape[0] == 1 and data.shape[1] > 1 and getattr(model, "dim", 1) == 1:
        data = data.T
    n = data.shape[0]
    table = build_vn_table(prior, n, config.gamma)
    if isinstance(model, RichardsonGreenModel):
        model = replace(model)  # chain-private copy: b is mutable hyperstate
    state = AllocationState(data, model, rng)

    conjugate = not state.is_rg
    retained = config.n_retained
    draws_t = np.empty(retained, dtype=np.int64)
    draws_k = np.empty(retained, dtype=np.int64)
    trace = np.empty((retained, 4))
    sm_accepted = 0
    sm_attempted = 0
    r = 0
    for it in range(config.iterations):
        if conjugate:
            for _ in range(config.sweeps_per_iter):
                gibbs_allocation_sweep(state, table, model, rng)
            for _ in range(config.sm_attempts):
                sm_attempted += 1
                sm_accepted += split_merge_move(state, table, model, rng, config.sm_scans)
        else:
            for _ in range(config.sweeps_per_iter):
                aux_allocation_sweep(state, table, model, rng, config.m_aux, config.update_hypers)
            model.b = state.b
        if it >= config.burnin and (it - config.burnin) % config.thin == 0:
            t = state.tlen
            k = sample_k_given_t(prior, t, n, config.gamma, rng, table)
            draws_t[r] = t
            draws_k[r] = k
            if conjugate:
                score = _log_joint_conjugate(state, table)
            else:
                score = _log_joint_rg(state, table, model)
            trace[r] = (it, t, k, score)
            r += 1

    diagnostics = {
        "iterations": config.iterations,
        "burnin": config.burnin,
        "thin": config.thin,
        "retained": retained,
        "seed": config.seed,
        "split_merge_rate": (sm_accepted / sm_attempted) if sm_attempted else None,
    }
    return KPosterior.from_draws(draws_t, draws_k, config.k_trunc, diagnostics, trace)

"""Numba kernels for the sampling hot loops.

All kernels mutate the flat state arrays in place and consume randomness from
the chain's single Generator, so a run is reproducible from its seed. Data
and the prior mean m0 arrive pre-shifted by the dataset column means; every
quantity computed here is translation-equivariant, so the shift only serves
to keep the sums of squares well conditioned.
"""

import math

import numpy as np
from numba import njit

LOG_2PI = math.log(2.0 * math.pi)
LOG_PI = math.log(math.pi)
HALF_LOG_2PI = 0.5 * LOG_2PI


@njit(cache=True, inline="always")
def _logpred(xi, d, m, s1, s2, m0, w, a, b, g1):
    """Posterior-predictive Student-t log density of one point.

    m, s1, s2 are the count and raw (shifted) sums of the target cluster;
    g1[m] caches lgamma(a+(m+1)/2) - lgamma(a+m/2).
    """
    tot = 0.0
    nu1h = a + 0.5 * (m + 1)
    wn = w + m
    for j in range(d):
        if m > 0:
            mean = s1[j] / m
            ssd = s2[j] - s1[j] * s1[j] / m
            if ssd < 0.0:
                ssd = 0.0
            mn = (w * m0[j] + s1[j]) / wn
            bn = b + 0.5 * ssd + 0.5 * (m * w / wn) * (mean - m0[j]) ** 2
        else:
            mn = m0[j]
            bn = b
        q = 2.0 * bn * (wn + 1.0) / wn
        dx = xi[j] - mn
        tot += g1[m] - 0.5 * (LOG_PI + math.log(q)) - nu1h * math.log1p(dx * dx / q)
    return tot


@njit(cache=True)
def _log_marg(m, s1, s2, d, m0, w, a, b):
    """Closed-form log marginal likelihood of a cluster, product over dims."""
    tot = 0.0
    wn = w + m
    an = a + 0.5 * m
    for j in range(d):
        mean = s1[j] / m
        ssd = s2[j] - s1[j] * s1[j] / m
        if ssd < 0.0:
            ssd = 0.0
        bn = b + 0.5 * ssd + 0.5 * (m * w / wn) * (mean - m0[j]) ** 2
        tot += (
            -0.5 * m * LOG_2PI
            + 0.5 * (math.log(w) - math.log(wn))
            + math.lgamma(an)
            - math.lgamma(a)
            + a * math.log(b)
            - an * math.log(bn)
        )
    return tot


@njit(cache=True)
def conj_sweep(
    x, z, counts, s1, s2, active, pos, free_stack, tlen, free_top,
    log_vr, m0, w, a, b, g1, gamma, flat, rng,
):
    """One collapsed allocation sweep over all observations (conjugate path)."""
    n, d = x.shape
    wbuf = np.empty(n + 1)
    for i in range(n):
        ci = z[i]
        counts[ci] -= 1
        for j in range(d):
            s1[ci, j] -= x[i, j]
            s2[ci, j] -= x[i, j] * x[i, j]
        if counts[ci] == 0:
            p = pos[ci]
            last = active[tlen - 1]
            active[p] = last
            pos[last] = p
            tlen -= 1
            free_stack[free_top] = ci
            free_top += 1
            for j in range(d):
                s1[ci, j] = 0.0
                s2[ci, j] = 0.0
        if tlen == 0:
            choice = 0  # single observation: a fresh cluster with certainty
        else:
            mx = -np.inf
            for idx in range(tlen):
                s = active[idx]
                lw = math.log(counts[s] + gamma)
                if not flat:
                    lw += _logpred(x[i], d, counts[s], s1[s], s2[s], m0, w, a, b, g1)
                wbuf[idx] = lw
                if lw > mx:
                    mx = lw
            lw = math.log(gamma) + log_vr[tlen - 1]
            if not flat:
                lw += _logpred(x[i], d, 0, s1[0], s2[0], m0, w, a, b, g1)
            wbuf[tlen] = lw
            if lw > mx:
                mx = lw
            tot = 0.0
            for idx in range(tlen + 1):
                wbuf[idx] = math.exp(wbuf[idx] - mx)
                tot += wbuf[idx]
            u = rng.random() * tot
            acc = 0.0
            choice = tlen
            for idx in range(tlen + 1):
                acc += wbuf[idx]
                if u <= acc:
                    choice = idx
                    break
        if choice == tlen:
            free_top -= 1
            s = free_stack[free_top]
            active[tlen] = s
            pos[s] = tlen
            tlen += 1
        else:
            s = active[choice]
        z[i] = s
        counts[s] += 1
        for j in range(d):
            s1[s, j] += x[i, j]
            s2[s, j] += x[i, j] * x[i, j]
    return tlen, free_top


@njit(cache=True)
def _restricted_scan(
    x, d, s_idx, ns, side, cnt, ss1, ss2, m0, w, a, b, g1, gamma, flat, rng,
    record, force, forced_side,
):
    """One restricted Gibbs pass over the anchored two-cluster arena.

    cnt is int64[2]; ss1/ss2 are (2, d) side sums. With force=True the pass
    is driven to forced_side and only the transition log-probability is
    accumulated (the reverse-proposal bookkeeping of a merge move).
    """
    logq = 0.0
    for u_ in range(ns):
        m_ = s_idx[u_]
        sd = side[u_]
        cnt[sd] -= 1
        for j in range(d):
            ss1[sd, j] -= x[m_, j]
            ss2[sd, j] -= x[m_, j] * x[m_, j]
        wa = math.log(gamma + cnt[0])
        wb = math.log(gamma + cnt[1])
        if not flat:
            wa += _logpred(x[m_], d, cnt[0], ss1[0], ss2[0], m0, w, a, b, g1)
            wb += _logpred(x[m_], d, cnt[1], ss1[1], ss2[1], m0, w, a, b, g1)
        mx = wa if wa > wb else wb
        pa = math.exp(wa - mx)
        pb = math.exp(wb - mx)
        tot = pa + pb
        if force:
            choose = forced_side[u_]
        else:
            choose = 0 if rng.random() * tot <= pa else 1
        if record:
            logq += math.log((pa if choose == 0 else pb) / tot)
        side[u_] = choose
        cnt[choose] += 1
        for j in range(d):
            ss1[choose, j] += x[m_, j]
            ss2[choose, j] += x[m_, j] * x[m_, j]
    return logq


@njit(cache=True)
def split_merge(
    x, z, counts, s1, s2, active, pos, free_stack, tlen, free_top,
    log_v, m0, w, a, b, g1, gamma, flat, scans, rng,
):
    """One restricted-Gibbs split-merge attempt (conjugate path).

    Returns (tlen, free_top, accepted, was_split).
    """
    n, d = x.shape
    i = rng.integers(0, n)
    j = rng.integers(0, n)
    while j == i:
        j = rng.integers(0, n)
    ci = z[i]
    cj = z[j]
    is_split = ci == cj

    s_idx = np.empty(n, np.int64)
    ns = 0
    for m_ in range(n):
        if m_ != i and m_ != j and (z[m_] == ci or z[m_] == cj):
            s_idx[ns] = m_
            ns += 1
    forced_side = np.empty(ns, np.int64)
    for u_ in range(ns):
        forced_side[u_] = 0 if z[s_idx[u_]] == ci else 1

    # launch arena: anchor i on side 0, anchor j on side 1, S randomised
    side = np.empty(ns, np.int64)
    cnt = np.zeros(2, np.int64)
    ss1 = np.zeros((2, d))
    ss2 = np.zeros((2, d))
    cnt[0] = 1
    cnt[1] = 1
    for jd in range(d):
        ss1[0, jd] = x[i, jd]
        ss2[0, jd] = x[i, jd] * x[i, jd]
        ss1[1, jd] = x[j, jd]
        ss2[1, jd] = x[j, jd] * x[j, jd]
    for u_ in range(ns):
        sd = 0 if rng.random() < 0.5 else 1
        side[u_] = sd
        cnt[sd] += 1
        m_ = s_idx[u_]
        for jd in range(d):
            ss1[sd, jd] += x[m_, jd]
            ss2[sd, jd] += x[m_, jd] * x[m_, jd]
    for _ in range(scans):
        _restricted_scan(
            x, d, s_idx, ns, side, cnt, ss1, ss2, m0, w, a, b, g1, gamma, flat, rng,
            False, False, forced_side,
        )

    if is_split:
        logq = _restricted_scan(
            x, d, s_idx, ns, side, cnt, ss1, ss2, m0, w, a, b, g1, gamma, flat, rng,
            True, False, forced_side,
        )
        na = cnt[0]
        nb = cnt[1]
        log_acc = (
            log_v[tlen] - log_v[tlen - 1]
            + math.lgamma(gamma + na)
            + math.lgamma(gamma + nb)
            - math.lgamma(gamma + na + nb)
            - math.lgamma(gamma)
        )
        if not flat:
            log_acc += (
                _log_marg(na, ss1[0], ss2[0], d, m0, w, a, b)
                + _log_marg(nb, ss1[1], ss2[1], d, m0, w, a, b)
                - _log_marg(counts[ci], s1[ci], s2[ci], d, m0, w, a, b)
            )
        log_acc -= logq
        if math.log(rng.random()) < log_acc:
            free_top -= 1
            snew = free_stack[free_top]
            active[tlen] = snew
            pos[snew] = tlen
            tlen += 1
            z[i] = snew
            for u_ in range(ns):
                if side[u_] == 0:
                    z[s_idx[u_]] = snew
            counts[snew] = na
            counts[ci] = nb
            for jd in range(d):
                s1[snew, jd] = ss1[0, jd]
                s2[snew, jd] = ss2[0, jd]
                s1[ci, jd] = ss1[1, jd]
                s2[ci, jd] = ss2[1, jd]
            return tlen, free_top, 1, 1
        return tlen, free_top, 0, 1

    # merge proposal: probability of the reverse split from the launch arena
    logq = _restricted_scan(
        x, d, s_idx, ns, side, cnt, ss1, ss2, m0, w, a, b, g1, gamma, flat, rng,
        True, True, forced_side,
    )
    nci = counts[ci]
    ncj = counts[cj]
    log_acc = (
        log_v[tlen - 2] - log_v[tlen - 1]
        + math.lgamma(gamma + nci + ncj)
        + math.lgamma(gamma)
        - math.lgamma(gamma + nci)
        - math.lgamma(gamma + ncj)
    )
    if not flat:
        mrg1 = np.empty(d)
        mrg2 = np.empty(d)
        for jd in range(d):
            mrg1[jd] = s1[ci, jd] + s1[cj, jd]
            mrg2[jd] = s2[ci, jd] + s2[cj, jd]
        log_acc += (
            _log_marg(nci + ncj, mrg1, mrg2, d, m0, w, a, b)
            - _log_marg(nci, s1[ci], s2[ci], d, m0, w, a, b)
            - _log_marg(ncj, s1[cj], s2[cj], d, m0, w, a, b)
        )
    log_acc += logq
    if math.log(rng.random()) < log_acc:
        for m_ in range(n):
            if z[m_] == ci:
                z[m_] = cj
        counts[cj] += counts[ci]
        counts[ci] = 0
        for jd in range(d):
            s1[cj, jd] += s1[ci, jd]
            s2[cj, jd] += s2[ci, jd]
            s1[ci, jd] = 0.0
            s2[ci, jd] = 0.0
        p = pos[ci]
        last = active[tlen - 1]
        active[p] = last
        pos[last] = p
        tlen -= 1
        free_stack[free_top] = ci
        free_top += 1
        return tlen, free_top, 1, 0
    return tlen, free_top, 0, 0


@njit(cache=True)
def rg_sweep(
    x, z, counts, s1, s2, mus, lams, active, pos, free_stack, tlen, free_top,
    b, log_vr, mu0, s0sq, a, a0, b0, gamma, m_aux, update_hypers, rng,
):
    """Auxiliary-component allocation sweep plus parameter and rate updates.

    Semi-conjugate univariate path: clusters carry instantiated (mu, lam);
    fresh clusters are proposed through m_aux prior draws, reusing the
    parameters a removed singleton leaves behind. After the pass every
    cluster's (mu, lam) is Gibbs-updated and the shared rate b is redrawn.
    """
    n = x.shape[0]
    s0 = math.sqrt(s0sq)
    amu = np.empty(m_aux)
    alam = np.empty(m_aux)
    wbuf = np.empty(n + m_aux)
    for i in range(n):
        ci = z[i]
        xi = x[i]
        counts[ci] -= 1
        s1[ci] -= xi
        s2[ci] -= xi * xi
        reuse = False
        rmu = 0.0
        rlam = 1.0
        if counts[ci] == 0:
            reuse = True
            rmu = mus[ci]
            rlam = lams[ci]
            p = pos[ci]
            last = active[tlen - 1]
            active[p] = last
            pos[last] = p
            tlen -= 1
            free_stack[free_top] = ci
            free_top += 1
            s1[ci] = 0.0
            s2[ci] = 0.0
        start = 0
        if reuse:
            amu[0] = rmu
            alam[0] = rlam
            start = 1
        for q_ in range(start, m_aux):
            amu[q_] = rng.normal(mu0, s0)
            alam[q_] = rng.standard_gamma(a) / b
        mx = -np.inf
        for idx in range(tlen):
            s = active[idx]
            dx = xi - mus[s]
            lw = math.log(counts[s] + gamma) + 0.5 * math.log(lams[s]) - 0.5 * lams[s] * dx * dx - HALF_LOG_2PI
            wbuf[idx] = lw
            if lw > mx:
                mx = lw
        if tlen > 0:
            base = math.log(gamma) + log_vr[tlen - 1] - math.log(m_aux)
        else:
            base = -math.log(m_aux)
        for q_ in range(m_aux):
            dx = xi - amu[q_]
            lw = base + 0.5 * math.log(alam[q_]) - 0.5 * alam[q_] * dx * dx - HALF_LOG_2PI
            wbuf[tlen + q_] = lw
            if lw > mx:
                mx = lw
        tot = 0.0
        for idx in range(tlen + m_aux):
            wbuf[idx] = math.exp(wbuf[idx] - mx)
            tot += wbuf[idx]
        u = rng.random() * tot
        acc = 0.0
        choice = tlen + m_aux - 1
        for idx in range(tlen + m_aux):
            acc += wbuf[idx]
            if u <= acc:
                choice = idx
                break
        if choice >= tlen:
            free_top -= 1
            s = free_stack[free_top]
            active[tlen] = s
            pos[s] = tlen
            tlen += 1
            counts[s] = 0
            mus[s] = amu[choice - tlen]
            lams[s] = alam[choice - tlen]
        else:
            s = active[choice]
        z[i] = s
        counts[s] += 1
        s1[s] += xi
        s2[s] += xi * xi

    sum_lam = 0.0
    for idx in range(tlen):
        s = active[idx]
        m = counts[s]
        prec = lams[s] * m + 1.0 / s0sq
        mean = (lams[s] * s1[s] + mu0 / s0sq) / prec
        mus[s] = rng.normal(mean, 1.0 / math.sqrt(prec))
        sq = s2[s] - 2.0 * mus[s] * s1[s] + m * mus[s] * mus[s]
        if sq < 0.0:
            sq = 0.0
        lams[s] = rng.standard_gamma(a + 0.5 * m) / (b + 0.5 * sq)
        sum_lam += lams[s]
    if update_hypers:
        b = rng.standard_gamma(a0 + tlen * a) / (b0 + sum_lam)
    return tlen, free_top, b

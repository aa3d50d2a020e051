"""Compiled inner loops of the Metropolis-within-Gibbs samplers.

Each kernel advances a block of independent chains (one chain per dataset
row) by ``c`` iterations, consuming pre-drawn randomness.  Keeping the
randomness outside the kernels is what makes runs reproducible: draws come
from numpy Generators owned by the caller, in a fixed order, and the kernels
are pure functions of (state, draws).

Uniform draws arrive pre-transformed: ``lu`` arrays hold log(U) for the
Metropolis accept tests and ``lgu`` arrays hold logit(U) for the exact
Bernoulli mixture-indicator updates, so the comparisons inside the loops are
branch-free of transcendentals.

Proposal scales adapt during burn-in only (stochastic-approximation steps
toward 0.44 acceptance, gain t**-0.6), then stay frozen so the sampling
phase keeps detailed balance.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# iterations per randomness block; fixed so that draw layout never depends
# on chain-length settings
CHUNK = 512

_SCALE_MIN = 1e-6
_SCALE_MAX = 1e6


@njit(cache=True)
def _softplus(x):
    if x > 0.0:
        return x + np.log1p(np.exp(-x))
    return np.log1p(np.exp(x))


@njit(cache=True)
def independent_chunk(
    t0, burn, thin, y, n, pm, pv,
    theta, cur_ll, s_th,
    z_th, lu_th,
    logit_q0,
    exceed, sum_p, sum_p2, acc_th, chain_th, store_chain,
):
    c = z_th.shape[0]
    n_rep, n_bas = theta.shape
    for j in range(c):
        t = t0 + j
        in_burn = t < burn
        if in_burn:
            g = (t + 1.0) ** -0.6
            f_acc = np.exp(g * 0.56)
            f_rej = np.exp(-g * 0.44)
        keep = (not in_burn) and ((t - burn) % thin == 0)
        for r in range(n_rep):
            for k in range(n_bas):
                th = theta[r, k]
                prop = th + s_th[r, k] * z_th[j, r, k]
                ll_p = y[r, k] * prop - n[k] * _softplus(prop)
                lp_c = -0.5 * (th - pm[k]) ** 2 / pv[k]
                lp_p = -0.5 * (prop - pm[k]) ** 2 / pv[k]
                ok = lu_th[j, r, k] < ll_p + lp_p - cur_ll[r, k] - lp_c
                if ok:
                    theta[r, k] = prop
                    cur_ll[r, k] = ll_p
                if in_burn:
                    s = s_th[r, k] * (f_acc if ok else f_rej)
                    if s < _SCALE_MIN:
                        s = _SCALE_MIN
                    elif s > _SCALE_MAX:
                        s = _SCALE_MAX
                    s_th[r, k] = s
                else:
                    if ok:
                        acc_th[r, k] += 1.0
            if keep:
                idx = (t - burn) // thin
                for k in range(n_bas):
                    th = theta[r, k]
                    p_s = 1.0 / (1.0 + np.exp(-th))
                    if th > logit_q0:
                        exceed[r, k] += 1.0
                    sum_p[r, k] += p_s
                    sum_p2[r, k] += p_s * p_s
                    if store_chain:
                        chain_th[idx, r, k] = th


@njit(cache=True)
def bhm_chunk(
    t0, burn, thin, y, n,
    mu_mean, mu_var, inv2hn2,
    theta, cur_ll, s_th, mu, phi, sig2, s_si,
    z_th, lu_th, z_mu, z_si, lu_si,
    logit_q0,
    exceed, sum_p, sum_p2, acc_th, acc_si, chain_th, store_chain,
):
    c = z_th.shape[0]
    n_rep, n_bas = theta.shape
    for j in range(c):
        t = t0 + j
        in_burn = t < burn
        if in_burn:
            g = (t + 1.0) ** -0.6
            f_acc = np.exp(g * 0.56)
            f_rej = np.exp(-g * 0.44)
        keep = (not in_burn) and ((t - burn) % thin == 0)
        for r in range(n_rep):
            mu_r = mu[r]
            phi_r = phi[r]
            s2 = sig2[r]
            # basket effects: random-walk Metropolis against the shared prior
            for k in range(n_bas):
                th = theta[r, k]
                prop = th + s_th[r, k] * z_th[j, r, k]
                ll_p = y[r, k] * prop - n[k] * _softplus(prop)
                lp_c = -0.5 * (th - mu_r) ** 2 / s2
                lp_p = -0.5 * (prop - mu_r) ** 2 / s2
                ok = lu_th[j, r, k] < ll_p + lp_p - cur_ll[r, k] - lp_c
                if ok:
                    theta[r, k] = prop
                    cur_ll[r, k] = ll_p
                if in_burn:
                    s = s_th[r, k] * (f_acc if ok else f_rej)
                    if s < _SCALE_MIN:
                        s = _SCALE_MIN
                    elif s > _SCALE_MAX:
                        s = _SCALE_MAX
                    s_th[r, k] = s
                else:
                    if ok:
                        acc_th[r, k] += 1.0
            # common mean: exact conjugate normal draw
            s_ex = 0.0
            for k in range(n_bas):
                s_ex += theta[r, k]
            prec = 1.0 / mu_var + n_bas / s2
            mpost = (mu_mean / mu_var + s_ex / s2) / prec
            mu_r = mpost + z_mu[j, r] / np.sqrt(prec)
            mu[r] = mu_r
            # spread: Metropolis on log(sigma) with half-normal prior,
            # jacobian term folded into the log target
            sq = 0.0
            for k in range(n_bas):
                sq += (theta[r, k] - mu_r) ** 2
            phi_p = phi_r + s_si[r] * z_si[j, r]
            s2_p = np.exp(2.0 * phi_p)
            lt_c = -n_bas * phi_r - 0.5 * sq / s2 - s2 * inv2hn2 + phi_r
            lt_p = -n_bas * phi_p - 0.5 * sq / s2_p - s2_p * inv2hn2 + phi_p
            ok_s = lu_si[j, r] < lt_p - lt_c
            if ok_s:
                phi[r] = phi_p
                sig2[r] = s2_p
            if in_burn:
                s = s_si[r] * (f_acc if ok_s else f_rej)
                if s < _SCALE_MIN:
                    s = _SCALE_MIN
                elif s > _SCALE_MAX:
                    s = _SCALE_MAX
                s_si[r] = s
            else:
                if ok_s:
                    acc_si[r] += 1.0
            if keep:
                idx = (t - burn) // thin
                for k in range(n_bas):
                    th = theta[r, k]
                    p_s = 1.0 / (1.0 + np.exp(-th))
                    if th > logit_q0:
                        exceed[r, k] += 1.0
                    sum_p[r, k] += p_s
                    sum_p2[r, k] += p_s * p_s
                    if store_chain:
                        chain_th[idx, r, k] = th


@njit(cache=True)
def exnex_chunk(
    t0, burn, thin, y, n,
    mu_mean, mu_var, inv2hn2, nex_m, nex_v, nex_halflogv, log_pi_ratio,
    theta, cur_ll, s_th, mu, phi, sig2, s_si, delta,
    z_th, lu_th, lgu_de, z_mu, z_si, lu_si,
    logit_q0,
    exceed, sum_p, sum_p2, sum_d, acc_th, acc_si, chain_th, store_chain,
):
    c = z_th.shape[0]
    n_rep, n_bas = theta.shape
    for j in range(c):
        t = t0 + j
        in_burn = t < burn
        if in_burn:
            g = (t + 1.0) ** -0.6
            f_acc = np.exp(g * 0.56)
            f_rej = np.exp(-g * 0.44)
        keep = (not in_burn) and ((t - burn) % thin == 0)
        for r in range(n_rep):
            mu_r = mu[r]
            phi_r = phi[r]
            s2 = sig2[r]
            # membership indicators: exact Bernoulli full conditional,
            # logit(U) < log odds of the exchangeable component
            for k in range(n_bas):
                th = theta[r, k]
                lw1 = -0.5 * (th - mu_r) ** 2 / s2 - phi_r
                lw2 = -0.5 * (th - nex_m[k]) ** 2 / nex_v[k] - nex_halflogv[k]
                d = log_pi_ratio[k] + lw1 - lw2
                delta[r, k] = 1.0 if lgu_de[j, r, k] < d else 0.0
            # basket effects against whichever prior is active
            for k in range(n_bas):
                if delta[r, k] == 1.0:
                    pm = mu_r
                    pv = s2
                else:
                    pm = nex_m[k]
                    pv = nex_v[k]
                th = theta[r, k]
                prop = th + s_th[r, k] * z_th[j, r, k]
                ll_p = y[r, k] * prop - n[k] * _softplus(prop)
                lp_c = -0.5 * (th - pm) ** 2 / pv
                lp_p = -0.5 * (prop - pm) ** 2 / pv
                ok = lu_th[j, r, k] < ll_p + lp_p - cur_ll[r, k] - lp_c
                if ok:
                    theta[r, k] = prop
                    cur_ll[r, k] = ll_p
                if in_burn:
                    s = s_th[r, k] * (f_acc if ok else f_rej)
                    if s < _SCALE_MIN:
                        s = _SCALE_MIN
                    elif s > _SCALE_MAX:
                        s = _SCALE_MAX
                    s_th[r, k] = s
                else:
                    if ok:
                        acc_th[r, k] += 1.0
            # common mean over the exchangeable set; prior-only when empty
            m_ex = 0.0
            s_ex = 0.0
            for k in range(n_bas):
                if delta[r, k] == 1.0:
                    m_ex += 1.0
                    s_ex += theta[r, k]
            prec = 1.0 / mu_var + m_ex / s2
            mpost = (mu_mean / mu_var + s_ex / s2) / prec
            mu_r = mpost + z_mu[j, r] / np.sqrt(prec)
            mu[r] = mu_r
            # spread over the exchangeable set
            sq = 0.0
            for k in range(n_bas):
                if delta[r, k] == 1.0:
                    sq += (theta[r, k] - mu_r) ** 2
            phi_p = phi_r + s_si[r] * z_si[j, r]
            s2_p = np.exp(2.0 * phi_p)
            lt_c = -m_ex * phi_r - 0.5 * sq / s2 - s2 * inv2hn2 + phi_r
            lt_p = -m_ex * phi_p - 0.5 * sq / s2_p - s2_p * inv2hn2 + phi_p
            ok_s = lu_si[j, r] < lt_p - lt_c
            if ok_s:
                phi[r] = phi_p
                sig2[r] = s2_p
            if in_burn:
                s = s_si[r] * (f_acc if ok_s else f_rej)
                if s < _SCALE_MIN:
                    s = _SCALE_MIN
                elif s > _SCALE_MAX:
                    s = _SCALE_MAX
                s_si[r] = s
            else:
                if ok_s:
                    acc_si[r] += 1.0
            if keep:
                idx = (t - burn) // thin
                for k in range(n_bas):
                    th = theta[r, k]
                    p_s = 1.0 / (1.0 + np.exp(-th))
                    if th > logit_q0:
                        exceed[r, k] += 1.0
                    sum_p[r, k] += p_s
                    sum_p2[r, k] += p_s * p_s
                    sum_d[r, k] += delta[r, k]
                    if store_chain:
                        chain_th[idx, r, k] = th

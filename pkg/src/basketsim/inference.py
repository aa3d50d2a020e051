"""Posterior inference for the three analysis models.

Three models share one sampling backbone (adaptive random-walk Metropolis
for the basket log-odds, exact conjugate draws for the common mean, log-scale
Metropolis for the between-basket spread, exact Bernoulli draws for the
mixture indicators):

* ``independent`` - each basket against its own normal prior, no sharing.
* ``bhm``         - all baskets exchangeable around a common mean.
* ``exnex``       - per-basket mixture of the exchangeable component and an
                    independent (nonexchangeable) prior.

``fit_independent`` / ``fit_bhm`` / ``fit_exnex`` fit a single dataset and
return a :class:`PosteriorResult`.  The simulation engine instead calls
:func:`fit_batch`, which advances one chain per dataset row in lock-step;
results for a given row are identical however many worker processes are
used, because all randomness is pre-drawn from named substreams.

``oracle_independent`` is the deterministic cross-check: the independent
model's exceedance probability by one-dimensional quadrature.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from . import kernels, streams
from .trial import BasketData, McmcSettings, PriorSpec, logit

ACCEPT_RANGE = (0.1, 0.6)

FAMILIES = ("independent", "bhm", "exnex")


@dataclass(frozen=True)
class ModelSpec:
    """A model family applied to a subset of baskets (global indices)."""

    family: str
    scope: Tuple[int, ...]

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown model family {self.family!r}")
        scope = tuple(sorted(int(b) for b in self.scope))
        if not scope:
            raise ValueError("model scope must be nonempty")
        if len(set(scope)) != len(scope):
            raise ValueError("model scope has repeated baskets")
        object.__setattr__(self, "scope", scope)
        if self.family == "bhm" and len(scope) < 2:
            raise ValueError("hierarchical model needs at least 2 baskets in scope")


@dataclass(frozen=True)
class PosteriorResult:
    """Per-basket posterior summaries from one fit."""

    baskets: Tuple[int, ...]
    prob_exceed_null: np.ndarray
    post_mean_p: np.ndarray
    post_sd_p: np.ndarray
    accept_rate_theta: np.ndarray
    accept_rate_sigma: Optional[float]
    ess: Optional[np.ndarray]
    post_prob_ex: Optional[np.ndarray] = None
    chain: Optional[np.ndarray] = None

    def basket_index(self, basket: int) -> int:
        return self.baskets.index(basket)


@dataclass
class BatchPosterior:
    """Summaries for a block of independent fits (one per dataset row)."""

    baskets: Tuple[int, ...]
    prob_exceed_null: np.ndarray  # (R, |scope|)
    post_mean_p: np.ndarray
    post_sd_p: np.ndarray
    accept_rate_theta: np.ndarray
    accept_rate_sigma: Optional[np.ndarray]
    post_prob_ex: Optional[np.ndarray] = None

    def column(self, basket: int) -> int:
        return self.baskets.index(basket)


# ---------------------------------------------------------------------------
# prior resolution


def resolve_model_arrays(
    family: str,
    scope: Sequence[int],
    priors: PriorSpec,
    q0: float,
    k_total: int,
) -> dict:
    """Prior arrays restricted to a model scope, defaults filled from q0."""
    scope = tuple(sorted(int(b) for b in scope))
    base = logit(q0)
    out: dict = {"scope": scope}
    if family == "independent":
        mean = priors.ind_mean if priors.ind_mean is not None else base
        out["pm"] = np.full(len(scope), float(mean))
        out["pv"] = np.full(len(scope), float(priors.ind_var))
        return out
    mu_mean = priors.mu_mean if priors.mu_mean is not None else base
    out["mu_mean"] = float(mu_mean)
    out["mu_var"] = float(priors.mu_var)
    out["inv2hn2"] = 1.0 / (2.0 * priors.sigma_scale**2)
    if family == "exnex":
        m, v = priors.nex_mean_var(k_total)
        pi = priors.pi_vector(k_total)
        idx = np.asarray(scope, dtype=int)
        out["nex_m"] = m[idx]
        out["nex_v"] = v[idx]
        out["nex_halflogv"] = 0.5 * np.log(v[idx])
        with np.errstate(divide="ignore"):
            out["log_pi_ratio"] = np.log(pi[idx]) - np.log1p(-pi[idx])
    return out


# ---------------------------------------------------------------------------
# randomness providers

_KIND_3D = {"independent": 2, "bhm": 2, "exnex": 3}  # (c, R, K) blocks per chunk


class _BatchDraws:
    """Chunked draws for a replicate block, from one batch Generator.

    Fixed draw order per chunk: z_theta, u_theta, (u_delta,) then for
    hierarchical families z_mu, z_sigma, u_sigma.  Uniforms are transformed
    in place to log / logit form.
    """

    def __init__(self, gen: np.random.Generator, n_rep: int, n_bas: int, family: str):
        self.gen = gen
        self.family = family
        shape3 = (kernels.CHUNK, n_rep, n_bas)
        shape2 = (kernels.CHUNK, n_rep)
        self.z_th = np.empty(shape3)
        self.lu_th = np.empty(shape3)
        if family == "exnex":
            self.lgu_de = np.empty(shape3)
            self._scratch = np.empty(shape3)
        if family != "independent":
            self.z_mu = np.empty(shape2)
            self.z_si = np.empty(shape2)
            self.lu_si = np.empty(shape2)

    def fill(self, c: int) -> dict:
        gen = self.gen
        out = {}
        z = self.z_th[:c]
        gen.standard_normal(out=z)
        out["z_th"] = z
        lu = self.lu_th[:c]
        gen.random(out=lu)
        with np.errstate(divide="ignore"):
            np.log(lu, out=lu)
        out["lu_th"] = lu
        if self.family == "exnex":
            u = self.lgu_de[:c]
            s = self._scratch[:c]
            gen.random(out=u)
            np.subtract(1.0, u, out=s)
            with np.errstate(divide="ignore"):
                np.log(s, out=s)
                np.log(u, out=u)
            np.subtract(u, s, out=u)
            out["lgu_de"] = u
        if self.family != "independent":
            z_mu = self.z_mu[:c]
            gen.standard_normal(out=z_mu)
            out["z_mu"] = z_mu
            z_si = self.z_si[:c]
            gen.standard_normal(out=z_si)
            out["z_si"] = z_si
            lu_si = self.lu_si[:c]
            gen.random(out=lu_si)
            with np.errstate(divide="ignore"):
                np.log(lu_si, out=lu_si)
            out["lu_si"] = lu_si
        return out


class _KeyedDraws:
    """Chunked draws for a single fit, one substream per basket.

    Basket-local randomness (proposal steps, accept tests, indicator draws)
    comes from the basket's own stream, keyed by ``stream_keys``; shared
    parameters use a common stream.  Permuting baskets together with their
    stream keys therefore permutes the chain exactly.
    """

    def __init__(
        self,
        root: np.random.SeedSequence,
        n_bas: int,
        family: str,
        stream_keys: Sequence[int],
    ):
        if len(stream_keys) != n_bas:
            raise ValueError("need one stream key per basket")
        self.family = family
        self.basket_gens = [
            np.random.default_rng(streams.child(root, int(k) + 1)) for k in stream_keys
        ]
        self.shared_gen = np.random.default_rng(streams.child(root, streams.SHARED_CHILD))
        self.n_bas = n_bas

    def fill(self, c: int) -> dict:
        n_bas = self.n_bas
        kinds = _KIND_3D[self.family]
        cols = np.empty((n_bas, kinds, c))
        for k, gen in enumerate(self.basket_gens):
            cols[k, 0] = gen.standard_normal(c)
            cols[k, 1] = gen.random(c)
            if kinds == 3:
                cols[k, 2] = gen.random(c)
        out = {
            "z_th": np.ascontiguousarray(cols[:, 0].T.reshape(c, 1, n_bas)),
        }
        with np.errstate(divide="ignore"):
            out["lu_th"] = np.ascontiguousarray(
                np.log(cols[:, 1]).T.reshape(c, 1, n_bas)
            )
            if kinds == 3:
                u = cols[:, 2]
                out["lgu_de"] = np.ascontiguousarray(
                    (np.log(u) - np.log1p(-u)).T.reshape(c, 1, n_bas)
                )
        if self.family != "independent":
            gen = self.shared_gen
            out["z_mu"] = gen.standard_normal(c).reshape(c, 1)
            out["z_si"] = gen.standard_normal(c).reshape(c, 1)
            with np.errstate(divide="ignore"):
                out["lu_si"] = np.log(gen.random(c)).reshape(c, 1)
        return out


# ---------------------------------------------------------------------------
# chain driver


def _initial_theta(y: np.ndarray, n: np.ndarray) -> np.ndarray:
    return np.log((y + 0.5) / (n - y + 0.5))


def _run_chains(
    family: str,
    y: np.ndarray,
    n: np.ndarray,
    arrays: dict,
    q0: float,
    mcmc: McmcSettings,
    draws,
    store_chain: bool = False,
) -> dict:
    n_rep, n_bas = y.shape
    y = y.astype(np.float64)
    n = np.asarray(n, dtype=np.float64)
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(n))):
        raise ValueError("non-finite data")
    logit_q0 = logit(q0)

    theta = _initial_theta(y, n)
    cur_ll = y * theta - n * np.logaddexp(0.0, theta)
    s_th = np.full((n_rep, n_bas), float(mcmc.proposal_sd_init))
    exceed = np.zeros((n_rep, n_bas))
    sum_p = np.zeros((n_rep, n_bas))
    sum_p2 = np.zeros((n_rep, n_bas))
    acc_th = np.zeros((n_rep, n_bas))
    chain = np.zeros((mcmc.samples if store_chain else 0, n_rep, n_bas))

    if family != "independent":
        mu = np.full(n_rep, arrays["mu_mean"])
        phi = np.full(n_rep, math.log(0.5))
        sig2 = np.full(n_rep, 0.25)
        s_si = np.full(n_rep, 0.5)
        acc_si = np.zeros(n_rep)
    if family == "exnex":
        delta = np.ones((n_rep, n_bas))
        sum_d = np.zeros((n_rep, n_bas))

    total = mcmc.total_iterations
    it = 0
    while it < total:
        c = min(kernels.CHUNK, total - it)
        d = draws.fill(c)
        if family == "independent":
            kernels.independent_chunk(
                it, mcmc.burn_in, mcmc.thin, y, n, arrays["pm"], arrays["pv"],
                theta, cur_ll, s_th, d["z_th"], d["lu_th"], logit_q0,
                exceed, sum_p, sum_p2, acc_th, chain, store_chain,
            )
        elif family == "bhm":
            kernels.bhm_chunk(
                it, mcmc.burn_in, mcmc.thin, y, n,
                arrays["mu_mean"], arrays["mu_var"], arrays["inv2hn2"],
                theta, cur_ll, s_th, mu, phi, sig2, s_si,
                d["z_th"], d["lu_th"], d["z_mu"], d["z_si"], d["lu_si"], logit_q0,
                exceed, sum_p, sum_p2, acc_th, acc_si, chain, store_chain,
            )
        else:
            kernels.exnex_chunk(
                it, mcmc.burn_in, mcmc.thin, y, n,
                arrays["mu_mean"], arrays["mu_var"], arrays["inv2hn2"],
                arrays["nex_m"], arrays["nex_v"], arrays["nex_halflogv"],
                arrays["log_pi_ratio"],
                theta, cur_ll, s_th, mu, phi, sig2, s_si, delta,
                d["z_th"], d["lu_th"], d["lgu_de"], d["z_mu"], d["z_si"], d["lu_si"],
                logit_q0,
                exceed, sum_p, sum_p2, sum_d, acc_th, acc_si, chain, store_chain,
            )
        it += c

    samples = float(mcmc.samples)
    post_iters = float(total - mcmc.burn_in)
    prob = exceed / samples
    mean_p = sum_p / samples
    var_p = np.maximum(sum_p2 / samples - mean_p**2, 0.0)
    out = {
        "prob": prob,
        "mean_p": mean_p,
        "sd_p": np.sqrt(var_p),
        "acc_th": acc_th / post_iters,
        "acc_si": (acc_si / post_iters) if family != "independent" else None,
        "prob_ex": (sum_d / samples) if family == "exnex" else None,
        "chain": chain if store_chain else None,
    }
    if not np.all(np.isfinite(out["mean_p"])):
        raise RuntimeError("sampler produced non-finite posterior summaries")
    return out


def fit_batch(
    family: str,
    y: np.ndarray,
    n: Sequence[int],
    scope: Sequence[int],
    priors: PriorSpec,
    q0: float,
    mcmc: McmcSettings,
    gen: np.random.Generator,
    k_total: Optional[int] = None,
) -> BatchPosterior:
    """Fit one model to a block of datasets.

    ``y`` has shape (R, K_total); columns outside ``scope`` are ignored.
    """
    scope = tuple(sorted(int(b) for b in scope))
    k_total = k_total if k_total is not None else y.shape[1]
    arrays = resolve_model_arrays(family, scope, priors, q0, k_total)
    idx = np.asarray(scope, dtype=int)
    y_s = np.ascontiguousarray(y[:, idx], dtype=np.float64)
    n_s = np.asarray(n, dtype=np.float64)[idx]
    draws = _BatchDraws(gen, y_s.shape[0], len(scope), family)
    res = _run_chains(family, y_s, n_s, arrays, q0, mcmc, draws)
    acc = res["acc_th"].mean(axis=0)
    if np.any(acc < ACCEPT_RANGE[0]) or np.any(acc > ACCEPT_RANGE[1]):
        warnings.warn(
            f"{family} batch acceptance rates outside {ACCEPT_RANGE}: {acc.round(3)}",
            RuntimeWarning,
            stacklevel=2,
        )
    return BatchPosterior(
        baskets=scope,
        prob_exceed_null=res["prob"],
        post_mean_p=res["mean_p"],
        post_sd_p=res["sd_p"],
        accept_rate_theta=res["acc_th"],
        accept_rate_sigma=res["acc_si"],
        post_prob_ex=res["prob_ex"],
    )


def _fit_single(
    family: str,
    data: BasketData,
    priors: PriorSpec,
    q0: float,
    scope: Sequence[int],
    mcmc: McmcSettings,
    rng: streams.SeedLike,
    stream_keys: Optional[Sequence[int]] = None,
    keep_chain: bool = False,
) -> PosteriorResult:
    scope = tuple(sorted(int(b) for b in scope))
    if any(b < 0 or b >= data.k for b in scope):
        raise ValueError("scope indices out of range")
    keys = tuple(stream_keys) if stream_keys is not None else scope
    arrays = resolve_model_arrays(family, scope, priors, q0, data.k)
    y = np.array([[data.y[b] for b in scope]], dtype=np.float64)
    n = np.array([data.n[b] for b in scope], dtype=np.float64)
    draws = _KeyedDraws(streams.as_seedseq(rng), len(scope), family, keys)
    res = _run_chains(family, y, n, arrays, q0, mcmc, draws, store_chain=True)
    acc = res["acc_th"][0]
    if np.any(acc < ACCEPT_RANGE[0]) or np.any(acc > ACCEPT_RANGE[1]):
        warnings.warn(
            f"{family} acceptance rates outside {ACCEPT_RANGE}: {acc.round(3)}",
            RuntimeWarning,
            stacklevel=3,
        )
    chain = res["chain"][:, 0, :]
    ess = np.array([effective_sample_size(chain[:, k]) for k in range(len(scope))])
    return PosteriorResult(
        baskets=scope,
        prob_exceed_null=res["prob"][0],
        post_mean_p=res["mean_p"][0],
        post_sd_p=res["sd_p"][0],
        accept_rate_theta=acc,
        accept_rate_sigma=float(res["acc_si"][0]) if res["acc_si"] is not None else None,
        ess=ess,
        post_prob_ex=res["prob_ex"][0] if res["prob_ex"] is not None else None,
        chain=chain if keep_chain else None,
    )


def fit_independent(
    data: BasketData,
    priors: PriorSpec,
    q0: float,
    mcmc: McmcSettings,
    rng: streams.SeedLike,
    scope: Optional[Sequence[int]] = None,
    stream_keys: Optional[Sequence[int]] = None,
    keep_chain: bool = False,
) -> PosteriorResult:
    """Stratified analysis: each basket against its own normal prior."""
    scope = tuple(range(data.k)) if scope is None else scope
    return _fit_single("independent", data, priors, q0, scope, mcmc, rng,
                       stream_keys, keep_chain)


def fit_bhm(
    data: BasketData,
    priors: PriorSpec,
    q0: float,
    mcmc: McmcSettings,
    rng: streams.SeedLike,
    scope: Optional[Sequence[int]] = None,
    stream_keys: Optional[Sequence[int]] = None,
    keep_chain: bool = False,
) -> PosteriorResult:
    """Fully exchangeable hierarchical analysis over the scope."""
    scope = tuple(range(data.k)) if scope is None else tuple(scope)
    if len(scope) < 2:
        raise ValueError("hierarchical model needs at least 2 baskets in scope")
    return _fit_single("bhm", data, priors, q0, scope, mcmc, rng,
                       stream_keys, keep_chain)


def fit_exnex(
    data: BasketData,
    priors: PriorSpec,
    q0: float,
    scope: Sequence[int],
    mcmc: McmcSettings,
    rng: streams.SeedLike,
    stream_keys: Optional[Sequence[int]] = None,
    keep_chain: bool = False,
) -> PosteriorResult:
    """Exchangeable/nonexchangeable mixture analysis over the scope."""
    return _fit_single("exnex", data, priors, q0, scope, mcmc, rng,
                       stream_keys, keep_chain)


# ---------------------------------------------------------------------------
# deterministic oracle


def _log_density_integral(
    y: float, n: float, pm: float, pv: float, lo: float, hi: float, panels: int
) -> Tuple[float, float]:
    """Integral of the unnormalized posterior over [lo, hi] via Simpson.

    Returns (value, log_shift) with the true integral = value * exp(log_shift).
    """
    if hi <= lo:
        return 0.0, 0.0
    if panels % 2:
        panels += 1
    th = np.linspace(lo, hi, panels + 1)
    ll = y * th - n * np.logaddexp(0.0, th) - 0.5 * (th - pm) ** 2 / pv
    shift = ll.max()
    f = np.exp(ll - shift)
    h = (hi - lo) / panels
    w = np.ones(panels + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return float((f * w).sum() * h / 3.0), float(shift)


def oracle_independent(
    y: int,
    n: int,
    prior_mean: float,
    prior_var: float,
    q0: float,
    panels: int = 2048,
) -> float:
    """Exceedance probability of the independent model by quadrature.

    Integrates Binomial(n, expit(theta)) x Normal(theta; prior_mean,
    prior_var) on each side of logit(q0), over prior_mean +/- 12 prior sd,
    and refines the panel count until two successive answers agree to 1e-6.
    """
    if not 0 <= y <= n:
        raise ValueError("need 0 <= y <= n")
    if prior_var <= 0:
        raise ValueError("prior_var must be positive")
    if not 0.0 < q0 < 1.0:
        raise ValueError("q0 must lie in (0, 1)")
    sd = math.sqrt(prior_var)
    lo, hi = prior_mean - 12.0 * sd, prior_mean + 12.0 * sd
    cut = logit(q0)

    def estimate(num: int) -> float:
        mid = min(max(cut, lo), hi)
        below, sh_b = _log_density_integral(y, n, prior_mean, prior_var, lo, mid, num)
        above, sh_a = _log_density_integral(y, n, prior_mean, prior_var, mid, hi, num)
        shift = max(sh_b if below > 0 else -math.inf, sh_a if above > 0 else -math.inf)
        if not math.isfinite(shift):
            raise RuntimeError("quadrature failed: degenerate posterior mass")
        b = below * math.exp(sh_b - shift)
        a = above * math.exp(sh_a - shift)
        total = a + b
        if not math.isfinite(total) or total <= 0.0:
            raise RuntimeError("quadrature failed: degenerate posterior mass")
        return a / total

    first = estimate(panels)
    second = estimate(2 * panels)
    if not math.isfinite(second) or abs(first - second) > 1e-6:
        raise RuntimeError("quadrature did not converge to 1e-6")
    return second


def effective_sample_size(chain: np.ndarray) -> float:
    """Autocorrelation-based ESS (initial positive sequence of paired sums)."""
    x = np.asarray(chain, dtype=float)
    n = x.size
    if n < 4:
        return float(n)
    x = x - x.mean()
    var = float(np.dot(x, x)) / n
    if var <= 0.0:
        return float(n)
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:n].real / n
    rho = acov / acov[0]
    tau = 0.0
    m = 0
    while 2 * m + 1 < n:
        pair = rho[2 * m] + rho[2 * m + 1]
        if pair <= 0.0:
            break
        tau += 2.0 * pair
        m += 1
    tau -= 1.0  # rho_0 counted twice
    tau = max(tau, 1.0)
    return float(min(n / tau, n))

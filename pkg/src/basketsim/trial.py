"""Trial domain types, prior specifications and scenario/data generation.

A trial has ``k_existing`` baskets open from the start and ``k_new`` baskets
added mid-study; baskets are indexed existing-first (0-based internally).
Responses are binomial per basket and all modelling happens on the log-odds
scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from . import streams


def logit(p: float) -> float:
    return math.log(p / (1.0 - p))


def expit(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


def nex_params(rho: float) -> Tuple[float, float]:
    """Independent-prior mean/variance derived from a plausible response rate.

    Args:
        rho: plausible guess for the true response rate, in (0, 1).

    Returns:
        (m, nu): prior mean ``logit(rho)`` and prior variance
        ``1/rho + 1/(1-rho)`` for the basket's log-odds.
    """
    if not 0.0 < rho < 1.0:
        raise ValueError(f"rho must lie in (0, 1), got {rho}")
    return logit(rho), 1.0 / rho + 1.0 / (1.0 - rho)


def _as_float_tuple(x: Union[float, Sequence[float]], k: int, name: str) -> Tuple[float, ...]:
    if np.isscalar(x):
        return (float(x),) * k
    vals = tuple(float(v) for v in x)
    if len(vals) != k:
        raise ValueError(f"{name} must have length {k}, got {len(vals)}")
    return vals


@dataclass(frozen=True)
class PriorSpec:
    """Prior hyperparameters for the three analysis models.

    ``ind_mean`` and ``mu_mean`` default to ``logit(q0)`` of the design they
    are used with (resolved at fit time when left as None).  Normal
    distributions are parameterized by variance throughout.
    """

    ind_mean: Optional[float] = None
    ind_var: float = 100.0
    mu_mean: Optional[float] = None
    mu_var: float = 100.0
    sigma_scale: float = 1.0  # half-normal scale for the between-basket spread
    nex_guess: Union[float, Tuple[float, ...]] = 0.3
    pi: Union[float, Tuple[float, ...]] = 0.5

    def __post_init__(self):
        for name in ("ind_var", "mu_var"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.sigma_scale <= 0:
            raise ValueError("sigma_scale must be positive")
        for rho in np.atleast_1d(np.asarray(self.nex_guess, dtype=float)):
            if not 0.0 < rho < 1.0:
                raise ValueError("nex_guess values must lie in (0, 1)")
        for p in np.atleast_1d(np.asarray(self.pi, dtype=float)):
            if not 0.0 <= p <= 1.0:
                raise ValueError("pi values must lie in [0, 1]")

    def nex_mean_var(self, k: int) -> Tuple[np.ndarray, np.ndarray]:
        """Per-basket nonexchangeable prior means and variances."""
        rho = _as_float_tuple(self.nex_guess, k, "nex_guess")
        pairs = [nex_params(r) for r in rho]
        m = np.array([p[0] for p in pairs])
        v = np.array([p[1] for p in pairs])
        return m, v

    def pi_vector(self, k: int) -> np.ndarray:
        return np.array(_as_float_tuple(self.pi, k, "pi"))


@dataclass(frozen=True)
class McmcSettings:
    """Chain-length and tuning knobs for the built-in sampler.

    Defaults are sized so a mixture-model fit keeps an effective sample size
    above 1000 per basket parameter despite chain autocorrelation.
    """

    burn_in: int = 5000
    samples: int = 16000
    thin: int = 1
    seed: int = 0
    proposal_sd_init: float = 1.0

    def __post_init__(self):
        if self.burn_in < 0:
            raise ValueError("burn_in must be >= 0")
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.proposal_sd_init <= 0:
            raise ValueError("proposal_sd_init must be positive")

    @property
    def total_iterations(self) -> int:
        return self.burn_in + self.samples * self.thin

    def fingerprint(self) -> tuple:
        return (self.burn_in, self.samples, self.thin, self.proposal_sd_init)


@dataclass(frozen=True)
class TrialDesign:
    """Static description of a basket trial with mid-study additions."""

    k_existing: int
    k_new: int
    n: Tuple[int, ...]
    q0: float
    q1: float
    q2: Optional[float] = None
    alpha: float = 0.1
    priors: PriorSpec = field(default_factory=PriorSpec)
    approach: Optional[str] = None
    mcmc: McmcSettings = field(default_factory=McmcSettings)

    def __post_init__(self):
        if self.k_existing < 1:
            raise ValueError("at least one existing basket required")
        if self.k_new < 0:
            raise ValueError("k_new must be >= 0")
        object.__setattr__(self, "n", tuple(int(v) for v in self.n))
        if len(self.n) != self.k_total:
            raise ValueError(f"n must have length {self.k_total}")
        if any(v < 0 for v in self.n):
            raise ValueError("sample sizes must be >= 0")
        if not 0.0 < self.q0 < self.q1 < 1.0:
            raise ValueError("need 0 < q0 < q1 < 1")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")

    @property
    def k_total(self) -> int:
        return self.k_existing + self.k_new

    @property
    def existing(self) -> Tuple[int, ...]:
        return tuple(range(self.k_existing))

    @property
    def new(self) -> Tuple[int, ...]:
        return tuple(range(self.k_existing, self.k_total))

    def with_new_size(self, n_new: int) -> "TrialDesign":
        """Copy of the design with every new basket resized to ``n_new``."""
        n = list(self.n)
        for b in self.new:
            n[b] = int(n_new)
        return replace(self, n=tuple(n))


@dataclass(frozen=True)
class Scenario:
    """A vector of true response rates, optionally weighted.

    ``seed_key`` pins the scenario's RNG identity; scenarios without one use
    their position in whatever list they are passed in.  Keeping the key
    explicit lets a study re-use the exact datasets a calibration generated,
    and makes a duplicated scenario reproduce the original's draws.
    """

    p: Tuple[float, ...]
    weight: int = 1
    label: str = ""
    seed_key: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "p", tuple(float(v) for v in self.p))
        if any(not 0.0 < v < 1.0 for v in self.p):
            raise ValueError("scenario rates must lie in (0, 1)")
        if int(self.weight) != self.weight or self.weight < 1:
            raise ValueError("weight must be a positive integer")
        object.__setattr__(self, "weight", int(self.weight))

    def null_mask(self, q0: float) -> np.ndarray:
        """True where a basket's rate does not exceed the null rate."""
        return np.asarray(self.p) <= q0


def effective_seed_key(scenario: Scenario, position: int) -> int:
    return scenario.seed_key if scenario.seed_key is not None else position


@dataclass(frozen=True)
class BasketData:
    """Observed response counts for one dataset."""

    y: Tuple[int, ...]
    n: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "y", tuple(int(v) for v in self.y))
        object.__setattr__(self, "n", tuple(int(v) for v in self.n))
        if len(self.y) != len(self.n):
            raise ValueError("y and n must have equal length")
        if any(v < 0 for v in self.n):
            raise ValueError("sample sizes must be >= 0")
        if any(not 0 <= yk <= nk for yk, nk in zip(self.y, self.n)):
            raise ValueError("need 0 <= y_k <= n_k in every basket")

    @property
    def k(self) -> int:
        return len(self.y)


def generate_data(
    scenario: Scenario,
    n: Sequence[int],
    rng: Union[int, np.random.SeedSequence, np.random.Generator],
) -> BasketData:
    """Draw one dataset: independent Binomial(n_k, p_k) per basket.

    Baskets are drawn in index order, so draws for basket ``k`` never depend
    on the sizes or rates of later baskets.
    """
    if len(scenario.p) != len(n):
        raise ValueError("scenario length must match n")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(streams.as_seedseq(rng))
    n_arr = np.asarray(n, dtype=np.int64)
    y = rng.binomial(n_arr, np.asarray(scenario.p))
    return BasketData(y=tuple(int(v) for v in y), n=tuple(int(v) for v in n_arr))


def generate_data_batch(
    p: Sequence[float],
    n: Sequence[int],
    master_seed: int,
    scenario_key: int,
    replicates: int,
) -> np.ndarray:
    """Datasets for replicates 0..R-1 of one scenario, as an (R, K) array.

    Replicate ``r`` is drawn from its own substream, so the array's rows do
    not depend on R or on which other replicates were generated.
    """
    n_arr = np.asarray(n, dtype=np.int64)
    p_arr = np.asarray(p, dtype=float)
    out = np.empty((replicates, len(n_arr)), dtype=np.int64)
    for r in range(replicates):
        gen = streams.data_stream(master_seed, scenario_key, r)
        out[r] = gen.binomial(n_arr, p_arr)
    return out


def generate_random_truth_batch(
    existing_p: Sequence[float],
    interval: Tuple[float, float],
    n: Sequence[int],
    master_seed: int,
    scenario_key: int,
    replicates: int,
    new_baskets: Sequence[int],
) -> Tuple[np.ndarray, np.ndarray]:
    """Datasets where each new basket's true rate is drawn per replicate.

    Returns ``(y, p)`` with shapes (R, K); new-basket rates are uniform on
    ``interval`` and drawn before the response counts so that existing-basket
    draws stay aligned with the fixed-scenario generator.
    """
    lo, hi = float(interval[0]), float(interval[1])
    if not 0.0 < lo < hi < 1.0:
        raise ValueError("interval must satisfy 0 < lo < hi < 1")
    n_arr = np.asarray(n, dtype=np.int64)
    k = len(n_arr)
    new_baskets = tuple(new_baskets)
    base_p = np.zeros(k)
    base_p[: len(existing_p)] = existing_p
    y = np.empty((replicates, k), dtype=np.int64)
    p = np.empty((replicates, k), dtype=float)
    for r in range(replicates):
        gen = streams.data_stream(master_seed, scenario_key, r)
        row = base_p.copy()
        for b in new_baskets:
            row[b] = gen.uniform(lo, hi)
        p[r] = row
        y[r] = gen.binomial(n_arr, row)
    return y, p


# ---------------------------------------------------------------------------
# scenario catalogues

# 16-scenario grid for the 4-existing + 1-new reference design: every basket
# is ineffective (q0), effective (q1) or marginally effective (q2).
_GRID_4PLUS1 = [
    (0.2, 0.2, 0.2, 0.2, 0.2),
    (0.4, 0.2, 0.2, 0.2, 0.2),
    (0.4, 0.4, 0.2, 0.2, 0.2),
    (0.4, 0.4, 0.4, 0.2, 0.2),
    (0.4, 0.4, 0.4, 0.4, 0.2),
    (0.4, 0.4, 0.4, 0.4, 0.4),
    (0.2, 0.2, 0.2, 0.2, 0.4),
    (0.4, 0.2, 0.2, 0.2, 0.4),
    (0.4, 0.4, 0.2, 0.2, 0.4),
    (0.4, 0.4, 0.4, 0.2, 0.4),
    (0.3, 0.2, 0.2, 0.2, 0.2),
    (0.3, 0.3, 0.2, 0.2, 0.2),
    (0.3, 0.2, 0.2, 0.2, 0.3),
    (0.3, 0.3, 0.2, 0.2, 0.3),
    (0.4, 0.3, 0.2, 0.2, 0.3),
    (0.4, 0.3, 0.3, 0.2, 0.3),
]

# 9-scenario grid for the 2-existing + 2-new design
_GRID_2PLUS2 = [
    (0.2, 0.2, 0.2, 0.2),
    (0.4, 0.2, 0.2, 0.2),
    (0.4, 0.4, 0.2, 0.2),
    (0.4, 0.4, 0.4, 0.2),
    (0.2, 0.2, 0.4, 0.2),
    (0.4, 0.2, 0.4, 0.2),
    (0.2, 0.2, 0.4, 0.4),
    (0.4, 0.2, 0.4, 0.4),
    (0.4, 0.4, 0.4, 0.4),
]


def _label_scenarios(grid) -> list:
    return [
        Scenario(p=row, label=f"scenario_{i + 1}", seed_key=i)
        for i, row in enumerate(grid)
    ]


def _is_reference_4plus1(design: TrialDesign) -> bool:
    return (
        design.k_total == 5
        and design.k_existing == 4
        and design.q0 == 0.2
        and design.q1 == 0.4
        and design.q2 == 0.3
    )


def _is_reference_2plus2(design: TrialDesign) -> bool:
    return (
        design.k_total == 4
        and design.k_existing == 2
        and design.q0 == 0.2
        and design.q1 == 0.4
    )


def standard_scenarios(design: TrialDesign) -> list:
    """Full evaluation grid for a design.

    The two reference designs get their fixed catalogues; any other design
    gets every global/partial-null combination over {q0, q1} (all vectors
    with at least one basket at q0), ordered by number of effective baskets.
    """
    if _is_reference_4plus1(design):
        return _label_scenarios(_GRID_4PLUS1)
    if _is_reference_2plus2(design):
        return _label_scenarios(_GRID_2PLUS2)
    k = design.k_total
    combos = []
    for bits in range(2**k):
        p = tuple(
            design.q1 if bits & (1 << j) else design.q0 for j in range(k)
        )
        if design.q0 in p:
            combos.append((bin(bits).count("1"), p))
    combos.sort()
    return [
        Scenario(p=p, label=f"scenario_{i + 1}", seed_key=i)
        for i, (_, p) in enumerate(combos)
    ]


def nested_null_scenarios(design: TrialDesign) -> list:
    """Global plus nested partial nulls: j leading baskets effective, j = 0..K-1.

    The last basket stays at the null rate in every scenario, so each
    scenario can contribute to a type-I-error calibration.  For the
    4-existing + 1-new reference design this is exactly the first five rows
    of the evaluation grid, sharing their seed keys.
    """
    k = design.k_total
    return [
        Scenario(
            p=(design.q1,) * j + (design.q0,) * (k - j),
            label=f"scenario_{j + 1}",
            seed_key=j,
        )
        for j in range(k)
    ]


def two_plus_two_calibration_scenarios(design: TrialDesign) -> list:
    """Calibration grid for the 2+2 design: rows 1-8 (those with a null basket)."""
    if not _is_reference_2plus2(design):
        raise ValueError("two_plus_two scenarios require the 2-existing + 2-new design")
    return _label_scenarios(_GRID_2PLUS2)[:8]


def paper_design_4plus1(**overrides) -> TrialDesign:
    """Reference design: 4 existing baskets of 24, one new basket of 14."""
    base = dict(
        k_existing=4,
        k_new=1,
        n=(24, 24, 24, 24, 14),
        q0=0.2,
        q1=0.4,
        q2=0.3,
        alpha=0.1,
    )
    base.update(overrides)
    return TrialDesign(**base)


def paper_design_2plus2(**overrides) -> TrialDesign:
    """Reference design: 2 existing baskets of 24, two new baskets of 14."""
    base = dict(
        k_existing=2,
        k_new=2,
        n=(24, 24, 14, 14),
        q0=0.2,
        q1=0.4,
        q2=0.3,
        alpha=0.1,
    )
    base.update(overrides)
    return TrialDesign(**base)


RANDOM_TRUTH_SETTINGS = {
    1: (0.2, 0.2, 0.2, 0.2),
    2: (0.4, 0.4, 0.4, 0.4),
    3: (0.4, 0.4, 0.2, 0.2),
    4: (0.4, 0.3, 0.3, 0.2),
}

RANDOM_TRUTH_INTERVALS = {
    "a": (0.2, 0.3),
    "b": (0.4, 0.5),
    "c": (0.1, 0.2),
}

"""Decision-cutoff calibration.

Cutoffs are the empirical upper quantiles of posterior exceedance
probabilities simulated under truth scenarios:

* ``global_null`` - the traditional route: one scenario with every basket at
  the null rate, each basket's cutoff controlling its own type I error.
* ``rcap``        - robust calibration across several weighted scenarios, so
  the error rate is controlled on average over the scenario set rather than
  at the global null only.

For each scenario and replicate the approach's calibration models are
fitted and a basket's exceedance probability joins its pool whenever the
basket satisfies the basket-specific criterion there (for type I error:
truth at or below the null rate), repeated once per unit of scenario weight.
Each cutoff is the ceil((1-alpha)N)-th order statistic of its pool, and
baskets of equal sample size share the cutoff of the group member that
satisfied the criterion in the most scenarios.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .approaches import (
    Approach,
    CutoffSet,
    calibration_plan,
    unpl_cutoff_assignment,
)
from .engine import StudyRunner
from .trial import Scenario, TrialDesign, effective_seed_key

METHOD_GLOBAL_NULL = "global_null"
METHOD_RCAP = "rcap"
METHODS = (METHOD_GLOBAL_NULL, METHOD_RCAP)


class CalibrationInfeasible(RuntimeError):
    """No scenario contributed to a basket that needs a cutoff."""

    def __init__(self, basket: int):
        self.basket = basket
        super().__init__(
            f"basket {basket + 1} never satisfies the calibration criterion in "
            f"any scenario, so its cutoff pool is empty"
        )


def type_one_criterion(q0: float) -> Callable[[float], bool]:
    """Basket contributes when its truth is null (at or below q0)."""
    return lambda p: p <= q0


@dataclass(frozen=True)
class CalibrationSpec:
    """What to calibrate against: scenarios, effort and target level."""

    method: str
    scenarios: Tuple[Scenario, ...]
    replicates: int
    alpha: float
    criterion: Optional[Callable[[float], bool]] = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        object.__setattr__(self, "scenarios", tuple(self.scenarios))
        if not self.scenarios:
            raise ValueError("at least one calibration scenario required")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")

    def resolved_criterion(self, design: TrialDesign) -> Callable[[float], bool]:
        return self.criterion if self.criterion is not None else type_one_criterion(design.q0)


def validate_calibration_spec(spec: CalibrationSpec, design: TrialDesign) -> None:
    k = design.k_total
    for i, sc in enumerate(spec.scenarios):
        if len(sc.p) != k:
            raise ValueError(
                f"calibration scenario {i + 1} has {len(sc.p)} baskets, design has {k}"
            )
    crit = spec.resolved_criterion(design)
    if spec.method == METHOD_GLOBAL_NULL:
        if len(spec.scenarios) != 1:
            raise ValueError("global_null calibration takes exactly one scenario")
        if any(p != design.q0 for p in spec.scenarios[0].p):
            raise ValueError("global_null calibration scenario must put every basket at q0")
    else:
        for i, sc in enumerate(spec.scenarios):
            if not any(crit(p) for p in sc.p):
                raise ValueError(
                    f"calibration scenario {i + 1} ({sc.label or sc.p}) has no basket "
                    f"satisfying the criterion and cannot contribute"
                )


def empirical_quantile(values: Sequence[float], level: float) -> float:
    """Upper order statistic at rank ceil(level * N), no interpolation.

    The fraction of values strictly above the result is at most 1 - level.
    """
    arr = np.sort(np.asarray(values, dtype=float))
    if arr.size == 0:
        raise ValueError("empirical_quantile of empty values")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    rank = max(1, math.ceil(level * arr.size))
    return float(arr[min(rank, arr.size) - 1])


def criterion_counts(
    scenarios: Sequence[Scenario],
    criterion: Callable[[float], bool],
    baskets: Sequence[int],
) -> Dict[int, int]:
    """Per basket, how many scenarios satisfy the contribution criterion."""
    return {
        b: sum(1 for sc in scenarios if criterion(sc.p[b])) for b in baskets
    }


def equal_size_group_rule(
    n: Sequence[int],
    scenarios: Sequence[Scenario],
    criterion: Callable[[float], bool],
    deltas: Dict[int, float],
    baskets: Optional[Sequence[int]] = None,
) -> Dict[int, float]:
    """Share cutoffs within groups of equal sample size.

    Within each group the basket satisfying the criterion in the most
    scenarios (ties to the lowest index) lends its cutoff to the whole
    group; that basket's pool spans the most scenarios, so the shared cutoff
    is backed by the widest evidence.  Singleton groups pass through.
    """
    baskets = tuple(baskets) if baskets is not None else tuple(sorted(deltas))
    counts = criterion_counts(scenarios, criterion, baskets)
    out: Dict[int, float] = {}
    groups: Dict[int, List[int]] = {}
    for b in baskets:
        groups.setdefault(int(n[b]), []).append(b)
    for members in groups.values():
        members.sort()
        pivot = max(members, key=lambda b: (counts[b], -b))
        if pivot not in deltas:
            raise CalibrationInfeasible(pivot)
        for b in members:
            out[b] = deltas[pivot]
    return out


def calibrate(
    spec: CalibrationSpec,
    design: TrialDesign,
    approach: Approach,
    master_seed: Optional[int] = None,
    runner: Optional[StudyRunner] = None,
    threads: int = 1,
) -> CutoffSet:
    """Calibrate per-basket cutoffs for one approach.

    Replicate datasets and fit randomness are keyed by scenario, so adding
    scenarios to the list never perturbs the draws of existing ones, and a
    study re-run over the same scenarios with the same master seed sees
    exactly the calibration's posterior probabilities.
    """
    if runner is None:
        if master_seed is None:
            raise ValueError("pass a master_seed or a runner")
        runner = StudyRunner(design, master_seed, threads=threads)
    validate_calibration_spec(spec, design)
    criterion = spec.resolved_criterion(design)
    plan = calibration_plan(approach, design)

    tasks = {}
    for i, sc in enumerate(spec.scenarios):
        key = effective_seed_key(sc, i)
        for assignment in plan:
            tasks[(key, sc.p, assignment.model)] = runner.task(
                key, sc.p, assignment.model, spec.replicates
            )
    runner.prefetch(tasks.values())

    pools: Dict[int, List[np.ndarray]] = {}
    for i, sc in enumerate(spec.scenarios):
        key = effective_seed_key(sc, i)
        for assignment in plan:
            fit = runner.fits(tasks[(key, sc.p, assignment.model)])
            for b in assignment.decides:
                if criterion(sc.p[b]):
                    col = fit.prob_exceed_null[:, fit.column(b)]
                    pools.setdefault(b, []).extend([col] * sc.weight)

    raw: Dict[int, float] = {
        b: empirical_quantile(np.concatenate(cols), 1.0 - spec.alpha)
        for b, cols in pools.items()
    }

    # share cutoffs within equal-size groups, separately per calibration model
    delta: Dict[int, float] = {}
    for assignment in plan:
        subset = assignment.decides
        sub_raw = {b: raw[b] for b in subset if b in raw}
        delta.update(
            equal_size_group_rule(design.n, spec.scenarios, criterion, sub_raw, subset)
        )

    if approach is Approach.UNPL and design.k_new:
        existing = list(design.existing)
        for b in design.new:
            delta[b] = unpl_cutoff_assignment(
                [delta[e] for e in existing],
                [design.n[e] for e in existing],
                design.n[b],
            )

    missing = [b for b in range(design.k_total) if b not in delta]
    if missing:
        raise CalibrationInfeasible(missing[0])

    return CutoffSet(
        delta=tuple(delta[b] for b in range(design.k_total)),
        method=spec.method,
        scenario_labels=tuple(sc.label or f"scenario_{i + 1}"
                              for i, sc in enumerate(spec.scenarios)),
        seed=runner.master_seed,
        approach=approach.value,
    )

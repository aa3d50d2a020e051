"""The approaches for analysing a trial that adds baskets mid-study.

Every approach analyses existing baskets with an exchangeability-mixture
(exnex) model; they differ in how new baskets are handled and in which model
backs the calibration of each basket's decision cutoff:

* ``ind_a`` - new baskets analysed independently (calibrated the same way).
* ``ind_b`` - new baskets share a second exnex model among themselves.
* ``unpl``  - unplanned addition: cutoffs calibrated on the existing baskets
  only; at analysis one exnex model spans all baskets and each new basket
  inherits the cutoff of the existing basket closest in sample size.
* ``pl1``   - planned addition, one exnex model over all baskets for both
  calibration and analysis.
* ``pl2``   - planned addition, two models: existing baskets keep their
  existing-only exnex model, new baskets read from the all-basket model.

A decision declares the treatment effective in basket k when the posterior
probability that its rate exceeds the null strictly exceeds the basket's
cutoff.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import streams
from .inference import ModelSpec, fit_exnex, fit_independent
from .trial import BasketData, TrialDesign


class Approach(Enum):
    IND_A = "ind_a"
    IND_B = "ind_b"
    UNPL = "unpl"
    PL1 = "pl1"
    PL2 = "pl2"

    @classmethod
    def parse(cls, key: str) -> "Approach":
        try:
            return cls(str(key).lower())
        except ValueError:
            valid = ", ".join(a.value for a in cls)
            raise ValueError(f"unknown approach {key!r}; expected one of: {valid}") from None


def validate_approach(approach: Approach, design: TrialDesign) -> None:
    if approach is Approach.IND_B and design.k_new < 2:
        raise ValueError("ind_b needs at least 2 new baskets to borrow among")


@dataclass(frozen=True)
class ModelAssignment:
    """One model fit and the baskets whose results are read from it."""

    model: ModelSpec
    decides: Tuple[int, ...]


def analysis_plan(approach: Approach, design: TrialDesign) -> List[ModelAssignment]:
    """Model fits needed to analyse one dataset under an approach."""
    validate_approach(approach, design)
    existing, new, full = design.existing, design.new, tuple(range(design.k_total))
    if approach in (Approach.UNPL, Approach.PL1):
        return [ModelAssignment(ModelSpec("exnex", full), full)]
    plan = [ModelAssignment(ModelSpec("exnex", existing), existing)]
    if not new:
        return plan
    if approach is Approach.IND_A:
        plan.append(ModelAssignment(ModelSpec("independent", new), new))
    elif approach is Approach.IND_B:
        plan.append(ModelAssignment(ModelSpec("exnex", new), new))
    else:  # PL2
        plan.append(ModelAssignment(ModelSpec("exnex", full), new))
    return plan


def calibration_plan(approach: Approach, design: TrialDesign) -> List[ModelAssignment]:
    """Model fits backing the cutoff calibration; ``decides`` lists the
    baskets whose posterior probabilities feed each cutoff pool.

    Under ``unpl`` new baskets calibrate nothing of their own; their cutoffs
    are assigned afterwards from the existing ones.
    """
    validate_approach(approach, design)
    existing, new, full = design.existing, design.new, tuple(range(design.k_total))
    if approach is Approach.PL1:
        return [ModelAssignment(ModelSpec("exnex", full), full)]
    plan = [ModelAssignment(ModelSpec("exnex", existing), existing)]
    if not new or approach is Approach.UNPL:
        return plan
    if approach is Approach.IND_A:
        plan.append(ModelAssignment(ModelSpec("independent", new), new))
    elif approach is Approach.IND_B:
        plan.append(ModelAssignment(ModelSpec("exnex", new), new))
    else:  # PL2
        plan.append(ModelAssignment(ModelSpec("exnex", full), new))
    return plan


@dataclass(frozen=True)
class CutoffSet:
    """Calibrated per-basket decision cutoffs with provenance."""

    delta: Tuple[float, ...]
    method: str
    scenario_labels: Tuple[str, ...] = ()
    seed: int = 0
    approach: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "delta", tuple(float(d) for d in self.delta))
        # 1.0 is a legal degenerate cutoff (nothing can strictly exceed it)
        if any(not 0.0 < d <= 1.0 for d in self.delta):
            raise ValueError("cutoffs must lie in (0, 1]")
        object.__setattr__(self, "scenario_labels", tuple(self.scenario_labels))


@dataclass(frozen=True)
class DecisionVector:
    """Per-basket efficacy declarations and the probabilities behind them."""

    reject: Tuple[bool, ...]
    prob: Tuple[float, ...]


def unpl_cutoff_assignment(
    existing_deltas: Sequence[float],
    n_existing: Sequence[int],
    n_new: int,
) -> float:
    """Cutoff an unplanned new basket inherits: that of the existing basket
    with the nearest sample size (ties go to the lowest basket index)."""
    if len(existing_deltas) == 0:
        raise ValueError("no existing baskets to assign a cutoff from")
    if len(existing_deltas) != len(n_existing):
        raise ValueError("one sample size per existing delta required")
    gaps = np.abs(np.asarray(n_existing, dtype=float) - float(n_new))
    return float(existing_deltas[int(np.argmin(gaps))])


def decide(prob: np.ndarray, delta: Sequence[float]) -> np.ndarray:
    """Strict comparison: effective only when prob > delta."""
    return np.asarray(prob) > np.asarray(delta, dtype=float)


def analyze(
    approach: Approach,
    data: BasketData,
    design: TrialDesign,
    cutoffs: CutoffSet,
    rng: streams.SeedLike,
) -> DecisionVector:
    """Analyse one dataset end to end under an approach.

    Each model in the approach's plan consumes its own substream of ``rng``,
    keyed by model family and scope, so approaches sharing a fit (the
    existing-basket model under ind_a and pl2, say) reproduce it exactly.
    """
    if data.k != design.k_total:
        raise ValueError("data does not match design basket count")
    if len(cutoffs.delta) != design.k_total:
        raise ValueError(
            f"cutoff set has {len(cutoffs.delta)} baskets, design has {design.k_total}"
        )
    root = streams.as_seedseq(rng)
    prob = np.full(design.k_total, np.nan)
    for assignment in analysis_plan(approach, design):
        model = assignment.model
        sub = streams.child(
            root, streams.FAMILY_CODES[model.family], streams.scope_mask(model.scope)
        )
        if model.family == "independent":
            res = fit_independent(data, design.priors, design.q0, design.mcmc, sub,
                                  scope=model.scope)
        else:
            res = fit_exnex(data, design.priors, design.q0, model.scope,
                            design.mcmc, sub)
        for b in assignment.decides:
            prob[b] = res.prob_exceed_null[res.basket_index(b)]
    reject = decide(prob, cutoffs.delta)
    return DecisionVector(reject=tuple(bool(v) for v in reject),
                          prob=tuple(float(v) for v in prob))

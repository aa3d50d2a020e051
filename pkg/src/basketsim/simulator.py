"""Monte Carlo studies: operating characteristics under each approach.

All studies share one pattern: per scenario, generate replicate datasets,
fit whatever models the requested approaches need (deduplicated across
approaches, so e.g. the existing-basket model feeding both ind_a and pl2 is
fitted once), apply the cutoffs, and aggregate.

Reported metrics (all on the 0-100 percent scale):

* per-basket rejection rate (type I error where the truth is null, power
  where it is not),
* family-wise error rate: share of replicates with at least one false
  efficacy declaration,
* share of replicates in which every basket's accept/reject call was
  correct,
* mean and standard deviation over replicates of the posterior-mean rate
  estimate per basket.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .approaches import Approach, CutoffSet, ModelAssignment, analysis_plan
from .calibration import CalibrationSpec, calibrate
from .engine import StudyRunner
from .trial import Scenario, TrialDesign, effective_seed_key


@dataclass(frozen=True)
class OperatingCharacteristics:
    """Aggregated results for one (scenario, approach) cell."""

    study: str
    scenario: str
    approach: str
    truth: Tuple[float, ...]
    pct_reject: Tuple[float, ...]
    fwer: float
    pct_all_correct: float
    mean_estimate: Tuple[float, ...]
    sd_estimate: Tuple[float, ...]
    n_replicates: int

    def reject_of(self, basket: int) -> float:
        return self.pct_reject[basket]


@dataclass(frozen=True)
class DiscrepancyRecord:
    """Outcome comparison on the decisions where two approaches disagree."""

    setting: str
    approach_a: str
    approach_b: str
    basket_class: str  # existing | new | all
    n_discrepant: int
    prop_correct_a: float
    prop_correct_b: float

    @property
    def diff(self) -> float:
        return self.prop_correct_a - self.prop_correct_b


def _cutoff_for(cutoffs, approach: Approach) -> CutoffSet:
    if isinstance(cutoffs, CutoffSet):
        return cutoffs
    for key in (approach, approach.value):
        if key in cutoffs:
            return cutoffs[key]
    raise KeyError(f"no cutoffs supplied for approach {approach.value!r}")


def _approach_matrices(
    runner: StudyRunner,
    plan: Sequence[ModelAssignment],
    tasks: Dict,
) -> Tuple[np.ndarray, np.ndarray]:
    """Per-replicate probabilities and estimates routed per the plan."""
    k = runner.design.k_total
    some = runner.fits(tasks[plan[0].model])
    n_rep = some.prob_exceed_null.shape[0]
    prob = np.full((n_rep, k), np.nan)
    est = np.full((n_rep, k), np.nan)
    for assignment in plan:
        fit = runner.fits(tasks[assignment.model])
        for b in assignment.decides:
            col = fit.column(b)
            prob[:, b] = fit.prob_exceed_null[:, col]
            est[:, b] = fit.post_mean_p[:, col]
    return prob, est


def _aggregate(
    study: str,
    scenario_label: str,
    approach: Approach,
    truth: np.ndarray,
    prob: np.ndarray,
    est: np.ndarray,
    delta: Sequence[float],
    q0: float,
) -> OperatingCharacteristics:
    reject = prob > np.asarray(delta)
    truth = np.asarray(truth, dtype=float)
    if truth.ndim == 1:
        truth = np.broadcast_to(truth, prob.shape)
    null = truth <= q0
    effective = ~null
    false_pos = reject & null
    correct = reject == effective
    n_rep = prob.shape[0]
    mean_truth = truth.mean(axis=0)
    return OperatingCharacteristics(
        study=study,
        scenario=scenario_label,
        approach=approach.value,
        truth=tuple(float(v) for v in mean_truth),
        pct_reject=tuple(100.0 * reject.mean(axis=0)),
        fwer=float(100.0 * false_pos.any(axis=1).mean()),
        pct_all_correct=float(100.0 * correct.all(axis=1).mean()),
        mean_estimate=tuple(est.mean(axis=0)),
        sd_estimate=tuple(est.std(axis=0, ddof=1) if n_rep > 1 else np.zeros(est.shape[1])),
        n_replicates=n_rep,
    )


def run_fixed_study(
    design: TrialDesign,
    approaches: Sequence[Approach],
    cutoffs,
    scenarios: Sequence[Scenario],
    replicates: int,
    master_seed: Optional[int] = None,
    runner: Optional[StudyRunner] = None,
    threads: int = 1,
    study: str = "fixed",
) -> List[OperatingCharacteristics]:
    """Operating characteristics over fixed truth scenarios.

    Within a (scenario, replicate) cell every approach sees the same dataset
    and, where their analysis models coincide, the same fit.
    """
    if runner is None:
        if master_seed is None:
            raise ValueError("pass a master_seed or a runner")
        runner = StudyRunner(design, master_seed, threads=threads)
    plans = {a: analysis_plan(a, design) for a in approaches}
    deltas = {a: _cutoff_for(cutoffs, a).delta for a in approaches}

    all_tasks = []
    per_scenario_tasks = []
    for i, sc in enumerate(scenarios):
        key = effective_seed_key(sc, i)
        models = {asg.model for plan in plans.values() for asg in plan}
        tasks = {m: runner.task(key, sc.p, m, replicates) for m in models}
        per_scenario_tasks.append(tasks)
        all_tasks.extend(tasks.values())
    runner.prefetch(all_tasks)

    results = []
    for i, sc in enumerate(scenarios):
        tasks = per_scenario_tasks[i]
        label = sc.label or f"scenario_{i + 1}"
        for a in approaches:
            prob, est = _approach_matrices(runner, plans[a], tasks)
            results.append(
                _aggregate(study, label, a, np.asarray(sc.p), prob, est,
                           deltas[a], design.q0)
            )
    return results


def compute_discrepancies(
    setting: str,
    decisions: Dict[Approach, np.ndarray],
    truth: np.ndarray,
    q0: float,
    k_existing: int,
) -> List[DiscrepancyRecord]:
    """Pairwise comparison of approaches on the decisions where they differ.

    Exactly one side of a differing decision matches the truth, so the two
    correct-proportions sum to one whenever any discrepancy exists.
    """
    effective = np.asarray(truth, dtype=float) > q0
    order = list(decisions)
    k = truth.shape[-1]
    classes = {
        "all": np.ones(k, dtype=bool),
        "existing": np.arange(k) < k_existing,
        "new": np.arange(k) >= k_existing,
    }
    records = []
    for i, a in enumerate(order):
        for b in order[i + 1:]:
            da, db = decisions[a], decisions[b]
            differ = da != db
            a_correct = differ & (da == effective)
            for name, mask in classes.items():
                if not mask.any():
                    continue
                n_disc = int(differ[:, mask].sum())
                n_a = int(a_correct[:, mask].sum())
                prop_a = n_a / n_disc if n_disc else 0.0
                prop_b = (n_disc - n_a) / n_disc if n_disc else 0.0
                records.append(
                    DiscrepancyRecord(
                        setting=setting,
                        approach_a=a.value,
                        approach_b=b.value,
                        basket_class=name,
                        n_discrepant=n_disc,
                        prop_correct_a=prop_a,
                        prop_correct_b=prop_b,
                    )
                )
    return records


def run_random_truth_study(
    design: TrialDesign,
    existing_rates: Sequence[float],
    interval: Tuple[float, float],
    approaches: Sequence[Approach],
    cutoffs,
    replicates: int,
    master_seed: Optional[int] = None,
    runner: Optional[StudyRunner] = None,
    threads: int = 1,
    setting: str = "setting_1",
    setting_key: int = 0,
) -> Tuple[List[OperatingCharacteristics], List[DiscrepancyRecord]]:
    """Study with the new-basket truth drawn uniformly per replicate.

    Existing-basket rates are fixed; each new basket's true rate is an
    independent uniform draw on ``interval`` within every replicate, and
    correctness judges a rejection against that replicate's own truth.
    """
    if len(existing_rates) != design.k_existing:
        raise ValueError("one fixed rate per existing basket required")
    lo, hi = float(interval[0]), float(interval[1])
    if not 0.0 < lo < hi < 1.0:
        raise ValueError("interval must satisfy 0 < lo < hi < 1")
    if runner is None:
        if master_seed is None:
            raise ValueError("pass a master_seed or a runner")
        runner = StudyRunner(design, master_seed, threads=threads)

    plans = {a: analysis_plan(a, design) for a in approaches}
    deltas = {a: _cutoff_for(cutoffs, a).delta for a in approaches}
    models = {asg.model for plan in plans.values() for asg in plan}
    tasks = {
        m: runner.task(setting_key, existing_rates, m, replicates,
                       truth_interval=(lo, hi))
        for m in models
    }
    runner.prefetch(tasks.values())
    truth = runner.truths(next(iter(tasks.values())))

    results = []
    decisions: Dict[Approach, np.ndarray] = {}
    for a in approaches:
        prob, est = _approach_matrices(runner, plans[a], tasks)
        decisions[a] = prob > np.asarray(deltas[a])
        results.append(
            _aggregate("random_truth", setting, a, truth, prob, est,
                       deltas[a], design.q0)
        )
    records = compute_discrepancies(setting, decisions, truth, design.q0,
                                    design.k_existing)
    return results, records


@dataclass
class SweepResult:
    """Per-size operating characteristics plus the cutoffs used at each size."""

    approach: str
    rows: List[Tuple[int, OperatingCharacteristics]]
    cutoffs: Dict[int, CutoffSet]


def run_timing_sweep(
    design: TrialDesign,
    approach: Approach,
    n_new_values: Sequence[int],
    scenarios: Sequence[Scenario],
    calibration_spec: CalibrationSpec,
    replicates: int,
    master_seed: int,
    threads: int = 1,
    runner: Optional[StudyRunner] = None,
) -> SweepResult:
    """Re-calibrate and re-evaluate for each candidate new-basket size.

    Each size gets its own calibration under the approach's own scheme;
    fits over existing baskets are shared across sizes because neither
    their data nor their models depend on the new basket's size.
    """
    max_existing = max(design.n[b] for b in design.existing)
    for v in n_new_values:
        if not 1 <= int(v) <= max_existing:
            raise ValueError(
                f"new-basket sizes must lie in 1..{max_existing}, got {v}"
            )
    base_runner = runner if runner is not None else StudyRunner(
        design, master_seed, threads=threads
    )
    rows: List[Tuple[int, OperatingCharacteristics]] = []
    cutoffs: Dict[int, CutoffSet] = {}
    for n_new in n_new_values:
        design_n = design.with_new_size(int(n_new))
        runner_n = StudyRunner(design_n, base_runner.master_seed,
                               threads=base_runner.threads, mcmc=base_runner.mcmc,
                               share_cache_with=base_runner)
        cut = calibrate(calibration_spec, design_n, approach, runner=runner_n)
        cutoffs[int(n_new)] = cut
        ocs = run_fixed_study(
            design_n, [approach], cut, scenarios, replicates,
            runner=runner_n, study="timing_sweep",
        )
        rows.extend((int(n_new), oc) for oc in ocs)
    return SweepResult(approach=approach.value, rows=rows, cutoffs=cutoffs)


def run_two_plus_two_study(
    design: TrialDesign,
    approaches: Sequence[Approach],
    scenarios: Sequence[Scenario],
    replicates: int,
    master_seed: Optional[int] = None,
    runner: Optional[StudyRunner] = None,
    threads: int = 1,
    calibration_replicates: Optional[int] = None,
    method: str = "rcap",
) -> Tuple[List[OperatingCharacteristics], Dict[Approach, CutoffSet]]:
    """Study for designs that add two baskets to two existing ones.

    Cutoffs are calibrated across the scenario subset containing at least
    one null basket (the all-effective scenario cannot contribute), then the
    full scenario grid is evaluated.
    """
    if design.k_existing != 2 or design.k_new != 2:
        raise ValueError("two-plus-two study expects 2 existing and 2 new baskets")
    if runner is None:
        if master_seed is None:
            raise ValueError("pass a master_seed or a runner")
        runner = StudyRunner(design, master_seed, threads=threads)
    cal_scenarios = [
        replace(sc, seed_key=effective_seed_key(sc, i))
        for i, sc in enumerate(scenarios)
        if any(p <= design.q0 for p in sc.p)
    ]
    spec = CalibrationSpec(
        method=method,
        scenarios=tuple(cal_scenarios),
        replicates=calibration_replicates or replicates,
        alpha=design.alpha,
    )
    cutoffs = {a: calibrate(spec, design, a, runner=runner) for a in approaches}
    ocs = run_fixed_study(
        design, approaches, cutoffs, scenarios, replicates,
        runner=runner, study="two_plus_two",
    )
    return ocs, cutoffs


# ---------------------------------------------------------------------------
# tabular output

LONG_COLUMNS = ("study", "scenario", "approach", "basket", "metric", "value",
                "n_replicates", "seed")


def oc_rows(ocs: Iterable[OperatingCharacteristics], seed: int,
            extra: Optional[Dict[str, object]] = None) -> List[dict]:
    """Long-format rows: one row per (basket, metric) plus scenario-level rows."""
    rows = []
    extra = extra or {}
    for oc in ocs:
        base = dict(study=oc.study, scenario=oc.scenario, approach=oc.approach,
                    n_replicates=oc.n_replicates, seed=seed, **extra)
        for b in range(len(oc.pct_reject)):
            rows.append({**base, "basket": b + 1, "metric": "pct_reject",
                         "value": oc.pct_reject[b]})
            rows.append({**base, "basket": b + 1, "metric": "mean_estimate",
                         "value": oc.mean_estimate[b]})
            rows.append({**base, "basket": b + 1, "metric": "sd_estimate",
                         "value": oc.sd_estimate[b]})
        rows.append({**base, "basket": "", "metric": "fwer", "value": oc.fwer})
        rows.append({**base, "basket": "", "metric": "pct_all_correct",
                     "value": oc.pct_all_correct})
    return rows


def discrepancy_rows(records: Iterable[DiscrepancyRecord], seed: int) -> List[dict]:
    return [
        dict(setting=r.setting, approach_a=r.approach_a, approach_b=r.approach_b,
             basket_class=r.basket_class, n_discrepant=r.n_discrepant,
             prop_correct_a=r.prop_correct_a, prop_correct_b=r.prop_correct_b,
             diff=r.diff, seed=seed)
        for r in records
    ]


def fixed_figure_rows(ocs: Iterable[OperatingCharacteristics]) -> List[dict]:
    """Rejection percentages by scenario/approach/basket (truth annotated)."""
    rows = []
    for oc in ocs:
        for b, (pct, truth) in enumerate(zip(oc.pct_reject, oc.truth)):
            rows.append(dict(scenario=oc.scenario, approach=oc.approach,
                             basket=b + 1, truth=truth, pct_reject=pct))
    return rows


def sweep_figure_rows(result: SweepResult, design: TrialDesign) -> List[dict]:
    """Error/power against the new-basket size, split existing vs new."""
    rows = []
    q0 = design.q0
    for n_new, oc in result.rows:
        for b, pct in enumerate(oc.pct_reject):
            rows.append(dict(
                n_new=n_new,
                scenario=oc.scenario,
                approach=oc.approach,
                basket=b + 1,
                basket_class="existing" if b < design.k_existing else "new",
                metric="type_one_error" if oc.truth[b] <= q0 else "power",
                value=pct,
            ))
    return rows

"""Bayesian basket trials with mid-study basket additions.

Library plus CLI for designing and evaluating single-arm basket trials in
which new baskets open part-way through: exchangeability-mixture, fully
hierarchical, and stratified analyses by a built-in sampler; decision-cutoff
calibration under the global null or robustly across weighted truth
scenarios; and Monte Carlo studies of the resulting operating
characteristics.
"""

__version__ = "0.1.0"

from .approaches import (
    Approach,
    CutoffSet,
    DecisionVector,
    analysis_plan,
    analyze,
    calibration_plan,
    unpl_cutoff_assignment,
)
from .calibration import (
    CalibrationInfeasible,
    CalibrationSpec,
    calibrate,
    empirical_quantile,
    equal_size_group_rule,
    type_one_criterion,
)
from .engine import StudyRunner
from .inference import (
    BatchPosterior,
    ModelSpec,
    PosteriorResult,
    effective_sample_size,
    fit_bhm,
    fit_exnex,
    fit_independent,
    oracle_independent,
)
from .simulator import (
    DiscrepancyRecord,
    OperatingCharacteristics,
    SweepResult,
    compute_discrepancies,
    run_fixed_study,
    run_random_truth_study,
    run_timing_sweep,
    run_two_plus_two_study,
)
from .trial import (
    BasketData,
    McmcSettings,
    PriorSpec,
    Scenario,
    TrialDesign,
    generate_data,
    nested_null_scenarios,
    nex_params,
    paper_design_2plus2,
    paper_design_4plus1,
    standard_scenarios,
)

__all__ = [
    "Approach",
    "BasketData",
    "BatchPosterior",
    "CalibrationInfeasible",
    "CalibrationSpec",
    "CutoffSet",
    "DecisionVector",
    "DiscrepancyRecord",
    "McmcSettings",
    "ModelSpec",
    "OperatingCharacteristics",
    "PosteriorResult",
    "PriorSpec",
    "Scenario",
    "StudyRunner",
    "SweepResult",
    "TrialDesign",
    "analysis_plan",
    "analyze",
    "calibrate",
    "calibration_plan",
    "compute_discrepancies",
    "effective_sample_size",
    "empirical_quantile",
    "equal_size_group_rule",
    "fit_bhm",
    "fit_exnex",
    "fit_independent",
    "generate_data",
    "nested_null_scenarios",
    "nex_params",
    "oracle_independent",
    "paper_design_2plus2",
    "paper_design_4plus1",
    "run_fixed_study",
    "run_random_truth_study",
    "run_timing_sweep",
    "run_two_plus_two_study",
    "standard_scenarios",
    "type_one_criterion",
    "unpl_cutoff_assignment",
]

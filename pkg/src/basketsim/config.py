"""Run configuration: a single TOML file drives every command.

Tables: ``[design]`` (basket counts, sizes, rates; or a named preset),
``[priors]``, ``[mcmc]``, ``[calibration]``, ``[study]`` and ``[run]``.
Every key has a documented default except the design itself; the parsed
result can be re-emitted with all defaults filled ("effective config"),
which reloads to exactly the same configuration.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

if sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml

from .approaches import Approach
from .calibration import CalibrationSpec, METHODS
from .trial import (
    McmcSettings,
    PriorSpec,
    Scenario,
    TrialDesign,
    nested_null_scenarios,
    paper_design_2plus2,
    paper_design_4plus1,
    standard_scenarios,
    two_plus_two_calibration_scenarios,
)

DESIGN_PRESETS = {
    "paper_4plus1": paper_design_4plus1,
    "paper_2plus2": paper_design_2plus2,
}

SCENARIO_PRESETS = ("standard", "nested_nulls", "global_null", "two_plus_two_calibration")

STUDY_KINDS = ("fixed", "random_truth", "timing_sweep", "two_plus_two")


class ConfigError(ValueError):
    """Invalid configuration; ``where`` anchors the offending key."""

    def __init__(self, where: str, message: str):
        self.where = where
        super().__init__(f"[{where}] {message}")


def _get(table: dict, where: str, key: str, typ, default=..., choices=None):
    if key not in table:
        if default is ...:
            raise ConfigError(where, f"{key}: required key is missing")
        return default
    val = table[key]
    if typ is float and isinstance(val, int) and not isinstance(val, bool):
        val = float(val)
    if typ is not None and not isinstance(val, typ):
        raise ConfigError(where, f"{key}: expected {typ.__name__}, got {type(val).__name__}")
    if choices is not None and val not in choices:
        raise ConfigError(where, f"{key}: must be one of {sorted(choices)}, got {val!r}")
    return val


@dataclass
class RunConfig:
    """Everything a command needs, with defaults resolved."""

    design: TrialDesign
    calibration_method: str
    calibration_scenarios: str | list
    calibration_replicates: int
    calibration_weights: Optional[List[int]]
    study_kind: str
    study_scenarios: str | list
    study_replicates: int
    approaches: List[Approach]
    existing_rates: Optional[List[float]]
    interval: Optional[Tuple[float, float]]
    sweep_approach: Optional[Approach]
    n_new_values: Optional[List[int]]
    master_seed: int
    threads: int
    output_dir: str
    effective: Dict[str, Any] = field(default_factory=dict)

    def resolve_scenarios(self, spec) -> List[Scenario]:
        return resolve_scenarios(spec, self.design, weights=None)

    def calibration_spec(self) -> CalibrationSpec:
        scenarios = resolve_scenarios(
            self.calibration_scenarios, self.design, weights=self.calibration_weights
        )
        return CalibrationSpec(
            method=self.calibration_method,
            scenarios=tuple(scenarios),
            replicates=self.calibration_replicates,
            alpha=self.design.alpha,
        )


def resolve_scenarios(spec, design: TrialDesign, weights=None) -> List[Scenario]:
    """Scenario preset name or inline list of rate vectors."""
    if isinstance(spec, str):
        if spec == "standard":
            return standard_scenarios(design)
        if spec == "nested_nulls":
            return nested_null_scenarios(design)
        if spec == "global_null":
            return [Scenario(p=(design.q0,) * design.k_total, label="global_null",
                             seed_key=0)]
        if spec == "two_plus_two_calibration":
            return two_plus_two_calibration_scenarios(design)
        raise ConfigError("scenarios", f"unknown preset {spec!r}; "
                          f"expected one of {SCENARIO_PRESETS} or an inline list")
    scenarios = []
    weights = weights or [1] * len(spec)
    if len(weights) != len(spec):
        raise ConfigError("scenarios", "weights must match the scenario list length")
    for i, row in enumerate(spec):
        if not isinstance(row, (list, tuple)):
            raise ConfigError("scenarios", f"entry {i + 1} is not a rate vector")
        scenarios.append(
            Scenario(p=tuple(float(v) for v in row), weight=int(weights[i]),
                     label=f"scenario_{i + 1}", seed_key=i)
        )
    return scenarios


def _parse_design(raw: dict) -> TrialDesign:
    table = raw.get("design", {})
    if not isinstance(table, dict):
        raise ConfigError("design", "must be a table")
    priors_tbl = raw.get("priors", {})
    mcmc_tbl = raw.get("mcmc", {})

    priors = PriorSpec(
        ind_mean=_get(priors_tbl, "priors", "ind_mean", float, None),
        ind_var=_get(priors_tbl, "priors", "ind_var", float, 100.0),
        mu_mean=_get(priors_tbl, "priors", "mu_mean", float, None),
        mu_var=_get(priors_tbl, "priors", "mu_var", float, 100.0),
        sigma_scale=_get(priors_tbl, "priors", "sigma_scale", float, 1.0),
        nex_guess=_parse_scalar_or_list(priors_tbl, "priors", "nex_guess", 0.3),
        pi=_parse_scalar_or_list(priors_tbl, "priors", "pi", 0.5),
    )
    mcmc = McmcSettings(
        burn_in=_get(mcmc_tbl, "mcmc", "burn_in", int, 5000),
        samples=_get(mcmc_tbl, "mcmc", "samples", int, 10000),
        thin=_get(mcmc_tbl, "mcmc", "thin", int, 1),
        proposal_sd_init=_get(mcmc_tbl, "mcmc", "proposal_sd_init", float, 1.0),
    )
    if mcmc.samples < 1000:
        print("note: mcmc.samples below 1000; fine for smoke tests, "
              "not for production numbers", file=sys.stderr)

    preset = _get(table, "design", "preset", str, None)
    if preset is not None:
        if preset not in DESIGN_PRESETS:
            raise ConfigError("design", f"preset: unknown preset {preset!r}; "
                              f"expected one of {sorted(DESIGN_PRESETS)}")
        overrides = {}
        for key in ("alpha",):
            if key in table:
                overrides[key] = _get(table, "design", key, float)
        return DESIGN_PRESETS[preset](priors=priors, mcmc=mcmc, **overrides)

    try:
        k_existing = _get(table, "design", "k_existing", int)
        k_new = _get(table, "design", "k_new", int, 0)
        n = _get(table, "design", "n", list)
        q0 = _get(table, "design", "q0", float)
        q1 = _get(table, "design", "q1", float)
        q2 = _get(table, "design", "q2", float, None)
        alpha = _get(table, "design", "alpha", float, 0.1)
        return TrialDesign(
            k_existing=k_existing, k_new=k_new, n=tuple(int(v) for v in n),
            q0=q0, q1=q1, q2=q2, alpha=alpha, priors=priors, mcmc=mcmc,
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError("design", str(exc)) from None


def _parse_scalar_or_list(table, where, key, default):
    if key not in table:
        return default
    val = table[key]
    if isinstance(val, (int, float)) and not isinstance(val, bool):
        return float(val)
    if isinstance(val, list):
        return tuple(float(v) for v in val)
    raise ConfigError(where, f"{key}: expected number or list of numbers")


def load_config(path: str | Path) -> RunConfig:
    """Parse and validate a TOML config (or a provenance JSON re-run)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("file", f"cannot read {path}: {exc}") from None
    if path.suffix == ".json":
        blob = json.loads(text)
        raw = blob.get("effective_config", blob)
    else:
        try:
            raw = _toml.loads(text)
        except _toml.TOMLDecodeError as exc:
            raise ConfigError("file", f"{path}: {exc}") from None
    return parse_config(raw)


def parse_config(raw: dict) -> RunConfig:
    design = _parse_design(raw)

    cal = raw.get("calibration", {})
    method = _get(cal, "calibration", "method", str, "rcap", choices=set(METHODS))
    cal_scen = cal.get("scenarios", "global_null" if method == "global_null"
                       else "nested_nulls")
    cal_weights = _get(cal, "calibration", "weights", list, None)
    if cal_weights is not None and isinstance(cal_scen, str):
        raise ConfigError("calibration",
                          "weights need an inline scenario list, not a preset")
    cal_reps = _get(cal, "calibration", "replicates", int, 10000)
    if cal_reps < 1:
        raise ConfigError("calibration", "replicates: must be >= 1")
    if cal_reps < 1000:
        print("note: calibration.replicates below 1000; fine for smoke tests, "
              "not for production numbers", file=sys.stderr)

    study = raw.get("study", {})
    kind = _get(study, "study", "kind", str, "fixed", choices=set(STUDY_KINDS))
    study_scen = study.get("scenarios", "standard")
    study_reps = _get(study, "study", "replicates", int, 10000)
    if study_reps < 1:
        raise ConfigError("study", "replicates: must be >= 1")
    approach_keys = _get(study, "study", "approaches", list,
                         ["ind_a", "unpl", "pl1", "pl2"])
    try:
        approaches = [Approach.parse(k) for k in approach_keys]
    except ValueError as exc:
        raise ConfigError("study", f"approaches: {exc}") from None

    existing_rates = _get(study, "study", "existing_rates", list, None)
    interval = _get(study, "study", "interval", list, None)
    if kind == "random_truth":
        if existing_rates is None or interval is None:
            raise ConfigError("study", "random_truth needs existing_rates and interval")
        if len(interval) != 2:
            raise ConfigError("study", "interval: expected [lo, hi]")

    sweep_approach = None
    n_new_values = None
    if kind == "timing_sweep":
        key = _get(study, "study", "approach", str)
        try:
            sweep_approach = Approach.parse(key)
        except ValueError as exc:
            raise ConfigError("study", f"approach: {exc}") from None
        if "n_new_values" in study:
            n_new_values = [int(v) for v in _get(study, "study", "n_new_values", list)]
        else:
            lo = _get(study, "study", "n_new_min", int, 1)
            hi = _get(study, "study", "n_new_max", int)
            n_new_values = list(range(lo, hi + 1))
        max_existing = max(design.n[b] for b in design.existing)
        for v in n_new_values:
            if not 1 <= v <= max_existing:
                raise ConfigError(
                    "study", f"new-basket sizes must lie in 1..{max_existing}, got {v}"
                )

    run = raw.get("run", {})
    master_seed = _get(run, "run", "master_seed", int, 20260809)
    threads = _get(run, "run", "threads", int, 1)
    if threads < 0:
        raise ConfigError("run", "threads: must be >= 0 (0 = auto)")
    output_dir = _get(run, "run", "output_dir", str, "out")

    cfg = RunConfig(
        design=design,
        calibration_method=method,
        calibration_scenarios=cal_scen,
        calibration_replicates=cal_reps,
        calibration_weights=cal_weights,
        study_kind=kind,
        study_scenarios=study_scen,
        study_replicates=study_reps,
        approaches=approaches,
        existing_rates=[float(v) for v in existing_rates] if existing_rates else None,
        interval=(float(interval[0]), float(interval[1])) if interval else None,
        sweep_approach=sweep_approach,
        n_new_values=n_new_values,
        master_seed=master_seed,
        threads=threads,
        output_dir=output_dir,
    )
    cfg.effective = effective_config(cfg)
    # surface scenario resolution errors (bad preset names, ragged vectors) now
    cfg.resolve_scenarios(cfg.study_scenarios)
    cfg.calibration_spec()
    return cfg


def effective_config(cfg: RunConfig) -> Dict[str, Any]:
    """Fully-defaulted config dict; re-parsing it reproduces ``cfg``."""
    d = cfg.design
    priors = d.priors
    out: Dict[str, Any] = {
        "design": {
            "k_existing": d.k_existing,
            "k_new": d.k_new,
            "n": list(d.n),
            "q0": d.q0,
            "q1": d.q1,
            "alpha": d.alpha,
        },
        "priors": {
            "ind_var": priors.ind_var,
            "mu_var": priors.mu_var,
            "sigma_scale": priors.sigma_scale,
            "nex_guess": list(priors.nex_guess) if isinstance(priors.nex_guess, tuple)
            else priors.nex_guess,
            "pi": list(priors.pi) if isinstance(priors.pi, tuple) else priors.pi,
        },
        "mcmc": {
            "burn_in": d.mcmc.burn_in,
            "samples": d.mcmc.samples,
            "thin": d.mcmc.thin,
            "proposal_sd_init": d.mcmc.proposal_sd_init,
        },
        "calibration": {
            "method": cfg.calibration_method,
            "scenarios": cfg.calibration_scenarios,
            "replicates": cfg.calibration_replicates,
        },
        "study": {
            "kind": cfg.study_kind,
            "scenarios": cfg.study_scenarios,
            "replicates": cfg.study_replicates,
            "approaches": [a.value for a in cfg.approaches],
        },
        "run": {
            "master_seed": cfg.master_seed,
            "threads": cfg.threads,
            "output_dir": cfg.output_dir,
        },
    }
    if d.q2 is not None:
        out["design"]["q2"] = d.q2
    if priors.ind_mean is not None:
        out["priors"]["ind_mean"] = priors.ind_mean
    if priors.mu_mean is not None:
        out["priors"]["mu_mean"] = priors.mu_mean
    if cfg.calibration_weights:
        out["calibration"]["weights"] = list(cfg.calibration_weights)
    if cfg.existing_rates is not None:
        out["study"]["existing_rates"] = list(cfg.existing_rates)
    if cfg.interval is not None:
        out["study"]["interval"] = list(cfg.interval)
    if cfg.sweep_approach is not None:
        out["study"]["approach"] = cfg.sweep_approach.value
    if cfg.n_new_values is not None:
        out["study"]["n_new_values"] = list(cfg.n_new_values)
    return out


# ---------------------------------------------------------------------------
# minimal TOML emission (scalars, lists, one level of tables)


def _toml_value(val) -> str:
    if isinstance(val, bool):
        return "true" if val else "false"
    if isinstance(val, (int, float)):
        return repr(val)
    if isinstance(val, str):
        return json.dumps(val)
    if isinstance(val, (list, tuple)):
        return "[" + ", ".join(_toml_value(v) for v in val) + "]"
    raise TypeError(f"cannot emit {type(val).__name__} as TOML")


def emit_toml(config: Dict[str, Any]) -> str:
    lines: List[str] = []
    for table, body in config.items():
        lines.append(f"[{table}]")
        for key, val in body.items():
            lines.append(f"{key} = {_toml_value(val)}")
        lines.append("")
    return "\n".join(lines)

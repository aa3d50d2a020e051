"""Command-line front end.

Subcommands::

    basketsim calibrate    --config cfg.toml [--out DIR ...]
    basketsim simulate     --config cfg.toml --cutoffs cutoffs.csv
    basketsim sweep        --config cfg.toml
    basketsim random-truth --config cfg.toml --cutoffs cutoffs.csv
    basketsim two-plus-two --config cfg.toml

Exit codes: 0 success, 2 invalid configuration or mismatched inputs,
3 calibration infeasible (a basket's cutoff pool came up empty).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from . import __version__
from .approaches import Approach, CutoffSet, analysis_plan
from .calibration import CalibrationInfeasible, calibrate
from .config import ConfigError, RunConfig, emit_toml, load_config
from .engine import StudyRunner
from .inference import fit_exnex, fit_independent
from .simulator import (
    discrepancy_rows,
    fixed_figure_rows,
    oc_rows,
    run_fixed_study,
    run_random_truth_study,
    run_timing_sweep,
    run_two_plus_two_study,
    sweep_figure_rows,
)
from .streams import FAMILY_CODES, scope_mask
from .trial import BasketData, generate_data_batch

FLOAT_FORMAT = "%.6f"


def _write_csv(path: Path, rows: List[dict]) -> None:
    frame = pd.DataFrame(rows)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def write_cutoffs_csv(path: Path, cutoffs: Dict[Approach, CutoffSet]) -> None:
    rows = []
    for approach, cs in cutoffs.items():
        for b, d in enumerate(cs.delta):
            rows.append(dict(
                approach=approach.value, basket=b + 1, delta=d,
                method=cs.method, scenario_set=";".join(cs.scenario_labels),
                seed=cs.seed,
            ))
    _write_csv(path, rows)


def read_cutoffs_csv(path: Path) -> Dict[Approach, CutoffSet]:
    frame = pd.read_csv(path)
    required = {"approach", "basket", "delta", "method", "scenario_set", "seed"}
    if not required.issubset(frame.columns):
        raise ValueError(f"cutoffs file missing columns {sorted(required - set(frame.columns))}")
    out: Dict[Approach, CutoffSet] = {}
    for key, grp in frame.groupby("approach", sort=False):
        grp = grp.sort_values("basket")
        baskets = grp["basket"].tolist()
        if baskets != list(range(1, len(baskets) + 1)):
            raise ValueError(f"cutoffs for {key!r} do not cover baskets 1..K contiguously")
        labels = str(grp["scenario_set"].iloc[0])
        out[Approach.parse(key)] = CutoffSet(
            delta=tuple(grp["delta"].tolist()),
            method=str(grp["method"].iloc[0]),
            scenario_labels=tuple(labels.split(";")) if labels and labels != "nan" else (),
            seed=int(grp["seed"].iloc[0]),
            approach=str(key),
        )
    return out


def _provenance(cfg: RunConfig, command: str, outputs: List[str]) -> dict:
    return {
        "tool": "basketsim",
        "version": __version__,
        "command": command,
        "master_seed": cfg.master_seed,
        "effective_config": cfg.effective,
        "outputs": outputs,
    }


def _emit_effective(cfg: RunConfig, out: Path) -> None:
    (out / "effective_config.toml").write_text(emit_toml(cfg.effective))


def _dump_debug_chains(cfg: RunConfig, out: Path, approaches: List[Approach]) -> None:
    """One pilot fit per distinct analysis model, raw chains to CSV."""
    design = cfg.design
    scenarios = cfg.resolve_scenarios(cfg.study_scenarios)
    sc = scenarios[0]
    y = generate_data_batch(sc.p, design.n, cfg.master_seed, 0, 1)[0]
    data = BasketData(y=tuple(y), n=design.n)
    seen = set()
    for a in approaches:
        for asg in analysis_plan(a, design):
            model = asg.model
            if model in seen:
                continue
            seen.add(model)
            rng = np.random.SeedSequence(
                [cfg.master_seed, 999, FAMILY_CODES[model.family], scope_mask(model.scope)]
            )
            if model.family == "independent":
                res = fit_independent(data, design.priors, design.q0, design.mcmc,
                                      rng, scope=model.scope, keep_chain=True)
            else:
                res = fit_exnex(data, design.priors, design.q0, model.scope,
                                design.mcmc, rng, keep_chain=True)
            frame = pd.DataFrame(
                res.chain, columns=[f"theta_{b + 1}" for b in model.scope]
            )
            frame.insert(0, "iteration", np.arange(1, len(frame) + 1))
            name = f"chains_{model.family}_{'-'.join(str(b + 1) for b in model.scope)}.csv"
            frame.to_csv(out / name, index=False, float_format=FLOAT_FORMAT,
                         lineterminator="\n")


def _summary_table(ocs) -> str:
    rows = []
    for oc in ocs:
        row = {"scenario": oc.scenario, "approach": oc.approach}
        for b, pct in enumerate(oc.pct_reject):
            row[f"reject_{b + 1}"] = pct
        row["fwer"] = oc.fwer
        row["all_correct"] = oc.pct_all_correct
        rows.append(row)
    return pd.DataFrame(rows).to_string(index=False, float_format=lambda v: f"{v:.2f}")


def cmd_calibrate(cfg: RunConfig, args) -> int:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = cfg.calibration_spec()
    runner = StudyRunner(cfg.design, cfg.master_seed, threads=cfg.threads)
    cutoffs = {a: calibrate(spec, cfg.design, a, runner=runner) for a in cfg.approaches}
    write_cutoffs_csv(out / "cutoffs.csv", cutoffs)
    prov = _provenance(cfg, "calibrate", ["cutoffs.csv"])
    prov["cutoffs"] = {a.value: list(c.delta) for a, c in cutoffs.items()}
    (out / "cutoffs.provenance.json").write_text(json.dumps(prov, indent=2))
    _emit_effective(cfg, out)
    if args.debug_chains:
        _dump_debug_chains(cfg, out, cfg.approaches)
    for a, c in cutoffs.items():
        existing = ", ".join(f"{c.delta[b]:.4f}" for b in cfg.design.existing)
        new = ", ".join(f"{c.delta[b]:.4f}" for b in cfg.design.new)
        print(f"{a.value}: existing [{existing}] new [{new}]")
    return 0


def _load_matching_cutoffs(cfg: RunConfig, path: str) -> Dict[Approach, CutoffSet]:
    cutoffs = read_cutoffs_csv(Path(path))
    k = cfg.design.k_total
    for a in cfg.approaches:
        if a not in cutoffs:
            raise ValueError(f"cutoffs file has no rows for approach {a.value!r}")
        if len(cutoffs[a].delta) != k:
            raise ValueError(
                f"cutoffs for {a.value!r} cover {len(cutoffs[a].delta)} baskets, "
                f"design has {k}"
            )
    return cutoffs


def cmd_simulate(cfg: RunConfig, args) -> int:
    cutoffs = _load_matching_cutoffs(cfg, args.cutoffs)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    scenarios = cfg.resolve_scenarios(cfg.study_scenarios)
    runner = StudyRunner(cfg.design, cfg.master_seed, threads=cfg.threads)
    ocs = run_fixed_study(cfg.design, cfg.approaches, cutoffs, scenarios,
                          cfg.study_replicates, runner=runner)
    _write_csv(out / "oc_long.csv", oc_rows(ocs, cfg.master_seed))
    _write_csv(out / "fig2_fixed_scenarios.csv", fixed_figure_rows(ocs))
    (out / "provenance.json").write_text(
        json.dumps(_provenance(cfg, "simulate",
                               ["oc_long.csv", "fig2_fixed_scenarios.csv"]), indent=2)
    )
    _emit_effective(cfg, out)
    if args.debug_chains:
        _dump_debug_chains(cfg, out, cfg.approaches)
    print(_summary_table(ocs))
    return 0


def cmd_random_truth(cfg: RunConfig, args) -> int:
    cutoffs = _load_matching_cutoffs(cfg, args.cutoffs)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    runner = StudyRunner(cfg.design, cfg.master_seed, threads=cfg.threads)
    ocs, records = run_random_truth_study(
        cfg.design, cfg.existing_rates, cfg.interval, cfg.approaches, cutoffs,
        cfg.study_replicates, runner=runner,
    )
    _write_csv(out / "oc_long.csv", oc_rows(ocs, cfg.master_seed))
    _write_csv(out / "discrepancies.csv", discrepancy_rows(records, cfg.master_seed))
    _write_csv(out / "fig3_discrepancy_heatmap.csv",
               discrepancy_rows(records, cfg.master_seed))
    (out / "provenance.json").write_text(
        json.dumps(_provenance(cfg, "random-truth",
                               ["oc_long.csv", "discrepancies.csv",
                                "fig3_discrepancy_heatmap.csv"]), indent=2)
    )
    _emit_effective(cfg, out)
    print(_summary_table(ocs))
    return 0


def cmd_sweep(cfg: RunConfig, args) -> int:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    scenarios = cfg.resolve_scenarios(cfg.study_scenarios)
    spec = cfg.calibration_spec()
    result = run_timing_sweep(
        cfg.design, cfg.sweep_approach, cfg.n_new_values, scenarios, spec,
        cfg.study_replicates, cfg.master_seed, threads=cfg.threads,
    )
    rows = []
    for n_new, oc in result.rows:
        rows.extend(oc_rows([oc], cfg.master_seed, extra={"n_new": n_new}))
    _write_csv(out / "sweep_long.csv", rows)
    cut_rows = []
    for n_new, cs in result.cutoffs.items():
        for b, d in enumerate(cs.delta):
            cut_rows.append(dict(n_new=n_new, approach=cs.approach, basket=b + 1,
                                 delta=d, method=cs.method,
                                 scenario_set=";".join(cs.scenario_labels),
                                 seed=cs.seed))
    _write_csv(out / "sweep_cutoffs.csv", cut_rows)
    fig_name = {"pl1": "fig4_timing_pl1.csv", "pl2": "fig5_timing_pl2.csv"}.get(
        cfg.sweep_approach.value, f"fig_timing_{cfg.sweep_approach.value}.csv"
    )
    _write_csv(out / fig_name, sweep_figure_rows(result, cfg.design))
    (out / "provenance.json").write_text(
        json.dumps(_provenance(cfg, "sweep",
                               ["sweep_long.csv", "sweep_cutoffs.csv", fig_name]),
                   indent=2)
    )
    _emit_effective(cfg, out)
    print(f"swept {cfg.sweep_approach.value} over n_new in {cfg.n_new_values}")
    return 0


def cmd_two_plus_two(cfg: RunConfig, args) -> int:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    scenarios = cfg.resolve_scenarios(cfg.study_scenarios)
    runner = StudyRunner(cfg.design, cfg.master_seed, threads=cfg.threads)
    ocs, cutoffs = run_two_plus_two_study(
        cfg.design, cfg.approaches, scenarios, cfg.study_replicates,
        runner=runner, calibration_replicates=cfg.calibration_replicates,
        method=cfg.calibration_method,
    )
    _write_csv(out / "oc_long.csv", oc_rows(ocs, cfg.master_seed))
    write_cutoffs_csv(out / "cutoffs.csv", cutoffs)
    (out / "provenance.json").write_text(
        json.dumps(_provenance(cfg, "two-plus-two",
                               ["oc_long.csv", "cutoffs.csv"]), indent=2)
    )
    _emit_effective(cfg, out)
    print(_summary_table(ocs))
    return 0


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if args.out is not None:
        cfg.output_dir = args.out
        cfg.effective["run"]["output_dir"] = args.out
    if args.seed is not None:
        cfg.master_seed = args.seed
        cfg.effective["run"]["master_seed"] = args.seed
    if args.threads is not None:
        cfg.threads = args.threads
        cfg.effective["run"]["threads"] = args.threads
    if args.replicates is not None:
        if args.command == "calibrate":
            cfg.calibration_replicates = args.replicates
            cfg.effective["calibration"]["replicates"] = args.replicates
        else:
            cfg.study_replicates = args.replicates
            cfg.effective["study"]["replicates"] = args.replicates
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="basketsim",
        description="Bayesian basket-trial designs with mid-study basket additions: "
                    "cutoff calibration and Monte Carlo operating characteristics.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, cutoffs=False):
        p.add_argument("--config", required=True, help="TOML config file "
                       "(or a provenance JSON from a previous run)")
        if cutoffs:
            p.add_argument("--cutoffs", required=True, help="cutoffs.csv from calibrate")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--seed", type=int, help="master seed (overrides config)")
        p.add_argument("--threads", type=int, help="worker processes; 0 = auto")
        p.add_argument("--replicates", type=int, help="replicate count override")
        p.add_argument("--debug-chains", action="store_true",
                       help="dump pilot-fit chains to CSV")

    common(sub.add_parser("calibrate", help="calibrate decision cutoffs"))
    common(sub.add_parser("simulate", help="fixed-scenario operating characteristics"),
           cutoffs=True)
    common(sub.add_parser("sweep", help="re-calibrate and evaluate across new-basket sizes"))
    common(sub.add_parser("random-truth", help="study with per-replicate random new-basket truth"),
           cutoffs=True)
    common(sub.add_parser("two-plus-two", help="two existing plus two added baskets study"))
    return parser


COMMANDS = {
    "calibrate": cmd_calibrate,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "random-truth": cmd_random_truth,
    "two-plus-two": cmd_two_plus_two,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        cfg = _apply_overrides(cfg, args)
        if args.command == "two-plus-two" and (
            cfg.design.k_existing != 2 or cfg.design.k_new != 2
        ):
            raise ConfigError("design", "two-plus-two needs k_existing=2 and k_new=2")
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CalibrationInfeasible as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

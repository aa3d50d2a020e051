"""End-to-end acceptance checks of the headline design numbers.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one PASS line per
criterion.  Heavy Monte Carlo work is shared through one module-scoped
runner (2000 replicates per scenario), so the whole file runs in tens of
minutes on a single core.
"""

import math

import numpy as np
import pytest

import basketsim as bs
from basketsim.calibration import CalibrationSpec, calibrate
from basketsim.cli import main, write_cutoffs_csv
from basketsim.engine import StudyRunner
from basketsim.inference import fit_batch
from basketsim.simulator import run_fixed_study, run_timing_sweep, run_two_plus_two_study
from basketsim.trial import Scenario

A = bs.Approach
ALL4 = (A.IND_A, A.UNPL, A.PL1, A.PL2)
MASTER = 20260809
R = 2000
LOGIT_02 = math.log(0.2 / 0.8)


def report(num, text):
    print(f"\nACCEPTANCE {num} PASS: {text}")


@pytest.fixture(scope="module")
def design():
    return bs.paper_design_4plus1()


@pytest.fixture(scope="module")
def runner(design):
    return StudyRunner(design, MASTER)


@pytest.fixture(scope="module")
def scenarios(design):
    return bs.standard_scenarios(design)


@pytest.fixture(scope="module")
def rcap_spec(scenarios):
    return CalibrationSpec(method="rcap", scenarios=tuple(scenarios[:5]),
                           replicates=R, alpha=0.1)


@pytest.fixture(scope="module")
def rcap_cutoffs(design, runner, rcap_spec):
    return {a: calibrate(rcap_spec, design, a, runner=runner) for a in ALL4}


@pytest.fixture(scope="module")
def gn_cutoffs(design, runner):
    spec = CalibrationSpec(
        method="global_null",
        scenarios=(Scenario(p=(0.2,) * 5, label="global_null", seed_key=0),),
        replicates=R, alpha=0.1,
    )
    return {a: calibrate(spec, design, a, runner=runner) for a in ALL4}


@pytest.fixture(scope="module")
def main_study(design, runner, scenarios, rcap_cutoffs):
    subset = [scenarios[0], scenarios[4], scenarios[5]]
    ocs = run_fixed_study(design, list(ALL4), rcap_cutoffs, subset, R, runner=runner)
    return {(oc.scenario, oc.approach): oc for oc in ocs}


def test_criterion_1_nex_hyperparameters():
    m, v = bs.nex_params(0.3)
    assert m == pytest.approx(-0.8473, abs=5e-5)
    assert v == pytest.approx(4.7619, abs=5e-5)
    report(1, f"nonexchangeable hyperparameters ({m:.4f}, {v:.4f})")


def test_criterion_2_oracle_equivalence():
    rng = np.random.default_rng(2024)
    mc = bs.McmcSettings(burn_in=5000, samples=20000, thin=5)
    worst = 0.0
    for i in range(50):
        n = int(rng.integers(1, 31))
        y = int(rng.integers(0, n + 1))
        data = bs.BasketData(y=(y,), n=(n,))
        res = bs.fit_independent(data, bs.PriorSpec(), 0.2, mc,
                                 rng=np.random.SeedSequence([MASTER, 2, i]))
        oracle = bs.oracle_independent(y, n, LOGIT_02, 100.0, 0.2)
        worst = max(worst, abs(res.prob_exceed_null[0] - oracle))
    assert worst < 0.015
    report(2, f"sampler vs quadrature over 50 cases, max gap {worst:.4f} < 0.015")


def test_criterion_3_model_reductions(design):
    rng = np.random.default_rng(2025)
    n = np.array(design.n)
    y = np.vstack([rng.binomial(n, rng.uniform(0.1, 0.5, size=5)) for _ in range(20)])
    # heavy thinning: the exchangeable chains carry autocorrelation times up
    # to ~30, and the 0.015 tolerance needs near-independent kept samples
    mc = bs.McmcSettings(burn_in=3000, samples=32000, thin=30)
    scope = (0, 1, 2, 3, 4)

    def gen(tag):
        return np.random.default_rng(np.random.SeedSequence([MASTER, 3, tag]))

    mix_ex = fit_batch("exnex", y, n, scope, bs.PriorSpec(pi=1.0), 0.2, mc, gen(0))
    hier = fit_batch("bhm", y, n, scope, bs.PriorSpec(), 0.2, mc, gen(1))
    gap_ex = np.abs(mix_ex.prob_exceed_null - hier.prob_exceed_null).max()
    assert gap_ex < 0.015

    mix_nex = fit_batch("exnex", y, n, scope, bs.PriorSpec(pi=0.0), 0.2, mc, gen(2))
    pri = bs.PriorSpec()
    nex_m, nex_v = pri.nex_mean_var(5)
    oracle = np.array([
        [bs.oracle_independent(int(y[r, k]), int(n[k]), nex_m[k], nex_v[k], 0.2)
         for k in range(5)]
        for r in range(20)
    ])
    gap_nex = np.abs(mix_nex.prob_exceed_null - oracle).max()
    assert gap_nex < 0.015
    report(3, f"mixture reductions: fully-exchangeable gap {gap_ex:.4f}, "
              f"fully-independent gap {gap_nex:.4f}, both < 0.015")


def test_criterion_4_cutoff_reproduction(rcap_cutoffs, gn_cutoffs):
    tol = 0.020  # desk-scale tolerance at 2000 replicates per scenario
    ind = rcap_cutoffs[A.IND_A]
    assert ind.delta[0] == pytest.approx(0.9030, abs=tol)
    assert ind.delta[4] == pytest.approx(0.8989, abs=tol)
    pl1 = gn_cutoffs[A.PL1]
    assert pl1.delta[0] == pytest.approx(0.8566, abs=tol)
    assert pl1.delta[4] == pytest.approx(0.8409, abs=tol)
    report(4, "cutoffs: robust-calibration ind "
              f"({ind.delta[0]:.4f}, {ind.delta[4]:.4f}) vs (0.9030, 0.8989); "
              f"global-null pl1 ({pl1.delta[0]:.4f}, {pl1.delta[4]:.4f}) "
              "vs (0.8566, 0.8409), all within 0.020")


def test_criterion_5_reference_operating_characteristics(main_study):
    sc1 = main_study[("scenario_1", "ind_a")]
    expected = (6.33, 6.52, 6.42, 6.46, 9.82)
    for got, want in zip(sc1.pct_reject, expected):
        assert got == pytest.approx(want, abs=1.5)
    assert sc1.fwer == pytest.approx(29.37, abs=2.5)
    for b in range(4):
        assert sc1.mean_estimate[b] == pytest.approx(0.202, abs=0.01)
        assert sc1.sd_estimate[b] == pytest.approx(0.068, abs=0.01)

    pl1_power = main_study[("scenario_6", "pl1")].pct_reject[4]
    ind_power = main_study[("scenario_6", "ind_a")].pct_reject[4]
    assert pl1_power == pytest.approx(72.52, abs=2.5)
    assert ind_power == pytest.approx(65.03, abs=2.5)
    assert pl1_power - ind_power >= 4.0

    ind_err = main_study[("scenario_5", "ind_a")].pct_reject[4]
    pl2_err = main_study[("scenario_5", "pl2")].pct_reject[4]
    assert ind_err == pytest.approx(9.82, abs=1.5)
    assert pl2_err == pytest.approx(13.17, abs=2.0)
    report(5, "reference rows reproduced: global-null rejections "
              f"{tuple(round(float(v), 2) for v in sc1.pct_reject)}, fwer {sc1.fwer:.2f}; "
              f"all-effective new-basket power pl1 {pl1_power:.2f} vs ind "
              f"{ind_power:.2f} (gain {pl1_power - ind_power:.1f}); "
              f"new-null errors ind {ind_err:.2f}, pl2 {pl2_err:.2f}")


def test_criterion_6_calibration_contrast(design, runner, scenarios, gn_cutoffs,
                                          main_study):
    ocs = run_fixed_study(design, [A.PL1, A.PL2], gn_cutoffs, [scenarios[4]], R,
                          runner=runner)
    gn_err = {oc.approach: oc.pct_reject[4] for oc in ocs}
    rc_err = {a.value: main_study[("scenario_5", a.value)].pct_reject[4]
              for a in (A.PL1, A.PL2)}
    for key in ("pl1", "pl2"):
        assert gn_err[key] > 20.0
        assert rc_err[key] < 16.0
        assert gn_err[key] > rc_err[key]
    report(6, "new-basket error when only the new basket is null: global-null "
              f"calibration pl1 {gn_err['pl1']:.1f} / pl2 {gn_err['pl2']:.1f} (>20); "
              f"robust calibration pl1 {rc_err['pl1']:.1f} / pl2 {rc_err['pl2']:.1f} (<16)")


def test_criterion_7_timing_sweep(design, runner, scenarios, rcap_spec):
    sizes = [4, 8, 14, 20, 24]
    sc6 = [scenarios[5]]
    results = {}
    for a in (A.PL1, A.PL2, A.IND_A):
        results[a] = run_timing_sweep(design, a, sizes, sc6, rcap_spec, R,
                                      MASTER, runner=runner)

    by_size = {a: {n: oc for n, oc in results[a].rows} for a in results}
    p24 = by_size[A.PL1][24].pct_reject[4]
    p4 = by_size[A.PL1][4].pct_reject[4]
    assert p24 - p4 >= 10.0

    spans = {}
    for a in (A.PL1, A.PL2):
        existing_mean = [np.mean(by_size[a][n].pct_reject[:4]) for n in sizes]
        spans[a] = max(existing_mean) - min(existing_mean)
        assert spans[a] <= 3.0

    ind_existing = [by_size[A.IND_A][n].pct_reject[:4] for n in sizes]
    assert all(cols == ind_existing[0] for cols in ind_existing)
    report(7, f"timing sweep: pl1 new-basket power {p4:.1f} at size 4 vs "
              f"{p24:.1f} at size 24 (gain {p24 - p4:.1f} >= 10); existing-basket "
              f"spans pl1 {spans[A.PL1]:.2f} / pl2 {spans[A.PL2]:.2f} <= 3; "
              "independent-new existing columns exactly constant")


def test_sweep_error_spike_at_two_patients(design, runner, scenarios, rcap_spec):
    # worst new-basket error across sizes shows up at very small counts: with
    # two patients and every existing basket effective, borrowing drives the
    # null new basket's error to roughly 24%
    result = run_timing_sweep(design, A.PL1, [2], [scenarios[4]], rcap_spec, R,
                              MASTER, runner=runner)
    err = result.rows[0][1].pct_reject[4]
    assert err == pytest.approx(23.8, abs=3.0)
    report("7b", f"new-basket error at two patients {err:.1f}, near the 23.8 mark")


def test_criterion_8_two_plus_two():
    design2 = bs.paper_design_2plus2()
    runner2 = StudyRunner(design2, MASTER)
    scen = bs.standard_scenarios(design2)
    ocs, _ = run_two_plus_two_study(design2, [A.IND_A, A.IND_B], scen, R,
                                    runner=runner2, calibration_replicates=R)
    by = {(oc.scenario, oc.approach): oc for oc in ocs}
    power_b = np.mean(by[("scenario_9", "ind_b")].pct_reject[2:])
    power_a = np.mean(by[("scenario_9", "ind_a")].pct_reject[2:])
    assert power_b - power_a >= 2.0
    # heterogeneous added baskets (one effective, one null): borrowing between
    # them inflates the null one's error to ~12% vs ~10% when independent
    err_b = np.mean([by[(f"scenario_{s}", "ind_b")].pct_reject[3] for s in (5, 6)])
    err_a = np.mean([by[(f"scenario_{s}", "ind_a")].pct_reject[3] for s in (5, 6)])
    assert err_b == pytest.approx(12.0, abs=2.5)
    assert err_a == pytest.approx(10.0, abs=2.0)
    assert err_b > err_a
    report(8, "two existing + two added, all effective: new-basket power "
              f"{power_b:.1f} with borrowing between added baskets vs "
              f"{power_a:.1f} independent (gain {power_b - power_a:.1f} >= 2); "
              f"heterogeneous-case errors {err_b:.1f} vs {err_a:.1f}")


def test_criterion_9_thread_count_determinism(tmp_path):
    cfg_text = """
[design]
preset = "paper_4plus1"

[mcmc]
burn_in = 1000
samples = 2000

[study]
kind = "fixed"
scenarios = [[0.2, 0.2, 0.2, 0.2, 0.2], [0.4, 0.4, 0.4, 0.4, 0.2]]
replicates = 40
approaches = ["ind_a", "unpl", "pl1", "pl2"]

[run]
master_seed = 31415
output_dir = "PLACEHOLDER"
"""
    cuts = tmp_path / "cutoffs.csv"
    write_cutoffs_csv(cuts, {
        a: bs.CutoffSet(delta=(0.903,) * 4 + (0.899,), method="rcap", seed=31415)
        for a in ALL4
    })
    outputs = {}
    for threads in (1, 8):
        out = tmp_path / f"t{threads}"
        cfg = tmp_path / f"cfg{threads}.toml"
        cfg.write_text(cfg_text.replace("PLACEHOLDER", str(out)))
        rc = main(["simulate", "--config", str(cfg), "--cutoffs", str(cuts),
                   "--threads", str(threads)])
        assert rc == 0
        outputs[threads] = (
            (out / "oc_long.csv").read_bytes(),
            (out / "fig2_fixed_scenarios.csv").read_bytes(),
        )
    assert outputs[1] == outputs[8]
    report(9, "simulate with 1 and 8 workers produced byte-identical tables")


def test_criterion_10_calibration_self_consistency(design, runner, scenarios,
                                                   rcap_cutoffs):
    ocs = run_fixed_study(design, [A.IND_A], rcap_cutoffs[A.IND_A],
                          scenarios[:5], R, runner=runner)
    err_existing = float(np.mean([oc.pct_reject[3] for oc in ocs[:4]]))
    err_new = float(np.mean([oc.pct_reject[4] for oc in ocs]))
    slack = 100.0 / R + 1e-9
    assert err_existing == pytest.approx(10.0, abs=slack)
    assert err_new == pytest.approx(10.0, abs=slack)
    report(10, "re-simulating the calibration scenarios with the calibration "
               f"seed: contributing-cell errors {err_existing:.3f} (existing) and "
               f"{err_new:.3f} (new) within 1/R of the 10% target")

import json

import pytest

import basketsim as bs
from basketsim.cli import main, read_cutoffs_csv, write_cutoffs_csv
from basketsim.config import emit_toml, load_config, parse_config

if True:  # tomllib on 3.11+, tomli before
    try:
        import tomllib as toml
    except ModuleNotFoundError:
        import tomli as toml


BASE = """
[design]
preset = "paper_4plus1"

[mcmc]
burn_in = 200
samples = 400

[calibration]
method = "rcap"
scenarios = "nested_nulls"
replicates = 25

[study]
kind = "fixed"
scenarios = [[0.2, 0.2, 0.2, 0.2, 0.2], [0.4, 0.4, 0.4, 0.4, 0.2]]
replicates = 20
approaches = ["ind_a", "pl1"]

[run]
master_seed = 4242
threads = 1
output_dir = "OUTDIR"
"""


@pytest.fixture()
def config_path(tmp_path):
    def make(text=BASE, name="cfg.toml", outdir=None):
        outdir = outdir or (tmp_path / "out")
        p = tmp_path / name
        p.write_text(text.replace("OUTDIR", str(outdir)))
        return p

    return make


@pytest.fixture()
def cutoffs_path(tmp_path):
    path = tmp_path / "cutoffs.csv"
    cut = {
        bs.Approach.IND_A: bs.CutoffSet(delta=(0.903,) * 4 + (0.8989,),
                                        method="rcap", seed=1,
                                        scenario_labels=("s1",)),
        bs.Approach.PL1: bs.CutoffSet(delta=(0.9034,) * 4 + (0.9021,),
                                      method="rcap", seed=1,
                                      scenario_labels=("s1",)),
    }
    write_cutoffs_csv(path, cut)
    return path


class TestConfig:
    def test_missing_required_key_exits_2(self, config_path, capsys):
        bad = BASE.replace('preset = "paper_4plus1"',
                           "k_existing = 4\nk_new = 1\nn = [24,24,24,24,14]\nq1 = 0.4")
        rc = main(["calibrate", "--config", str(config_path(bad))])
        assert rc == 2
        assert "q0" in capsys.readouterr().err

    def test_malformed_toml_exits_2(self, config_path, capsys):
        rc = main(["calibrate", "--config", str(config_path("[design\noops"))])
        assert rc == 2

    def test_global_null_with_non_null_scenario_exits_2(self, config_path, capsys):
        bad = BASE.replace('method = "rcap"', 'method = "global_null"').replace(
            'scenarios = "nested_nulls"',
            "scenarios = [[0.4, 0.2, 0.2, 0.2, 0.2]]",
        )
        rc = main(["calibrate", "--config", str(config_path(bad))])
        assert rc == 2

    def test_unknown_approach_exits_2(self, config_path):
        bad = BASE.replace('"pl1"', '"pl9"')
        assert main(["calibrate", "--config", str(config_path(bad))]) == 2

    def test_weighted_inline_calibration_scenarios(self, config_path):
        text = BASE.replace(
            'scenarios = "nested_nulls"',
            "scenarios = [[0.2, 0.2, 0.2, 0.2, 0.2], [0.4, 0.4, 0.4, 0.4, 0.2]]"
            "\nweights = [1, 2]",
        )
        cfg = load_config(config_path(text))
        spec = cfg.calibration_spec()
        assert [sc.weight for sc in spec.scenarios] == [1, 2]

    def test_weights_with_preset_exit_2(self, config_path):
        bad = BASE.replace('method = "rcap"', 'method = "rcap"\nweights = [1, 1]')
        assert main(["calibrate", "--config", str(config_path(bad))]) == 2

    def test_sweep_range_validation_exits_2(self, config_path):
        bad = BASE.replace('kind = "fixed"', 'kind = "timing_sweep"\napproach = "pl1"'
                           "\nn_new_min = 1\nn_new_max = 30")
        assert main(["sweep", "--config", str(config_path(bad))]) == 2

    def test_two_plus_two_needs_matching_design(self, config_path):
        assert main(["two-plus-two", "--config", str(config_path())]) == 2

    def test_infeasible_calibration_exits_3(self, config_path):
        bad = BASE.replace('scenarios = "nested_nulls"',
                           "scenarios = [[0.2, 0.2, 0.2, 0.2, 0.4]]")
        assert main(["calibrate", "--config", str(config_path(bad))]) == 3

    def test_effective_config_round_trip(self, config_path):
        cfg = load_config(config_path())
        text = emit_toml(cfg.effective)
        reparsed = parse_config(toml.loads(text))
        assert reparsed.effective == cfg.effective

    def test_effective_emission_idempotent(self, config_path):
        cfg = load_config(config_path())
        once = emit_toml(cfg.effective)
        twice = emit_toml(parse_config(toml.loads(once)).effective)
        assert once == twice


class TestCalibrateCommand:
    def test_writes_cutoffs_and_provenance(self, config_path, tmp_path, capsys):
        out = tmp_path / "out"
        rc = main(["calibrate", "--config", str(config_path())])
        assert rc == 0
        cutoffs = read_cutoffs_csv(out / "cutoffs.csv")
        assert set(cutoffs) == {bs.Approach.IND_A, bs.Approach.PL1}
        assert all(len(c.delta) == 5 for c in cutoffs.values())
        prov = json.loads((out / "cutoffs.provenance.json").read_text())
        assert prov["master_seed"] == 4242
        assert prov["version"] == bs.__version__

    def test_replicates_override(self, config_path, tmp_path):
        out = tmp_path / "out"
        rc = main(["calibrate", "--config", str(config_path()), "--replicates", "30"])
        assert rc == 0
        prov = json.loads((out / "cutoffs.provenance.json").read_text())
        assert prov["effective_config"]["calibration"]["replicates"] == 30


class TestSimulateCommand:
    def test_single_replicate_degenerate_percentages(self, config_path, cutoffs_path,
                                                     tmp_path, capsys):
        rc = main(["simulate", "--config", str(config_path()), "--cutoffs",
                   str(cutoffs_path), "--replicates", "1"])
        assert rc == 0
        import pandas as pd

        frame = pd.read_csv(tmp_path / "out" / "oc_long.csv")
        rej = frame[frame.metric == "pct_reject"].value
        assert set(rej.unique()) <= {0.0, 100.0}

    def test_cutoff_design_mismatch_exits_2(self, config_path, tmp_path):
        short = tmp_path / "short.csv"
        write_cutoffs_csv(short, {bs.Approach.IND_A: bs.CutoffSet(
            delta=(0.9,) * 4, method="rcap", seed=1)})
        rc = main(["simulate", "--config", str(config_path()), "--cutoffs", str(short)])
        assert rc == 2

    def test_missing_approach_rows_exit_2(self, config_path, tmp_path):
        partial = tmp_path / "partial.csv"
        write_cutoffs_csv(partial, {bs.Approach.IND_A: bs.CutoffSet(
            delta=(0.9,) * 5, method="rcap", seed=1)})
        rc = main(["simulate", "--config", str(config_path()), "--cutoffs",
                   str(partial)])
        assert rc == 2

    def test_thread_count_does_not_change_output(self, config_path, cutoffs_path,
                                                 tmp_path, capsys):
        out1, out2 = tmp_path / "o1", tmp_path / "o2"
        rc = main(["simulate", "--config", str(config_path()), "--cutoffs",
                   str(cutoffs_path), "--out", str(out1), "--threads", "1"])
        assert rc == 0
        rc = main(["simulate", "--config", str(config_path()), "--cutoffs",
                   str(cutoffs_path), "--out", str(out2), "--threads", "3"])
        assert rc == 0
        a = (out1 / "oc_long.csv").read_bytes()
        b = (out2 / "oc_long.csv").read_bytes()
        assert a == b

    def test_rerun_from_provenance_reproduces_outputs(self, config_path, cutoffs_path,
                                                      tmp_path, capsys):
        out1 = tmp_path / "first"
        rc = main(["simulate", "--config", str(config_path()), "--cutoffs",
                   str(cutoffs_path), "--out", str(out1)])
        assert rc == 0
        out2 = tmp_path / "second"
        rc = main(["simulate", "--config", str(out1 / "provenance.json"), "--cutoffs",
                   str(cutoffs_path), "--out", str(out2)])
        assert rc == 0
        assert (out1 / "oc_long.csv").read_bytes() == (out2 / "oc_long.csv").read_bytes()
        assert (out1 / "fig2_fixed_scenarios.csv").read_bytes() == (
            out2 / "fig2_fixed_scenarios.csv"
        ).read_bytes()

    def test_summary_printed(self, config_path, cutoffs_path, capsys):
        rc = main(["simulate", "--config", str(config_path()), "--cutoffs",
                   str(cutoffs_path)])
        assert rc == 0
        text = capsys.readouterr().out
        assert "fwer" in text and "scenario_1" in text

    def test_debug_chains(self, config_path, cutoffs_path, tmp_path):
        rc = main(["simulate", "--config", str(config_path()), "--cutoffs",
                   str(cutoffs_path), "--debug-chains"])
        assert rc == 0
        dumps = list((tmp_path / "out").glob("chains_*.csv"))
        assert dumps


class TestRandomTruthCommand:
    def test_outputs(self, config_path, cutoffs_path, tmp_path, capsys):
        text = BASE.replace(
            'kind = "fixed"',
            'kind = "random_truth"\nexisting_rates = [0.2, 0.2, 0.2, 0.2]'
            "\ninterval = [0.4, 0.5]",
        )
        rc = main(["random-truth", "--config", str(config_path(text)), "--cutoffs",
                   str(cutoffs_path)])
        assert rc == 0
        out = tmp_path / "out"
        assert (out / "discrepancies.csv").exists()
        assert (out / "fig3_discrepancy_heatmap.csv").exists()


class TestSweepCommand:
    def test_outputs(self, config_path, tmp_path, capsys):
        text = BASE.replace(
            'kind = "fixed"',
            'kind = "timing_sweep"\napproach = "pl1"\nn_new_values = [4, 8]',
        ).replace(
            "scenarios = [[0.2, 0.2, 0.2, 0.2, 0.2], [0.4, 0.4, 0.4, 0.4, 0.2]]",
            "scenarios = [[0.4, 0.4, 0.4, 0.4, 0.4]]",
        )
        rc = main(["sweep", "--config", str(config_path(text)), "--replicates", "15"])
        assert rc == 0
        out = tmp_path / "out"
        import pandas as pd

        cuts = pd.read_csv(out / "sweep_cutoffs.csv")
        assert sorted(cuts.n_new.unique().tolist()) == [4, 8]
        fig = pd.read_csv(out / "fig4_timing_pl1.csv")
        assert set(fig.basket_class.unique()) == {"existing", "new"}


class TestTwoPlusTwoCommand:
    def test_outputs(self, tmp_path, capsys):
        out = tmp_path / "out"
        text = f"""
[design]
preset = "paper_2plus2"

[mcmc]
burn_in = 200
samples = 400

[calibration]
replicates = 20

[study]
kind = "two_plus_two"
replicates = 15
approaches = ["ind_a", "ind_b"]

[run]
master_seed = 99
output_dir = "{out}"
"""
        p = tmp_path / "cfg2.toml"
        p.write_text(text)
        rc = main(["two-plus-two", "--config", str(p)])
        assert rc == 0
        assert (out / "cutoffs.csv").exists()
        assert (out / "oc_long.csv").exists()

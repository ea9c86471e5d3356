import numpy as np
import pytest

import decent_opt as do
from decent_opt import harness
from decent_opt.harness import ConfigError

MINIMAL = """
problem = quadratic
n = 32
d = 10
p = 20
sigma = 0.2236
algorithm = edm
alpha = 0.05
beta = 0.9
T = 1000
"""

TINY = """
problem = quadratic
n = 4
d = 2
p = 4
c = 2
sigma = 0.1
problem_seed = 1
topology = ring
lazy = true
algorithm = edm, dsgd
alpha = 0.05
beta = 0.9
T = 30
seed = 10
reps = 3
"""


class TestParseConfig:
    def test_minimal_with_defaults_echoed(self):
        cfg = harness.parse_config(MINIMAL)
        assert cfg.problem == "quadratic"
        assert cfg.reps == 1 and cfg.seed == 0 and cfg.topology == "ring"
        echo = cfg.scalar().echo()
        assert "reps = 1" in echo and "x0 = zeros" in echo
        again = harness.parse_config(echo)
        assert again == harness.parse_config(again.scalar().echo())

    def test_unknown_key_is_hard_error(self):
        with pytest.raises(ConfigError, match="unknown key"):
            harness.parse_config(MINIMAL + "\nwarmup = 5\n")

    def test_missing_required_key_named(self):
        with pytest.raises(ConfigError, match="'alpha'"):
            harness.parse_config(MINIMAL.replace("alpha = 0.05", ""))

    def test_unsupported_algorithm_lists_supported(self):
        with pytest.raises(ConfigError, match="decentlam.*supported"):
            harness.parse_config(MINIMAL.replace("algorithm = edm",
                                                 "algorithm = decentlam"))

    def test_logistic_requires_mu_reg(self):
        text = MINIMAL.replace("problem = quadratic", "problem = logistic"
                               ).replace("p = 20", "m = 50")
        with pytest.raises(ConfigError, match="mu_reg"):
            harness.parse_config(text)

    def test_duplicate_key(self):
        with pytest.raises(ConfigError, match="duplicate"):
            harness.parse_config(MINIMAL + "\nalpha = 0.01\n")

    def test_missing_file_rejected_at_parse_time(self):
        text = MINIMAL + "\ntopology = file\nmatrix_file = /nonexistent/w.csv\n"
        with pytest.raises(ConfigError, match="missing file"):
            harness.parse_config(text.replace("topology = ring\n", ""))

    def test_sweep_list_accepted_and_blocks_scalar_run(self):
        cfg = harness.parse_config(MINIMAL + "\nc = 1, 4, 16\n")
        assert cfg.c == (1.0, 4.0, 16.0)
        with pytest.raises(ConfigError, match="sweep"):
            cfg.scalar()

    def test_figure1_style_sweep_config(self):
        text = MINIMAL + "\nc = 1, 4, 16\nreps = 20\n"
        cfg = harness.parse_config(text)
        assert len(cfg.sweep_points()) == 3

    def test_inadmissible_alpha_warns_not_rejects(self, tmp_path):
        cfg = harness.parse_config(TINY.replace("alpha = 0.05", "alpha = 0.4"))
        with pytest.warns(UserWarning, match="admissible"):
            harness.run_experiment(cfg, out_dir=tmp_path / "o")


class TestRunExperiment:
    def test_reps_one_aggregate_equals_trace(self, tmp_path):
        cfg = harness.parse_config(TINY.replace("reps = 3", "reps = 1"))
        report = harness.run_experiment(cfg, out_dir=tmp_path / "out")
        agg = report.per_kind["edm"]
        assert agg.completed_reps == 1
        for name in ("subopt", "dist_sq"):
            assert np.array_equal(agg.std[name], np.zeros(cfg.T))
            assert np.array_equal(agg.mean[name], agg.minimum[name])

    def test_outputs_layout_and_provenance(self, tmp_path):
        cfg = harness.parse_config(TINY)
        report = harness.run_experiment(cfg, out_dir=tmp_path / "out")
        out = tmp_path / "out"
        assert (out / "effective-config.txt").exists()
        assert (out / "provenance.txt").exists()
        assert (out / "bounds.txt").exists()
        for kind in ("edm", "dsgd"):
            assert (out / kind / "aggregate.csv").exists()
            for r in range(3):
                assert (out / kind / f"rep{r:03d}.csv").exists()
        assert report.seeds == (10, 11, 12)
        prov = (out / "provenance.txt").read_text()
        assert "seeds = 10, 11, 12" in prov

    def test_rerun_is_bitwise_identical(self, tmp_path):
        cfg = harness.parse_config(TINY)
        harness.run_experiment(cfg, out_dir=tmp_path / "a")
        harness.run_experiment(cfg, out_dir=tmp_path / "b")
        for rel in ("edm/rep001.csv", "edm/aggregate.csv", "dsgd/rep002.csv"):
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()

    def test_jobs_do_not_change_outputs(self, tmp_path):
        cfg = harness.parse_config(TINY)
        harness.run_experiment(cfg, out_dir=tmp_path / "j1", jobs=1)
        harness.run_experiment(cfg, out_dir=tmp_path / "j4", jobs=4)
        for rel in ("edm/rep000.csv", "edm/aggregate.csv", "dsgd/rep001.csv"):
            assert (tmp_path / "j1" / rel).read_bytes() == (tmp_path / "j4" / rel).read_bytes()

    def test_aggregation_of_constant_traces(self):
        # Paired aggregation sanity: mean of k identical runs is the run, std 0.
        cfg = harness.parse_config(TINY.replace("sigma = 0.1", "sigma = 0"))
        report = harness.run_experiment(cfg)
        agg = report.per_kind["edm"]
        assert np.all(agg.std["subopt"] == 0.0)

    def test_failure_isolation(self, tmp_path):
        text = """
problem = quadratic
n = 8
d = 4
p = 8
c = 1
sigma = 0.1
problem_seed = 2
algorithm = dsgd, edm
alpha = 1.2
beta = 0.9
T = 400
reps = 2
"""
        cfg = harness.parse_config(text)
        with pytest.warns(UserWarning):
            report = harness.run_experiment(cfg, out_dir=tmp_path / "out")
        assert report.per_kind["dsgd"].failed_reps == (0, 1)
        assert report.per_kind["edm"].failed_reps == ()
        assert report.per_kind["edm"].completed_reps == 2
        assert report.any_failure
        assert (tmp_path / "out" / "edm" / "rep000.csv").exists()
        assert not (tmp_path / "out" / "dsgd" / "rep000.csv").exists()
        assert "dsgd" in (tmp_path / "out" / "provenance.txt").read_text()

    def test_paired_noise_makes_first_draws_identical(self):
        cfg = harness.parse_config(TINY)
        report = harness.run_experiment(cfg)
        # At t=1 both methods have taken one identical step from x0.
        edm = report.per_kind["edm"].mean["dist_sq"][0]
        dsgd = report.per_kind["dsgd"].mean["dist_sq"][0]
        assert not np.isnan(edm) and not np.isnan(dsgd)

    def test_bounds_attached(self):
        cfg = harness.parse_config(TINY)
        report = harness.run_experiment(cfg)
        for key in ("theorem1_bound", "theorem2_floor", "lambda", "zeta0_sq"):
            assert key in report.bounds


class TestSweep:
    def test_c_sweep_three_reports_and_index(self, tmp_path):
        cfg = harness.parse_config(TINY.replace("c = 2", "c = 1, 4, 16"))
        reports = harness.sweep(cfg, out_dir=tmp_path / "sw")
        assert len(reports) == 3
        index = (tmp_path / "sw" / "index.csv").read_text().splitlines()
        assert index[0] == "point,c,sigma_h,alpha,beta,n,path"
        assert len(index) == 4
        assert (tmp_path / "sw" / "pt002" / "edm" / "aggregate.csv").exists()

    def test_empty_sweep_equals_run(self):
        cfg = harness.parse_config(TINY)
        reports = harness.sweep(cfg)
        single = harness.run_experiment(cfg)
        assert len(reports) == 1
        assert np.array_equal(reports[0].per_kind["edm"].mean["subopt"],
                              single.per_kind["edm"].mean["subopt"])

    def test_budget_enforced_before_running(self):
        cfg = harness.parse_config(TINY.replace("c = 2", "c = 1, 2").replace(
            "alpha = 0.05", "alpha = 0.01, 0.02") + "sweep_budget = 3\n")
        with pytest.raises(ConfigError, match="budget"):
            cfg.sweep_points()


class TestVerifyChecks:
    @pytest.fixture(scope="class")
    def sigma0_cfg(self):
        return harness.parse_config("""
problem = quadratic
n = 8
d = 3
p = 6
c = 1
sigma = 0
problem_seed = 3
topology = ring
lazy = true
algorithm = edm
alpha = 0.003
beta = 0.9
T = 150
""")

    def test_lemma1_lemma2_lemma5_pass(self, sigma0_cfg):
        for check in ("lemma1", "lemma2", "lemma5"):
            ok, detail = harness.verify_check(sigma0_cfg, check)
            assert ok, (check, detail)

    def test_lemma_checks_refuse_noise(self):
        cfg = harness.parse_config(TINY)
        with pytest.raises(ConfigError, match="sigma"):
            harness.verify_check(cfg, "lemma1")

    def test_lemma3_and_shadow_pass(self):
        cfg = harness.parse_config(TINY.replace("reps = 3", "reps = 30"
                                                ).replace("T = 30", "T = 80"))
        ok, ratio = harness.verify_check(cfg, "lemma3")
        assert ok and 0 < ratio <= 1
        ok, gap = harness.verify_check(cfg, "shadow")
        assert ok and gap <= 1e-8

    def test_bounds_envelope_on_admissible_run(self):
        cfg = harness.parse_config("""
problem = quadratic
n = 8
d = 3
p = 6
c = 1
sigma = 0.1
problem_seed = 3
topology = ring
lazy = true
algorithm = edm
alpha = 0.002
beta = 0.9
T = 400
reps = 5
""")
        ok, ratio = harness.verify_check(cfg, "bounds")
        assert ok, ratio

    def test_unknown_check(self, sigma0_cfg):
        with pytest.raises(ConfigError):
            harness.verify_check(sigma0_cfg, "lemma9")


def test_jobs_env_override(monkeypatch):
    monkeypatch.setenv("DECENT_OPT_JOBS", "7")
    assert harness._resolve_jobs(1) == 7
    monkeypatch.setenv("DECENT_OPT_JOBS", "zebra")
    with pytest.raises(ConfigError):
        harness._resolve_jobs(1)

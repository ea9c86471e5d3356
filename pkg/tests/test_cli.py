import numpy as np
import pytest

import decent_opt as do
from decent_opt.cli import main

CONFIG = """
problem = quadratic
n = 4
d = 2
p = 4
c = 2
sigma = 0.1
problem_seed = 1
topology = ring
lazy = true
algorithm = edm
alpha = 0.01
beta = 0.9
T = 40
seed = 3
reps = 2
"""


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "config.txt"
    path.write_text(CONFIG)
    return path


class TestTopologyCommand:
    def test_ring_report_and_csv(self, tmp_path, capsys):
        out = tmp_path / "w.csv"
        code = main(["topology", "--kind", "ring", "--n", "6", "--out", str(out)])
        captured = capsys.readouterr().out
        assert code == 0
        assert "check=positive_diagonal pass=true" in captured
        assert "lambda=" in captured
        loaded = do.load_matrix_csv(out)
        assert np.array_equal(loaded.w, do.build_ring(6).w)

    def test_lazy_flag(self, capsys):
        code = main(["topology", "--kind", "complete", "--n", "4", "--lazy"])
        out = capsys.readouterr().out
        assert code == 0
        assert "check=positive_min_eigenvalue pass=true" in out

    def test_file_round_trip_and_rejection(self, tmp_path, capsys):
        good = tmp_path / "good.csv"
        do.save_matrix_csv(do.lazy_transform(do.build_ring(5)), good)
        assert main(["topology", "--kind", "file", "--file", str(good)]) == 0
        capsys.readouterr()
        bad = tmp_path / "bad.csv"
        bad.write_text("0.9,0.3\n0.3,0.9\n")
        assert main(["topology", "--kind", "file", "--file", str(bad)]) == 1

    def test_missing_n_is_config_error(self):
        assert main(["topology", "--kind", "ring"]) == 1


class TestRunCommand:
    def test_run_writes_outputs(self, config_path, tmp_path, capsys):
        out = tmp_path / "results"
        code = main(["run", "--config", str(config_path), "--out", str(out)])
        stdout = capsys.readouterr().out
        assert code == 0
        assert "algorithm=edm" in stdout
        assert (out / "edm" / "rep000.csv").exists()
        header = (out / "edm" / "rep000.csv").read_text().splitlines()[0]
        assert header == "t,consensus_dev,grad_avg_sq,grad_bar_sq,subopt,dist_sq,m_bar_sq"

    def test_bad_config_exit_code(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text(CONFIG + "\nalgorithm_name = oops\n")
        assert main(["run", "--config", str(path)]) == 1

    def test_divergence_exit_code(self, tmp_path):
        path = tmp_path / "div.txt"
        path.write_text(CONFIG.replace("alpha = 0.01", "alpha = 80.0"))
        code = main(["run", "--config", str(path), "--out", str(tmp_path / "o")])
        assert code == 2

    def test_jobs_flag_bitwise_identical(self, config_path, tmp_path):
        main(["run", "--config", str(config_path), "--out", str(tmp_path / "a"),
              "--jobs", "1"])
        main(["run", "--config", str(config_path), "--out", str(tmp_path / "b"),
              "--jobs", "3"])
        rel = "edm/rep001.csv"
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


class TestSweepCommand:
    def test_sweep_outputs(self, tmp_path, capsys):
        path = tmp_path / "sweep.txt"
        path.write_text(CONFIG.replace("c = 2", "c = 1, 4"))
        code = main(["sweep", "--config", str(path), "--out", str(tmp_path / "sw")])
        assert code == 0
        assert "2 points" in capsys.readouterr().out
        assert (tmp_path / "sw" / "index.csv").exists()
        assert (tmp_path / "sw" / "pt001" / "edm" / "aggregate.csv").exists()


class TestVerifyCommand:
    def test_shadow_check_passes(self, config_path, capsys):
        code = main(["verify", "--config", str(config_path), "--check", "shadow"])
        out = capsys.readouterr().out
        assert code == 0
        assert out.startswith("check=shadow status=pass detail=")

    def test_lemma1_requires_sigma_zero(self, config_path):
        assert main(["verify", "--config", str(config_path), "--check", "lemma1"]) == 1

    def test_lemma1_passes_on_noise_free_config(self, tmp_path, capsys):
        path = tmp_path / "quiet.txt"
        path.write_text(CONFIG.replace("sigma = 0.1", "sigma = 0"
                                       ).replace("alpha = 0.01", "alpha = 0.003"))
        code = main(["verify", "--config", str(path), "--check", "lemma1"])
        assert code == 0
        assert "status=pass" in capsys.readouterr().out


class TestBoundsCommand:
    def test_nonconvex(self, capsys):
        code = main(["bounds", "--alpha", "0.001", "--beta", "0", "--lambda", "0",
                     "--L", "1", "--sigma2", "1", "--zeta02", "1", "--n", "8",
                     "--T", "100", "--regime", "nonconvex", "--f0-gap", "1"])
        out = capsys.readouterr().out
        assert code == 0
        assert "theorem1_bound=" in out
        assert "alpha_max_nonconvex=0.25" in out

    def test_pl(self, capsys):
        code = main(["bounds", "--alpha", "0.0001", "--beta", "0.9", "--lambda",
                     "0.99", "--L", "2", "--mu", "0.5", "--sigma2", "1",
                     "--zeta02", "1", "--n", "8", "--T", "100", "--regime", "pl"])
        out = capsys.readouterr().out
        assert code == 0
        for key in ("rho1=", "rho2=", "theorem2_floor=", "theorem2_bound_at_T="):
            assert key in out

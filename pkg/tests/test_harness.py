import json
import warnings

import numpy as np
import pytest

from lvggm.harness.cli import EXIT_DATA, EXIT_NONCONVERGED, EXIT_OK, EXIT_USAGE, main
from lvggm.harness.experiment import (
    CURVE_COLUMNS,
    ConfigError,
    ExperimentConfig,
    meets_rate,
    run_consistency_experiment,
    worker_count,
)
from lvggm.harness.ingest import ConstantColumnWarning, IngestError, ingest_csv, write_edges_csv, write_matrix_csv
from lvggm.lvmodel import build_cycle_model, marginalize

from conftest import random_spd

SMALL = {
    "schema": "lvggm.experiment/1",
    "model": {"name": "cycle", "p": 12, "h": 1, "seed": 0},
    "n_grid": [400, 4000],
    "trials_per_n": 3,
    "master_seed": 7,
    "lambda_scale": 4.0,
    "gamma": 0.35,
    "outputs": {"stem": "small"},
}


def write_text(path, text):
    path.write_text(text, encoding="utf-8")
    return path


@pytest.fixture(scope="module")
def model_file(tmp_path_factory):
    d = tmp_path_factory.mktemp("model")
    path = d / "model.json"
    assert main(["model", "--p", "12", "--h", "1", "--seed", "0", "--out", str(path),
                 "--samples", "3000", "--samples-out", str(d / "samples.csv"), "--sample-seed", "1"]) == EXIT_OK
    return path


class TestIngest:
    def test_identity_covariance(self, tmp_path):
        path = write_text(tmp_path / "cov.csv", "a,b\n1,0\n0,1\n")
        sample = ingest_csv(path, "covariance", n=10)
        np.testing.assert_array_equal(sample.Sigma_n, np.eye(2))
        assert sample.n == 10

    def test_samples_centered(self, tmp_path):
        X = np.array([[1.0, 2.0], [3.0, 2.5], [5.0, 0.5]])
        write_matrix_csv(tmp_path / "x.csv", X)
        sample = ingest_csv(tmp_path / "x.csv")
        Xc = X - X.mean(axis=0)
        np.testing.assert_allclose(sample.Sigma_n, Xc.T @ Xc / 3, atol=1e-15)
        assert sample.n == 3

    def test_constant_column_warns(self, tmp_path):
        path = write_text(tmp_path / "x.csv", "a,b,c\n1,5,2\n2,5,0\n4,5,1\n")
        with pytest.warns(ConstantColumnWarning, match="b"):
            sample = ingest_csv(path)
        assert np.all(sample.Sigma_n[1] == 0) and np.all(sample.Sigma_n[:, 1] == 0)

    def test_synthetic_216_by_84(self, tmp_path):
        X = np.random.default_rng(0).standard_normal((216, 84))
        write_matrix_csv(tmp_path / "returns.csv", X, names=[f"co{k}" for k in range(84)])
        sample = ingest_csv(tmp_path / "returns.csv")
        assert sample.p == 84 and sample.n == 216

    @pytest.mark.parametrize("text, mode, line, column", [
        ("a,b\n1,2\n3\n", "samples", 3, None),
        ("a,b\n1,2\n3,x\n", "samples", 3, 2),
        ("a,b\n1,nan\n", "samples", 2, 2),
        ("a,b\n1,0.5\n0.4,1\n", "covariance", 2, 2),
    ])
    def test_errors_carry_location(self, tmp_path, text, mode, line, column):
        path = write_text(tmp_path / "bad.csv", text)
        with pytest.raises(IngestError) as info:
            ingest_csv(path, mode, n=5 if mode == "covariance" else None)
        assert info.value.line == line
        if column is not None:
            assert info.value.column == column
            assert f"column {column}" in str(info.value)

    def test_other_errors(self, tmp_path):
        with pytest.raises(IngestError):
            ingest_csv(write_text(tmp_path / "e.csv", ""))
        with pytest.raises(IngestError):
            ingest_csv(write_text(tmp_path / "h.csv", "a,b\n"))
        cov = write_text(tmp_path / "c.csv", "a,b\n1,0\n0,1\n")
        with pytest.raises(IngestError):
            ingest_csv(cov, "covariance")
        with pytest.raises(IngestError):
            ingest_csv(cov, "correlation")
        with pytest.raises(IngestError):
            ingest_csv(write_text(tmp_path / "r.csv", "a,b\n1,0\n0,1\n2,2\n"), "covariance", n=3)
        with pytest.raises(IngestError):
            ingest_csv(write_text(tmp_path / "s.csv", "a\n1\n2\n"), n=5)

    def test_symmetry_tolerance(self, tmp_path):
        path = write_text(tmp_path / "c.csv", "a,b\n1,0.5\n0.500000000001,1\n")
        sample = ingest_csv(path, "covariance", n=4)
        assert sample.Sigma_n[0, 1] == sample.Sigma_n[1, 0]

    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(3)
        for k in range(20):
            C = random_spd(rng, int(rng.integers(1, 30)))
            write_matrix_csv(tmp_path / f"c{k}.csv", C)
            back = ingest_csv(tmp_path / f"c{k}.csv", "covariance", n=100).Sigma_n
            assert np.max(np.abs(back - C)) <= 1e-12

    def test_edges_csv(self, tmp_path):
        S = np.array([[1.0, -0.3, 0.0], [-0.3, 1.0, 1e-9], [0.0, 1e-9, 1.0]])
        assert write_edges_csv(tmp_path / "e.csv", S, 1e-8, names=["a", "b", "c"]) == 1
        lines = (tmp_path / "e.csv").read_text().splitlines()
        assert lines == ["i,j,name_i,name_j,value,sign", "0,1,a,b,-0.3,-1"]


class TestConfig:
    def test_roundtrip(self):
        cfg = ExperimentConfig.from_dict(SMALL)
        assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg

    @pytest.mark.parametrize("patch", [
        {"n_grid": [400, 200]}, {"n_grid": []}, {"n_grid": [0, 5]}, {"trials_per_n": 0},
        {"model": {"p": 12}}, {"solver": {"bogus": 1}}, {"schema": "other/1"}, {"unknown_field": 3},
    ])
    def test_invalid(self, patch):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({**SMALL, **patch})

    def test_bundled_fixture_loads(self):
        from importlib.resources import files

        cfg = ExperimentConfig.load(files("lvggm.harness") / "configs" / "cycle_p36_h2.json")
        assert cfg.model["p"] == 36 and cfg.model["h"] == 2 and cfg.trials_per_n == 50

    def test_thread_cap(self, monkeypatch):
        monkeypatch.setenv("LVGGM_THREADS", "3")
        assert worker_count() == 3
        monkeypatch.setenv("LVGGM_THREADS", "0")
        assert worker_count() == 1
        monkeypatch.setenv("LVGGM_THREADS", "many")
        with pytest.raises(ConfigError):
            worker_count()
        monkeypatch.delenv("LVGGM_THREADS")
        assert worker_count() >= 1


class TestExperiment:
    def test_schedule_independent(self):
        cfg = ExperimentConfig.from_dict(SMALL)
        serial = run_consistency_experiment(cfg, workers=1)
        pooled = run_consistency_experiment(cfg, workers=4)
        assert json.dumps(serial.to_dict()) == json.dumps(pooled.to_dict())

    def test_curve_shape(self):
        curve = run_consistency_experiment(ExperimentConfig.from_dict(SMALL), workers=2)
        assert list(curve.n) == [400, 4000]
        for row in curve.rows:
            assert 0.0 <= row.p_success <= 1.0 and row.trials == 3
        assert len(curve.trials) == 6

    def test_single_trial_is_bernoulli(self):
        cfg = ExperimentConfig.from_dict({**SMALL, "n_grid": [100000], "trials_per_n": 1})
        curve = run_consistency_experiment(cfg, workers=1)
        assert curve.rows[0].p_success in (0.0, 1.0)
        assert curve.rows[0].ci_halfwidth == 0.0

    def test_no_latents(self):
        cfg = ExperimentConfig.from_dict({**SMALL, "model": {"name": "cycle", "p": 12, "h": 0, "seed": 0},
                                          "n_grid": [20000], "trials_per_n": 2})
        curve = run_consistency_experiment(cfg, workers=1)
        for t in curve.trials:
            assert t.verdict.true_rank == 0
            assert t.verdict.rank_match == (t.verdict.estimated_rank == 0)

    def test_gamma_sweep_mode(self):
        cfg = ExperimentConfig.from_dict({**SMALL, "gamma": [0.2, 0.35, 0.6], "n_grid": [4000], "trials_per_n": 2})
        curve = run_consistency_experiment(cfg, workers=1)
        assert all(t.gamma in (0.2, 0.35, 0.6) for t in curve.trials)

    def test_nonconverged_counted_as_failure(self):
        cfg = ExperimentConfig.from_dict({**SMALL, "solver": {"max_iters": 2}, "trials_per_n": 2})
        curve = run_consistency_experiment(cfg, workers=1)
        assert all(r.nonconverged == 2 and r.p_success == 0.0 for r in curve.rows)

    @pytest.mark.parametrize("k, expected", [(50, True), (41, True), (40, False), (30, False)])
    def test_binomial_allowance(self, k, expected):
        assert meets_rate(k, 50, 0.9) is expected


class TestCLI:
    def test_model_and_samples(self, model_file):
        doc = json.loads(model_file.read_text())
        assert doc["schema"] == "lvggm.model/1"
        assert ingest_csv(model_file.parent / "samples.csv").n == 3000

    def test_fit_outputs(self, model_file, tmp_path):
        argv = ["fit", "--input", str(model_file.parent / "samples.csv"), "--gamma", "0.35",
                "--lambda-scale", "4", "--truth", str(model_file), "--compare-sparse", "--out-dir", str(tmp_path)]
        assert main(argv) == EXIT_OK
        doc = json.loads((tmp_path / "fit.json").read_text())
        assert doc["converged"] and doc["n"] == 3000 and len(doc["variables"]) == 12
        assert doc["kkt"]["max"] <= 1e-6
        assert doc["kl_vs_sample"] >= 0 and doc["sparse_only"]["kl_vs_sample"] >= 0
        verdict = json.loads((tmp_path / "fit_verdict.json").read_text())
        assert "algebraically_consistent" in verdict
        assert (tmp_path / "fit_edges.csv").read_text().startswith("i,j,name_i,name_j,value,sign")

    def test_fit_covariance_mode(self, tmp_path):
        C = marginalize(build_cycle_model(8, 1, seed=0)).Sigma_marg
        write_matrix_csv(tmp_path / "cov.csv", C)
        argv = ["fit", "--input", str(tmp_path / "cov.csv"), "--mode", "covariance", "--n", "216",
                "--lambda-scale", "1.0", "--gamma", "0.1", "--out-dir", str(tmp_path)]
        assert main(argv) == EXIT_OK
        assert (tmp_path / "fit.json").exists() and (tmp_path / "fit_edges.csv").exists()

    def test_fit_nonconverged(self, model_file, tmp_path):
        argv = ["fit", "--input", str(model_file.parent / "samples.csv"), "--max-iters", "2",
                "--out-dir", str(tmp_path)]
        assert main(argv) == EXIT_NONCONVERGED
        assert json.loads((tmp_path / "fit.json").read_text())["converged"] is False

    def test_sweep(self, model_file, tmp_path):
        argv = ["sweep", "--input", str(model_file.parent / "samples.csv"), "--gammas", "0.1,0.35,1.0",
                "--lambda-scale", "4", "--out-dir", str(tmp_path)]
        assert main(argv) == EXIT_OK
        doc = json.loads((tmp_path / "sweep.json").read_text())
        assert len(doc["points"]) == 3
        assert (tmp_path / "sweep.csv").read_text().splitlines()[0] == "gamma,rank,edges,converged,objective,pattern_id"

    def test_diagnose_model(self, model_file, tmp_path):
        assert main(["diagnose", "--model", str(model_file), "--nearby", "4", "--out-dir", str(tmp_path)]) == EXIT_OK
        doc = json.loads((tmp_path / "diagnose.json").read_text())
        assert "gamma_range" in doc and "geometry" in doc and "fisher" in doc

    def test_diagnose_matrix_pair(self, tmp_path):
        d = marginalize(build_cycle_model(8, 1, seed=0))
        write_matrix_csv(tmp_path / "S.csv", d.S_true)
        write_matrix_csv(tmp_path / "L.csv", d.L_true)
        argv = ["diagnose", "--S", str(tmp_path / "S.csv"), "--L", str(tmp_path / "L.csv"), "--nearby", "2",
                "--out-dir", str(tmp_path)]
        assert main(argv) == EXIT_OK
        assert json.loads((tmp_path / "diagnose.json").read_text())["rank"] == 1

    def test_experiment_deterministic(self, tmp_path):
        cfg = write_text(tmp_path / "small.json", json.dumps(SMALL))
        outputs = []
        for run, workers in enumerate(("1", "3")):
            out = tmp_path / f"run{run}"
            assert main(["experiment", "--config", str(cfg), "--out-dir", str(out), "--workers", workers]) == EXIT_OK
            summary = json.loads((out / "small_summary.json").read_text())
            assert summary.pop("created")
            outputs.append(((out / "small_curve.csv").read_bytes(), summary))
        assert outputs[0] == outputs[1]
        lines = outputs[0][0].decode().splitlines()
        assert lines[0] == ",".join(CURVE_COLUMNS) and len(lines) == 3

    @pytest.mark.parametrize("argv", [
        [], ["bogus"], ["fit"], ["fit", "--input", "x.csv", "--mode", "matrix"],
        ["fit", "--input", "{cov}", "--mode", "covariance"],
        ["fit", "--input", "{cov}", "--mode", "covariance", "--n", "5", "--lambda", "-1"],
        ["sweep", "--input", "{cov}", "--mode", "covariance", "--n", "5", "--gammas", "0.5,0.1"],
        ["diagnose"], ["model", "--out", "m.json"],
    ])
    def test_usage_errors(self, tmp_path, argv, capsys):
        cov = write_text(tmp_path / "cov.csv", "a,b\n1,0\n0,1\n")
        argv = [a.replace("{cov}", str(cov)) for a in argv]
        try:
            code = main(argv)
        except SystemExit as exc:
            code = exc.code
        assert code == EXIT_USAGE

    @pytest.mark.parametrize("content", ["a,b\n1,2\n3\n", "a,b\n1,0.5\n0.1,1\n", "a,b\n1,2\n2,1\n"])
    def test_data_errors(self, tmp_path, content):
        path = write_text(tmp_path / "bad.csv", content)
        argv = ["fit", "--input", str(path), "--mode", "covariance", "--n", "5", "--out-dir", str(tmp_path)]
        assert main(argv) == EXIT_DATA

    def test_missing_and_malformed_files(self, tmp_path):
        assert main(["fit", "--input", str(tmp_path / "nope.csv")]) == EXIT_DATA
        bad = write_text(tmp_path / "cfg.json", "{not json")
        assert main(["experiment", "--config", str(bad)]) == EXIT_DATA
        assert main(["diagnose", "--model", str(bad)]) == EXIT_DATA


class TestPlots:
    @pytest.fixture(autouse=True)
    def _needs_matplotlib(self):
        pytest.importorskip("matplotlib")

    @staticmethod
    def is_png(path):
        return path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"

    def test_fit_and_sweep(self, model_file, tmp_path):
        samples = str(model_file.parent / "samples.csv")
        assert main(["fit", "--input", samples, "--lambda-scale", "4", "--gamma", "0.35", "--plot",
                     "--out-dir", str(tmp_path)]) == EXIT_OK
        assert main(["sweep", "--input", samples, "--lambda-scale", "4", "--gamma-num", "5", "--plot",
                     "--out-dir", str(tmp_path)]) == EXIT_OK
        assert self.is_png(tmp_path / "fit.png") and self.is_png(tmp_path / "sweep.png")

    def test_experiment(self, tmp_path):
        cfg = write_text(tmp_path / "small.json", json.dumps({**SMALL, "trials_per_n": 1}))
        assert main(["experiment", "--config", str(cfg), "--out-dir", str(tmp_path), "--plot"]) == EXIT_OK
        assert self.is_png(tmp_path / "small_curve.png")

    def test_missing_matplotlib_is_usage_error(self, model_file, tmp_path, monkeypatch):
        import sys

        monkeypatch.setitem(sys.modules, "matplotlib", None)
        argv = ["fit", "--input", str(model_file.parent / "samples.csv"), "--plot", "--out-dir", str(tmp_path)]
        assert main(argv) == EXIT_USAGE

import json

import numpy as np
import pytest

from main import main
from output import read_matrix_csv, read_rows


def run(config_dir, command, config, out, *extra):
    return main([command, "--config", str(config_dir / config), "--out", str(out), *extra])


def test_encode_identity_gives_identity_matrix(config_dir, tmp_path):
    assert run(config_dir, "encode", "identity.json", tmp_path) == 0
    A, meta = read_matrix_csv(tmp_path / "A.csv")
    assert meta["m"] == 33
    np.testing.assert_allclose(A, np.eye(33), atol=1e-8)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["subcommand"] == "encode"
    assert manifest["files"] == ["A.csv", "Q.csv", "R.csv", "conditioning.csv"]


def test_reruns_are_byte_identical(config_dir, tmp_path):
    run(config_dir, "encode", "rotation.json", tmp_path)
    first = {p.name: p.read_bytes() for p in tmp_path.iterdir()}
    run(config_dir, "encode", "rotation.json", tmp_path)
    second = {p.name: p.read_bytes() for p in tmp_path.iterdir()}
    assert first == second


def test_unknown_key_exits_with_argument_error(config_dir, tmp_path, capsys):
    assert run(config_dir, "encode", "identity.json", tmp_path, "--set", "scenario.horizon=3") == 2
    assert "unknown config key 'scenario.horizon'" in capsys.readouterr().out
    assert not (tmp_path / "manifest.json").exists()


def test_missing_config_exits_with_argument_error(tmp_path):
    assert main(["spectrum", "--config", str(tmp_path / "none.json")]) == 2


def test_rotation_predict(config_dir, tmp_path):
    assert run(config_dir, "predict", "rotation.json", tmp_path) == 0
    _rows, meta = read_rows(tmp_path / "comparison.csv")
    assert meta["rmse"] < 1e-6
    truth, _ = read_rows(tmp_path / "truth.csv")
    assert len(truth) == 51


def test_outside_start_exits_with_argument_error(config_dir, tmp_path):
    assert run(config_dir, "predict", "rotation.json", tmp_path, "--set", "scenario.x0=[1.5]") == 2


def test_quick_sweep(config_dir, tmp_path):
    assert run(config_dir, "sweep", "rotation.json", tmp_path) == 0
    rows, meta = read_rows(tmp_path / "sweep.csv")
    assert [int(r["m"]) for r in rows] == [3, 5, 17]
    assert all(float(r["rmse"]) < 1e-6 for r in rows)
    assert meta["decoder"] == "phase"


def test_ensemble_sweep_pools_initial_states(config_dir, tmp_path):
    extra = ["--set", "analysis.sweep_m=[17, 33]", "--set", "scenario.steps=8"]
    assert run(config_dir, "sweep", "sweep.json", tmp_path, *extra) == 0
    rows, meta = read_rows(tmp_path / "sweep.csv")
    assert [int(r["m"]) for r in rows] == [17, 33]
    assert meta["initial_states"] == 9
    assert all(0.0 < float(r["rmse"]) < 1.0 for r in rows)


def test_ragged_ensemble_exits_with_argument_error(config_dir, tmp_path):
    bad = "scenario.ensemble=[[0.1], [0.2, 0.3]]"
    assert run(config_dir, "sweep", "sweep.json", tmp_path, "--set", bad) == 2


def test_spectrum_of_rotation(config_dir, tmp_path):
    assert run(config_dir, "spectrum", "rotation.json", tmp_path) == 0
    rows, meta = read_rows(tmp_path / "spectrum.csv")
    assert len(rows) == 17
    assert meta["classification"] == "marginally stable"


def test_small_kernel_check(config_dir, tmp_path):
    assert run(config_dir, "kernel-check", "kernel_check.json", tmp_path, "--set", "analysis.kernel_n_max=[4, 8]") == 0
    rows, _ = read_rows(tmp_path / "kernel_check.csv")
    assert len(rows) == 8
    assert len(list(tmp_path.glob("kernel_*_m*.csv"))) == 8
    K, meta = read_matrix_csv(tmp_path / "kappa_m17.csv")
    assert meta["dtype"] == "complex"
    assert K.shape[0] == K.shape[1]


def test_small_residuals(config_dir, tmp_path):
    code = run(config_dir, "residuals", "residuals.json", tmp_path, "--set", "analysis.residual_N=[9, 17, 33]")
    assert code == 0
    rows, _ = read_rows(tmp_path / "residuals.csv")
    assert len(rows) == 9
    assert {r["i"] for r in rows} == {"1", "2", "5"}


def test_small_centers(config_dir, tmp_path):
    code = run(
        config_dir,
        "centers",
        "centers.json",
        tmp_path,
        "--set",
        "dictionary.centers=12",
        "--set",
        "dictionary.sample_trajectories=3",
        "--set",
        "dictionary.sample_steps=60",
    )
    assert code == 0
    assert (tmp_path / "centers.csv").exists()


def test_centers_rejects_univariate_system(config_dir, tmp_path):
    assert run(config_dir, "centers", "identity.json", tmp_path) == 2


@pytest.mark.slow
def test_spectrum_run(config_dir, tmp_path):
    assert run(config_dir, "spectrum", "spectrum.json", tmp_path) == 0
    rows, meta = read_rows(tmp_path / "spectrum.csv")
    assert len(rows) == 257
    assert meta["max_abs"] <= 1.02
    assert meta["classification"] == "marginally stable"

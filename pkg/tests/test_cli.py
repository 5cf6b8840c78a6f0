import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from stereokin import cli
from stereokin.bandmap import model_trace
from stereokin.errors import IntegrationError
from stereokin.fitting import FitResult
from stereokin.pipeline import StereodynamicsPipeline
from stereokin.storage import manifest_path

DATA = Path(__file__).resolve().parents[1] / "data"
CONFIG = str(DATA / "example_config.json")
RATES = str(DATA / "example_rates.json")


@pytest.fixture
def run(tmp_path):
    def _run(*argv):
        return cli.main(["--runs-dir", str(tmp_path / "runs"), *argv])
    return _run


def test_simulate_writes_csv_and_manifest(run, tmp_path):
    out = tmp_path / "traj.csv"
    assert run("simulate", "--config", CONFIG, "--rates", RATES, "--out", str(out)) == cli.EXIT_OK
    frame = pd.read_csv(out)
    assert list(frame.columns) == ["t_s", "n0_cm2", "n1_cm2", "n2_cm2", "ntot_cm2"]
    assert len(frame) == 20
    assert frame["ntot_cm2"].is_monotonic_decreasing
    manifest = json.loads(manifest_path(out).read_text())
    assert manifest["subcommand"] == "simulate"
    assert manifest["config"]["temperature_nk"] == 800.0
    assert CONFIG in manifest["inputs"]


def test_simulate_is_deterministic(run, tmp_path):
    paths = []
    for name in ("a", "b"):
        out = tmp_path / f"{name}.csv"
        data = tmp_path / f"{name}_data.csv"
        assert run("simulate", "--config", CONFIG, "--rates", RATES, "--out", str(out),
                   "--dataset-out", str(data), "--seed", "9") == cli.EXIT_OK
        paths.append((out, data))
    assert paths[0][0].read_bytes() == paths[1][0].read_bytes()
    assert paths[0][1].read_bytes() == paths[1][1].read_bytes()


def test_simulate_gnuplot(run, tmp_path):
    out = tmp_path / "traj.csv"
    assert run("simulate", "--config", CONFIG, "--rates", RATES, "--out", str(out), "--gnuplot") == cli.EXIT_OK
    assert out.with_suffix(".gp").exists()


def test_missing_config_exits_2(run, tmp_path, capsys):
    missing = tmp_path / "nowhere.json"
    assert run("simulate", "--config", str(missing), "--rates", RATES) == cli.EXIT_INPUT
    assert str(missing) in capsys.readouterr().err


def test_malformed_config_exits_2(run, tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "temperature_nk": "warm"\n}\n')
    assert run("simulate", "--config", str(bad), "--rates", RATES) == cli.EXIT_INPUT
    err = capsys.readouterr().err
    assert "line 2" in err and "temperature_nk" in err


def test_solver_failure_exits_3(run, monkeypatch):
    def fail(self, prep, heated=False, times=None):
        raise IntegrationError("step size underflow", {"t_reached": 0.1})

    monkeypatch.setattr(StereodynamicsPipeline, "step2_simulate_loss", fail)
    assert run("simulate", "--config", CONFIG, "--rates", RATES) == cli.EXIT_NUMERICAL


def test_fit_round_trip(run, tmp_path):
    thermal = tmp_path / "thermal.csv"
    heated = tmp_path / "heated.csv"
    assert run("simulate", "--config", CONFIG, "--rates", RATES, "--out", str(tmp_path / "t.csv"),
               "--dataset-out", str(thermal), "--seed", "1") == cli.EXIT_OK
    assert run("simulate", "--config", CONFIG, "--rates", RATES, "--heated", "--out", str(tmp_path / "h.csv"),
               "--dataset-out", str(heated), "--seed", "2") == cli.EXIT_OK

    out = tmp_path / "fit.json"
    assert run("fit", "--config", CONFIG, "--thermal", str(thermal), "--heated", str(heated),
               "--out", str(out)) == cli.EXIT_OK
    report = json.loads(out.read_text())
    assert report["mode"] == "dual"
    assert report["converged"]
    params, errors = report["parameters"], report["standard_errors"]
    assert abs(params["beta2_cm2_per_s"] - 1.2e-6) < 4 * errors["beta2_cm2_per_s"]
    assert abs(params["beta3_cm2_per_s"] - 2.0e-7) < 4 * errors["beta3_cm2_per_s"]
    assert len(report["covariance"]) == 4


def test_fit_single_curve(run, tmp_path):
    times = np.linspace(0, 1, 15)
    series = tmp_path / "mixture.csv"
    pd.DataFrame({"t_s": times, "n_cm2": 1e7 / (1 + 3e-7 * 1e7 * times)}).to_csv(series, index=False)
    out = tmp_path / "single.json"
    assert run("fit", "--single", str(series), "--out", str(out)) == cli.EXIT_OK
    report = json.loads(out.read_text())
    assert report["mode"] == "single"
    assert report["parameters"]["beta1_cm2_per_s"] == pytest.approx(3e-7, rel=1e-6)
    assert report["parameters"]["n_tot0_cm2"] == pytest.approx(1e7, rel=1e-6)


def test_fit_empty_csv_exits_2(run, tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    assert run("fit", "--single", str(empty)) == cli.EXIT_INPUT


def test_fit_without_inputs_exits_2(run):
    assert run("fit", "--config", CONFIG) == cli.EXIT_INPUT


def test_fit_not_converged_exits_4(run, tmp_path, monkeypatch):
    def stalled(series, options=None):
        return FitResult(
            names=["n_tot0", "beta1"], params=np.array([1e11, 3e-11]), covariance=np.eye(2),
            chi2=1.0, dof=13, iterations=200, nfev=600, gradient_norm=1.0, converged=False,
            message="maximum iterations reached", condition_number=10.0,
        )

    monkeypatch.setattr(cli, "fit_single_beta", stalled)
    series = tmp_path / "mixture.csv"
    pd.DataFrame({"t_s": [0.0, 0.5, 1.0], "n_cm2": [1e7, 8e6, 7e6]}).to_csv(series, index=False)
    out = tmp_path / "single.json"
    assert run("fit", "--single", str(series), "--out", str(out)) == cli.EXIT_NOT_CONVERGED
    assert json.loads(out.read_text())["message"] == "maximum iterations reached"


def test_scan_dipole_isotropic(run, tmp_path):
    out = tmp_path / "scan.csv"
    assert run("scan-dipole", "--config", CONFIG, "--channel", "1", "--d-min", "0.1", "--d-max", "0.2",
               "--points", "5", "--out", str(out)) == cli.EXIT_OK
    frame = pd.read_csv(out)
    assert list(frame.columns) == ["d_debye", "beta_cm3_per_s", "barrier_uK"]
    assert len(frame) == 5
    summary = json.loads(out.with_suffix(".json").read_text())
    assert abs(summary["slope"]) < 1e-8
    assert summary["window_debye"] == [0.1, 0.2]


def test_scan_dipole_repulsive_barrier(run, tmp_path):
    out = tmp_path / "scan3.csv"
    assert run("scan-dipole", "--config", CONFIG, "--channel", "3", "--points", "5", "--mode", "2d",
               "--out", str(out)) == cli.EXIT_OK
    frame = pd.read_csv(out)
    assert "beta_cm2_per_s" in frame.columns
    assert frame["barrier_uK"].is_monotonic_increasing
    assert frame["barrier_uK"].iloc[0] == pytest.approx(24.0, abs=1.0)


def test_scan_dipole_head_to_tail_slope(run, tmp_path):
    out = tmp_path / "scan2.csv"
    assert run("scan-dipole", "--config", CONFIG, "--channel", "2", "--d-min", "0.1", "--d-max", "0.2",
               "--points", "6", "--temperature-nk", "300", "--out", str(out)) == cli.EXIT_OK
    summary = json.loads(out.with_suffix(".json").read_text())
    assert summary["mode"] == "3d"
    assert summary["slope"] == pytest.approx(6.0, abs=1.5)
    assert pd.read_csv(out)["beta_cm3_per_s"].is_monotonic_increasing


@pytest.mark.parametrize("extra", [["--points", "4"], ["--d-min", "0.2", "--d-max", "0.1"]])
def test_scan_dipole_rejects_bad_grid(run, extra):
    assert run("scan-dipole", "--config", CONFIG, *extra) == cli.EXIT_INPUT


def test_occupancy(run, tmp_path):
    out = tmp_path / "occ.csv"
    assert run("occupancy", "--temperatures-nk", "400", "800", "--out", str(out)) == cli.EXIT_OK
    frame = pd.read_csv(out)
    assert list(frame.columns) == ["temperature_nk", "scaled_temperature", "f0", "f1", "f2", "purity"]
    assert frame["f0"].iloc[1] == pytest.approx(0.748, abs=1e-3)
    assert frame["scaled_temperature"].iloc[1] == pytest.approx(0.72, abs=0.01)


def test_occupancy_json(run, tmp_path):
    out = tmp_path / "occ.json"
    assert run("occupancy", "--format", "json", "--out", str(out)) == cli.EXIT_OK
    rows = json.loads(out.read_text())
    assert rows[0]["temperature_nk"] == 800.0


def test_initial_rate(run, tmp_path):
    out = tmp_path / "initial.csv"
    assert run("initial-rate", "--rates", RATES, "--points", "5", "--out", str(out)) == cli.EXIT_OK
    frame = pd.read_csv(out)
    assert "beta_initial_cm2_per_s" in frame.columns
    assert frame["beta_initial_cm2_per_s"].between(2.0e-7, 1.2e-6).all()


def test_initial_rate_json(run, tmp_path):
    out = tmp_path / "initial.json"
    assert run("initial-rate", "--rates", RATES, "--points", "5", "--format", "json", "--out", str(out)) == cli.EXIT_OK
    rows = json.loads(out.read_text())
    assert len(rows) == 5
    assert all(2.0e-7 <= row["beta_initial_cm2_per_s"] <= 1.2e-6 for row in rows)
    assert manifest_path(out).exists()


def test_cloud(run, tmp_path):
    out = tmp_path / "cloud.json"
    assert run("cloud", "--config", CONFIG, "--out", str(out)) == cli.EXIT_OK
    report = json.loads(out.read_text())
    assert report["alpha"] == pytest.approx(23.0, abs=0.05)
    assert report["peak_density_cm2"] == pytest.approx(3.4e7, rel=0.05)
    assert report["a_ho_nm"] == pytest.approx(58.8, abs=0.1)


def test_channels_json(run, capsys):
    assert run("channels", "--format", "json", "--l-max", "1", "--m-max", "1") == cli.EXIT_OK
    payload = json.loads(capsys.readouterr().out)
    assert payload["lowest"] == 3
    assert {(c["eta"], c["L"], c["gamma"], abs(c["M"])) for c in payload["channels"]} == {(1, 1, 1, 1)}


def test_channels_text_to_file(run, tmp_path):
    out = tmp_path / "channels.txt"
    assert run("channels", "--v2", "1", "--out", str(out)) == cli.EXIT_OK
    assert out.read_text().strip().endswith("lowest channel: |2>")


def test_bandmap_trace(run, tmp_path):
    fractions = (0.75, 0.19, 0.06)
    p = np.arange(-80, 81) * 0.05
    trace = model_trace(fractions, 0.075, amplitude=2.0, momentum=p)
    source = tmp_path / "trace.csv"
    pd.DataFrame({"p_hbark": trace.momentum, "od": trace.od}).to_csv(source, index=False)
    out = tmp_path / "bandmap.json"
    assert run("bandmap", "--trace", str(source), "--out", str(out)) == cli.EXIT_OK
    report = json.loads(out.read_text())
    np.testing.assert_allclose(report["fractions"], fractions, atol=1e-4)
    overlay = pd.read_csv(tmp_path / "bandmap_model.csv")
    assert list(overlay.columns) == ["p_hbark", "od", "model_od"]
    np.testing.assert_allclose(overlay["model_od"], overlay["od"], atol=1e-6)


def test_bandmap_image(run, tmp_path):
    p = (np.arange(161) - 80) * 0.05
    profile = model_trace((0.6, 0.3, 0.1), 0.075, momentum=p).od
    rows = np.arange(41)
    image = np.outer(np.exp(-((rows - 20.0) ** 2) / (2 * 6.0**2)), profile)
    source = tmp_path / "frame.csv"
    np.savetxt(source, image, delimiter=",")
    out = tmp_path / "frame.json"
    assert run("bandmap", "--image", str(source), "--rms-width", "6", "--resolution-px", "1.5",
               "--out", str(out)) == cli.EXIT_OK
    report = json.loads(out.read_text())
    np.testing.assert_allclose(report["fractions"], [0.6, 0.3, 0.1], atol=1e-4)
    assert report["resolution_hbark"] == pytest.approx(0.075)


def test_bandmap_needs_one_source(run):
    assert run("bandmap") == cli.EXIT_INPUT


def test_bandmap_rejects_zero_calibration(run, tmp_path):
    p = np.linspace(-4.0, 4.0, 161)
    source = tmp_path / "trace.csv"
    pd.DataFrame({"p_hbark": p, "od": model_trace((0.75, 0.19, 0.06), 0.1, momentum=p).od}).to_csv(source, index=False)
    assert run("bandmap", "--trace", str(source), "--resolution-px", "2", "--calibration", "0") == cli.EXIT_INPUT

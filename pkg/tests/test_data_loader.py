import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from stereokin.core import AMU, debye_to_si
from stereokin.data_loader import (
    SERIES_ALIASES,
    fractions_argument,
    load_experiment_config,
    load_json_model,
    load_rates,
    load_time_series,
    load_trace,
    normalize_columns,
)
from stereokin.errors import ConfigError, InsufficientDataError
from stereokin.schemas import RatesFile

DATA = Path(__file__).resolve().parents[1] / "data"


def test_example_config():
    file_model, config = load_experiment_config(DATA / "example_config.json")
    assert file_model.temperature_nk == 800.0
    assert config.temperature == pytest.approx(800e-9)
    assert config.molecule.mass == pytest.approx(127 * AMU)
    assert config.induced_dipole == pytest.approx(debye_to_si(0.174))
    assert config.efield_metadata == pytest.approx(4e5)
    assert config.simulation.hold_time == 1.0
    assert config.simulation.r_abs == pytest.approx(1e-9)


def test_example_rates():
    rates = load_rates(DATA / "example_rates.json")
    assert rates.beta2 == pytest.approx(1.2e-10)
    assert rates.beta3 == pytest.approx(2.0e-11)
    assert rates.beta1 == 0.0


def test_missing_file_names_path(tmp_path):
    path = tmp_path / "absent.json"
    with pytest.raises(ConfigError) as excinfo:
        load_experiment_config(path)
    assert str(path) in str(excinfo.value)


def test_invalid_json_reports_line(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "temperature_nk": 800,\n  oops\n}\n')
    with pytest.raises(ConfigError) as excinfo:
        load_experiment_config(path)
    assert excinfo.value.line == 3


def test_invalid_field_reports_field_and_line(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"molecule": {"mass_amu": 127.0}, "temperature_nk": -5.0}, indent=2))
    with pytest.raises(ConfigError) as excinfo:
        load_experiment_config(path)
    err = excinfo.value
    assert err.field == "temperature_nk"
    assert err.line == 5
    assert "field 'temperature_nk'" in str(err)


def test_zero_temperature_is_rejected(tmp_path):
    path = tmp_path / "cold.json"
    path.write_text(json.dumps({"temperature_nk": 0.0}))
    with pytest.raises(ConfigError) as excinfo:
        load_experiment_config(path)
    assert excinfo.value.field == "temperature_nk"


def test_unknown_key_is_rejected(tmp_path):
    path = tmp_path / "rates.json"
    path.write_text(json.dumps({"beta2_cm2_per_s": 1e-6, "beta3_cm2_per_s": 2e-7, "beta4": 1.0}))
    with pytest.raises(ConfigError) as excinfo:
        load_json_model(path, RatesFile)
    assert excinfo.value.field == "beta4"


def test_normalize_columns():
    frame = pd.DataFrame({" Time ": [0.0], "Density": [1.0], "err": [0.1], "extra": [2]})
    out = normalize_columns(frame, SERIES_ALIASES)
    assert list(out.columns) == ["t_s", "n_cm2", "sigma_cm2", "extra"]


def test_load_time_series_converts_units(tmp_path):
    path = tmp_path / "thermal.csv"
    pd.DataFrame({"time": [0.5, 0.0, 1.0], "n": [1.0e7, 1.2e7, 0.9e7], "sigma": [1e5, 1e5, 1e5]}).to_csv(path, index=False)
    ts = load_time_series(path)
    np.testing.assert_allclose(ts.times, [0.0, 0.5, 1.0])
    np.testing.assert_allclose(ts.values, [1.2e11, 1.0e11, 0.9e11])
    np.testing.assert_allclose(ts.sigma, 1e9)
    assert ts.label == "thermal"


def test_load_time_series_errors(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(InsufficientDataError):
        load_time_series(empty)
    header_only = tmp_path / "header.csv"
    header_only.write_text("t_s,n_cm2\n")
    with pytest.raises(InsufficientDataError):
        load_time_series(header_only)
    no_density = tmp_path / "nodensity.csv"
    no_density.write_text("t_s,od\n0,1\n")
    with pytest.raises(ConfigError) as excinfo:
        load_time_series(no_density)
    assert excinfo.value.field == "n_cm2"
    duplicate = tmp_path / "duplicate.csv"
    duplicate.write_text("t_s,n_cm2\n0,1\n0,2\n")
    with pytest.raises(ConfigError):
        load_time_series(duplicate)


def test_load_trace(tmp_path):
    path = tmp_path / "trace.csv"
    path.write_text("momentum,optical_depth\n1.0,0.2\n-1.0,0.3\n0.0,0.5\n")
    trace = load_trace(path)
    np.testing.assert_array_equal(trace.momentum, [-1.0, 0.0, 1.0])
    np.testing.assert_array_equal(trace.od, [0.3, 0.5, 0.2])


def test_fractions_argument():
    np.testing.assert_allclose(fractions_argument("0.75, 0.19,0.06"), [0.75, 0.19, 0.06])
    with pytest.raises(ConfigError):
        fractions_argument("0.7,x")

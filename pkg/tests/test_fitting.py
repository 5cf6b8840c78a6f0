import numpy as np
import pytest

from stereokin.errors import DomainError, InsufficientDataError, RankDeficiencyError
from stereokin.fitting import (
    CoverageReport,
    FitProblem,
    FitResult,
    LMOptions,
    TimeSeries,
    fit_dual_curves,
    fit_mixture_loss,
    fit_single_beta,
    levenberg_marquardt,
    model_total_density,
    monte_carlo_coverage,
    monte_carlo_single_coverage,
    synthesize_dataset,
)
from stereokin.gasmodel import VibrationalDistribution
from stereokin.kinetics import LevelDensities, RateConstants, analytic_two_body, integrate_loss

FIT_TIMES = np.linspace(0.0, 1.5, 20)
SINGLE_TIMES = np.linspace(0.0, 1.5, 15)
GROUND = VibrationalDistribution(np.array([1.0, 0.0, 0.0]))


# --- Optimizer ---

def test_linear_problem():
    t = np.linspace(0, 1, 11)
    result = levenberg_marquardt(lambda x: x[0] * t - 2.5 * t, [0.3])
    assert result.params[0] == pytest.approx(2.5, rel=1e-9)
    assert result.converged
    assert result.dof == 10


def test_quadratic_bowl():
    result = levenberg_marquardt(lambda x: np.array([x[0] - 1.0, 10.0 * (x[1] - 2.0)]), [5.0, -3.0],
                                 names=["a", "b"])
    assert result.estimates == pytest.approx({"a": 1.0, "b": 2.0}, abs=1e-8)


def test_rosenbrock():
    def residuals(x):
        return np.array([10.0 * (x[1] - x[0] ** 2), 1.0 - x[0]])

    result = levenberg_marquardt(residuals, [-1.2, 1.0])
    np.testing.assert_allclose(result.params, [1.0, 1.0], atol=1e-6)
    assert result.converged
    history = np.array(result.cost_history)
    assert np.all(np.diff(history) <= 0)
    assert history[-1] < 1e-12


def test_too_few_residuals():
    with pytest.raises(InsufficientDataError):
        levenberg_marquardt(lambda x: np.array([x[0] + x[1]]), [0.0, 0.0])


def test_rank_deficient_problem():
    def residuals(x):
        s = x[0] + x[1]
        return np.array([s - 1.0, 2.0 * s - 2.0, 3.0 * s - 3.0])

    with pytest.raises(RankDeficiencyError):
        levenberg_marquardt(residuals, [0.0, 0.0])
    flagged = levenberg_marquardt(residuals, [0.0, 0.0], LMOptions(on_singular="flag"))
    assert not flagged.identifiable
    assert np.all(np.isinf(flagged.covariance))
    assert flagged.params.sum() == pytest.approx(1.0, abs=1e-6)


def test_bounds_are_respected():
    result = levenberg_marquardt(lambda x: np.array([x[0] - 3.0, x[0] - 3.0]), [0.0],
                                 LMOptions(upper=np.array([2.0])))
    assert result.params[0] == pytest.approx(2.0)


def test_lm_options_validation():
    with pytest.raises(DomainError):
        LMOptions(on_singular="ignore")


def test_fit_result_helpers():
    result = FitResult(
        names=["log_beta"], params=np.array([np.log(2.0)]), covariance=np.array([[0.01]]),
        chi2=4.0, dof=2, iterations=3, nfev=9, gradient_norm=0.0, converged=True,
        message="ok", condition_number=1.0,
    )
    assert result.reduced_chi2 == 2.0
    linear = result.to_linear([0])
    assert linear.params[0] == pytest.approx(2.0)
    assert linear.standard_errors[0] == pytest.approx(0.2)
    assert linear.covers("log_beta", 2.3)
    assert not linear.covers("log_beta", 2.5)


# --- Data types ---

def test_time_series_validation():
    with pytest.raises(DomainError):
        TimeSeries(np.array([0.0, 1.0, 1.0]), np.ones(3))
    with pytest.raises(DomainError):
        TimeSeries(np.array([0.0, 1.0]), np.ones(3))
    with pytest.raises(DomainError):
        TimeSeries(np.array([0.0, 1.0]), np.ones(2), sigma=np.array([1.0, 0.0]))
    ts = TimeSeries(np.array([0.0, 1.0]), np.array([2e11, 1e11]), np.array([1e10, 5e9]))
    assert ts.to_frame()["n_cm2"].tolist() == pytest.approx([2e7, 1e7])
    assert ts.scaled(2).sigma.tolist() == [2e10, 1e10]


def test_time_series_uncertainties():
    t = np.array([0.0, 1.0, 2.0])
    np.testing.assert_array_equal(TimeSeries(t, [3.0, 2.0, 1.0]).uncertainties, 1.0)
    np.testing.assert_array_equal(TimeSeries(t, [3.0, 2.0, 1.0], [0.1, 0.2, 0.3]).uncertainties, [0.1, 0.2, 0.3])


def test_problem_validation():
    ts = TimeSeries(np.linspace(0, 1, 5), np.linspace(2, 1, 5))
    with pytest.raises(DomainError):
        FitProblem([ts], model="triple")
    with pytest.raises(DomainError):
        FitProblem([ts], model="dual", distributions=[])
    short = TimeSeries(np.array([0.0, 1.0]), np.array([2.0, 1.0]))
    with pytest.raises(InsufficientDataError):
        fit_single_beta(short)


# --- Model curves ---

def test_model_total_density_matches_integrator(rates, heated_dist, n_tot0):
    model = model_total_density(rates, heated_dist, n_tot0, FIT_TIMES)
    traj = integrate_loss(LevelDensities.from_distribution(n_tot0, heated_dist), rates, FIT_TIMES,
                          rel_tol=1e-10, abs_tol=1e-2)
    np.testing.assert_allclose(model, traj.total, rtol=1e-8)
    assert model[0] == n_tot0


# --- Dual-curve fit ---

def test_dual_fit_noise_free(rates, thermal_dist, heated_dist, n_tot0):
    thermal = synthesize_dataset(rates, thermal_dist, n_tot0, FIT_TIMES, label="thermal")
    heated = synthesize_dataset(rates, heated_dist, n_tot0, FIT_TIMES, label="heated")
    init = RateConstants(beta2=1.5 * rates.beta2, beta3=0.7 * rates.beta3)
    result = fit_dual_curves(thermal, heated, thermal_dist, heated_dist, init)
    est = result.estimates
    assert est["beta2"] == pytest.approx(rates.beta2, rel=1e-5)
    assert est["beta3"] == pytest.approx(rates.beta3, rel=1e-5)
    assert est["n_tot0_thermal"] == pytest.approx(n_tot0, rel=1e-6)
    assert result.names == ["beta2", "beta3", "n_tot0_thermal", "n_tot0_heated"]
    assert result.identifiable


def test_dual_fit_with_noise(rates, thermal_dist, heated_dist, n_tot0):
    thermal = synthesize_dataset(rates, thermal_dist, n_tot0, FIT_TIMES, 0.05, seed=21, label="thermal")
    heated = synthesize_dataset(rates, heated_dist, n_tot0, FIT_TIMES, 0.05, seed=22, label="heated")
    result = fit_dual_curves(thermal, heated, thermal_dist, heated_dist, RateConstants(beta2=1e-10, beta3=1e-11))
    assert result.converged
    assert result.dof == 36
    assert np.all(np.linalg.eigvalsh(result.covariance) > 0)
    errors = result.errors()
    assert errors["beta2"] > 0 and errors["beta3"] > 0
    assert abs(result.estimates["beta3"] - rates.beta3) < 5 * errors["beta3"]
    assert result.reduced_chi2 == pytest.approx(1.0, abs=0.8)


def test_dual_fit_density_scaling(rates, thermal_dist, heated_dist, n_tot0):
    thermal = synthesize_dataset(rates, thermal_dist, n_tot0, FIT_TIMES, 0.05, seed=31, label="thermal")
    heated = synthesize_dataset(rates, heated_dist, n_tot0, FIT_TIMES, 0.05, seed=32, label="heated")
    init = RateConstants(beta2=1.5 * rates.beta2, beta3=0.7 * rates.beta3)
    c = 4.0
    base = fit_dual_curves(thermal, heated, thermal_dist, heated_dist, init).estimates
    scaled = fit_dual_curves(
        thermal.scaled(c), heated.scaled(c), thermal_dist, heated_dist,
        RateConstants(beta2=init.beta2 / c, beta3=init.beta3 / c),
    ).estimates
    assert scaled["beta2"] == pytest.approx(base["beta2"] / c, rel=1e-8)
    assert scaled["beta3"] == pytest.approx(base["beta3"] / c, rel=1e-8)
    assert scaled["n_tot0_heated"] == pytest.approx(c * base["n_tot0_heated"], rel=1e-8)


def test_identical_populations_are_unidentifiable(rates, n_tot0):
    thermal = synthesize_dataset(rates, GROUND, n_tot0, FIT_TIMES, label="thermal")
    heated = synthesize_dataset(rates, GROUND, n_tot0, FIT_TIMES, label="heated")
    result = fit_dual_curves(thermal, heated, GROUND, GROUND, RateConstants(beta2=1e-10, beta3=1e-11))
    assert result.condition_number > 1e6
    assert not result.identifiable
    assert result.estimates["beta3"] == pytest.approx(rates.beta3, rel=1e-4)


def test_dual_fit_needs_three_points(rates, thermal_dist, heated_dist, n_tot0):
    short = synthesize_dataset(rates, thermal_dist, n_tot0, FIT_TIMES[:2])
    full = synthesize_dataset(rates, heated_dist, n_tot0, FIT_TIMES)
    with pytest.raises(InsufficientDataError):
        fit_dual_curves(short, full, thermal_dist, heated_dist, rates)


# --- Single-beta fit ---

def test_single_beta_exact():
    n0, beta = 1.0e11, 2.0e-11
    ts = TimeSeries(FIT_TIMES, analytic_two_body(n0, beta, FIT_TIMES))
    result = fit_single_beta(ts)
    assert result.estimates["n_tot0"] == pytest.approx(n0, rel=1e-8)
    assert result.estimates["beta1"] == pytest.approx(beta, rel=1e-8)
    assert fit_mixture_loss(ts).estimates["beta1"] == pytest.approx(beta, rel=1e-8)


def test_single_beta_constant_data():
    ts = TimeSeries(FIT_TIMES, np.full(FIT_TIMES.size, 1.0e11))
    est = fit_single_beta(ts).estimates
    assert est["beta1"] * est["n_tot0"] * FIT_TIMES[-1] < 1e-6
    assert est["n_tot0"] == pytest.approx(1.0e11, rel=1e-6)


def test_single_beta_unit_scaling(rates, n_tot0):
    ts = synthesize_dataset(RateConstants(beta3=rates.beta3), GROUND, n_tot0, FIT_TIMES, 0.03, seed=5)
    base = fit_single_beta(ts).estimates
    scaled = fit_single_beta(ts.scaled(4.0)).estimates
    assert scaled["n_tot0"] == pytest.approx(4.0 * base["n_tot0"], rel=1e-8)
    assert scaled["beta1"] == pytest.approx(base["beta1"] / 4.0, rel=1e-8)


# --- Synthetic data ---

def test_synthesize_is_deterministic(rates, thermal_dist, n_tot0):
    a = synthesize_dataset(rates, thermal_dist, n_tot0, FIT_TIMES, 0.05, seed=7)
    b = synthesize_dataset(rates, thermal_dist, n_tot0, FIT_TIMES, 0.05, seed=7)
    c = synthesize_dataset(rates, thermal_dist, n_tot0, FIT_TIMES, 0.05, seed=8)
    np.testing.assert_array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)


def test_synthesize_noise_free(rates, thermal_dist, n_tot0):
    ts = synthesize_dataset(rates, thermal_dist, n_tot0, FIT_TIMES)
    assert ts.sigma is None
    np.testing.assert_array_equal(ts.values, model_total_density(rates, thermal_dist, n_tot0, FIT_TIMES))


def test_synthesize_noise_statistics(rates, n_tot0):
    times = np.linspace(0.0, 1.0, 2000)
    ts = synthesize_dataset(rates, GROUND, n_tot0, times, 0.05, seed=99)
    model = analytic_two_body(n_tot0, rates.beta3, times)
    deviations = ts.values / model - 1.0
    assert abs(deviations.mean()) < 5e-3
    assert deviations.std() == pytest.approx(0.05, rel=0.1)
    np.testing.assert_allclose(ts.sigma, 0.05 * model, rtol=1e-6)


def test_synthesize_rejects_bad_input(rates, thermal_dist, n_tot0):
    with pytest.raises(DomainError):
        synthesize_dataset(rates, thermal_dist, n_tot0, FIT_TIMES, -0.1)
    with pytest.raises(DomainError):
        synthesize_dataset(rates, thermal_dist, 0.0, FIT_TIMES)


# --- Coverage ---

def test_coverage_counts_failed_fits_as_misses():
    report = CoverageReport(trials=10, failures=2, covered={"beta2": 8, "beta3": 7}, k=2.0)
    assert report.coverage == {"beta2": 0.8, "beta3": 0.7}
    assert report.coverage_of_converged == {"beta2": 1.0, "beta3": 0.875}
    assert CoverageReport(trials=3, failures=3, covered={"beta1": 0}, k=2.0).coverage_of_converged == {"beta1": 0.0}


def test_coverage_quick(rates, thermal_dist, heated_dist, n_tot0):
    report = monte_carlo_coverage(20, 2019, rates, thermal_dist, heated_dist, n_tot0, FIT_TIMES, workers=2)
    assert report.trials == 20
    assert report.failures == 0
    assert report.coverage["beta2"] >= 0.7
    assert report.coverage["beta3"] >= 0.7


def test_single_beta_coverage_quick():
    report = monte_carlo_single_coverage(20, 7, 2.0e-11, 1.0e11, SINGLE_TIMES, workers=2)
    assert report.trials == 20
    assert report.coverage["beta1"] >= 0.7


def test_coverage_trial_seeds_are_reproducible():
    a = monte_carlo_single_coverage(5, 11, 2.0e-11, 1.0e11, SINGLE_TIMES)
    b = monte_carlo_single_coverage(5, 11, 2.0e-11, 1.0e11, SINGLE_TIMES, workers=3)
    assert a.covered == b.covered
    with pytest.raises(DomainError):
        monte_carlo_single_coverage(0, 11, 2.0e-11, 1.0e11, SINGLE_TIMES)


@pytest.mark.slow
def test_coverage_two_hundred_trials(rates, thermal_dist, heated_dist, n_tot0):
    report = monte_carlo_coverage(200, 2019, rates, thermal_dist, heated_dist, n_tot0, FIT_TIMES)
    assert report.failures == 0
    assert report.coverage["beta2"] >= 0.9
    assert report.coverage["beta3"] >= 0.9


@pytest.mark.slow
def test_single_beta_coverage_two_hundred_trials():
    report = monte_carlo_single_coverage(200, 2019, 2.0e-11, 1.0e11, SINGLE_TIMES, noise_fraction=0.05)
    assert report.failures == 0
    assert report.coverage["beta1"] >= 0.9

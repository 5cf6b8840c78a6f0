"""
Stereokin Fitting Module

Nonlinear least-squares extraction of loss rate constants from measured (or
synthetic) density decay curves.

Steps:
    1. Wrap each measured curve in a TimeSeries (t, n, sigma).
    2. Build a FitProblem: the simultaneous two-curve fit of the three-level
       loss model (shared beta_2, beta_3; one free n_tot(0) per curve), or the
       single-beta fit n0 / (1 + beta n0 t) of a rotational mixture.
    3. Minimise the weighted residuals with levenberg_marquardt().
    4. Report estimates, covariance, chi^2 and convergence in a FitResult.

All rate and density parameters are fitted through their logarithms, so
positivity holds without active bounds and the fit is equivariant under
rescaling of the density units. Results are reported in linear space.

Key Functions:
    - levenberg_marquardt(): damped Gauss-Newton with gain-ratio updates
    - fit_dual_curves(): beta_2 and beta_3 from a thermal and a heated curve
    - fit_single_beta() / fit_mixture_loss(): beta_1 from one curve
    - synthesize_dataset(): seeded model curve with multiplicative noise
    - monte_carlo_coverage(): repeated synthesize -> fit coverage study
    - monte_carlo_single_coverage(): the same study for the single-beta fit
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .core import parallel_map
from .errors import DomainError, InsufficientDataError, IntegrationError, RankDeficiencyError
from .gasmodel import VibrationalDistribution
from .kinetics import LevelDensities, RateConstants, RateMatrix, analytic_two_body, integrate_loss

logger = logging.getLogger(__name__)

FIT_REL_TOL = 1e-10
FIT_METHOD = "DOP853"
SINGULAR_CONDITION = 1e12
MIN_POINTS = 3


# --- Data types ---

@dataclass(frozen=True)
class TimeSeries:
    """Sampled 2D density n(t) in m^-2; ``sigma`` None means unit uncertainties (uniform weights)."""

    times: np.ndarray
    values: np.ndarray
    sigma: Optional[np.ndarray] = None
    label: str = ""

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        n = np.asarray(self.values, dtype=float)
        if t.shape != n.shape or t.ndim != 1:
            raise DomainError("times and values must be 1D arrays of equal length")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise DomainError(f"{self.label or 'series'}: times must be strictly increasing")
        if np.any(t < 0):
            raise DomainError("times must be non-negative")
        if np.any(n < 0):
            raise DomainError("densities must be non-negative")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", n)
        if self.sigma is not None:
            s = np.asarray(self.sigma, dtype=float)
            if s.shape != n.shape:
                raise DomainError("sigma must match values")
            if np.any(s <= 0):
                raise DomainError("sigma must be strictly positive")
            object.__setattr__(self, "sigma", s)

    def __len__(self):
        return self.times.size

    @property
    def uncertainties(self) -> np.ndarray:
        return np.ones_like(self.values) if self.sigma is None else self.sigma

    def scaled(self, factor: float) -> "TimeSeries":
        sigma = None if self.sigma is None else self.sigma * factor
        return TimeSeries(self.times, self.values * factor, sigma, self.label)

    def to_frame(self) -> pd.DataFrame:
        """Fit-ready table in cm^-2."""
        frame = pd.DataFrame({"t_s": self.times, "n_cm2": self.values * 1e-4})
        if self.sigma is not None:
            frame["sigma_cm2"] = self.sigma * 1e-4
        return frame


@dataclass(frozen=True)
class LMOptions:
    max_iter: int = 200
    gtol: float = 1e-10
    xtol: float = 1e-10
    ftol: float = 1e-14
    tau: float = 1e-3
    diff_step: float = 1e-6
    absolute_step: bool = False
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    on_singular: str = "raise"

    def __post_init__(self):
        if self.on_singular not in ("raise", "flag"):
            raise DomainError(f"on_singular must be 'raise' or 'flag', got {self.on_singular!r}")


@dataclass
class FitResult:
    names: List[str]
    params: np.ndarray
    covariance: np.ndarray
    chi2: float
    dof: int
    iterations: int
    nfev: int
    gradient_norm: float
    converged: bool
    message: str
    condition_number: float
    cost_history: List[float] = field(default_factory=list)

    @property
    def reduced_chi2(self) -> float:
        return self.chi2 / self.dof if self.dof > 0 else float("nan")

    @property
    def identifiable(self) -> bool:
        return bool(np.isfinite(self.condition_number) and self.condition_number < SINGULAR_CONDITION)

    @property
    def standard_errors(self) -> np.ndarray:
        return np.sqrt(np.abs(np.diag(self.covariance)))

    @property
    def estimates(self) -> Dict[str, float]:
        return dict(zip(self.names, map(float, self.params)))

    def errors(self) -> Dict[str, float]:
        return dict(zip(self.names, map(float, self.standard_errors)))

    def covers(self, name: str, truth: float, k: float = 2.0) -> bool:
        i = self.names.index(name)
        return bool(abs(self.params[i] - truth) <= k * self.standard_errors[i])

    def to_linear(self, log_indices: Sequence[int]) -> "FitResult":
        """Map log-parameters back to linear space, covariance by the delta method."""
        params = self.params.copy()
        jac = np.ones_like(params)
        for i in log_indices:
            params[i] = math.exp(self.params[i])
            jac[i] = params[i]
        cov = self.covariance * np.outer(jac, jac)
        return FitResult(
            self.names, params, cov, self.chi2, self.dof, self.iterations, self.nfev,
            self.gradient_norm, self.converged, self.message, self.condition_number,
            list(self.cost_history),
        )


# --- Optimizer ---

def _jacobian(fun, x, r, options: LMOptions) -> np.ndarray:
    J = np.empty((r.size, x.size))
    for j in range(x.size):
        h = options.diff_step if options.absolute_step else options.diff_step * max(abs(x[j]), 1.0)
        if options.upper is not None and x[j] + h > options.upper[j]:
            h = -h
        xh = x.copy()
        xh[j] += h
        J[:, j] = (fun(xh) - r) / h
    return J


def _clip(x, options: LMOptions):
    if options.lower is not None:
        x = np.maximum(x, options.lower)
    if options.upper is not None:
        x = np.minimum(x, options.upper)
    return x


def _gradient_cosine(J, r, g) -> float:
    rnorm = np.linalg.norm(r)
    if rnorm == 0:
        return 0.0
    cols = np.linalg.norm(J, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        cos = np.where(cols > 0, np.abs(g) / (cols * rnorm), 0.0)
    return float(cos.max(initial=0.0))


def levenberg_marquardt(
    residual_fn: Callable[[np.ndarray], np.ndarray],
    initial_params: Sequence[float],
    options: Optional[LMOptions] = None,
    names: Optional[Sequence[str]] = None,
) -> FitResult:
    """Minimise 0.5 * |r(x)|^2 for already weighted residuals ``r``.

    Damping follows the gain ratio rho of actual to predicted reduction:
    accepted steps scale mu by max(1/3, 1 - (2 rho - 1)^3), rejected steps
    multiply it by a doubling factor. The damping matrix is the running
    maximum of diag(J^T J), which makes steps invariant to parameter scaling.
    """
    options = options or LMOptions()
    x = _clip(np.asarray(initial_params, dtype=float).copy(), options)
    n = x.size
    names = list(names) if names is not None else [f"p{i}" for i in range(n)]
    nfev = 0

    def fun(p):
        nonlocal nfev
        nfev += 1
        return np.asarray(residual_fn(p), dtype=float)

    r = fun(x)
    if not np.all(np.isfinite(r)):
        raise DomainError("residuals are not finite at the initial point")
    if r.size < n:
        raise InsufficientDataError(f"{r.size} residuals cannot constrain {n} parameters")

    cost = 0.5 * float(r @ r)
    J = _jacobian(fun, x, r, options)
    A = J.T @ J
    g = J.T @ r
    d_scale = np.diag(A).copy()
    mu = options.tau * max(float(d_scale.max(initial=0.0)), 1e-300)
    nu = 2.0
    history = [cost]
    converged = False
    message = "maximum iterations reached"
    iteration = 0

    for iteration in range(1, options.max_iter + 1):
        if _gradient_cosine(J, r, g) <= options.gtol:
            converged, message = True, "gradient tolerance reached"
            break

        floor = np.finfo(float).eps * max(float(d_scale.max(initial=0.0)), 1.0)
        D = np.diag(np.maximum(d_scale, floor))
        try:
            step = np.linalg.solve(A + mu * D, -g)
        except np.linalg.LinAlgError:
            mu *= nu
            nu *= 2.0
            continue

        x_new = _clip(x + step, options)
        step = x_new - x
        if np.linalg.norm(step) <= options.xtol * (np.linalg.norm(x) + options.xtol):
            converged, message = True, "step tolerance reached"
            break

        try:
            r_new = fun(x_new)
        except IntegrationError as exc:
            logger.debug("trial point rejected: %s", exc)
            r_new = None
        predicted = -float(g @ step) - 0.5 * float(step @ A @ step)
        if r_new is None or not np.all(np.isfinite(r_new)) or predicted <= 0:
            rho = -1.0
        else:
            cost_new = 0.5 * float(r_new @ r_new)
            rho = (cost - cost_new) / predicted

        if rho > 0:
            reduction = cost - cost_new
            x, r, cost = x_new, r_new, cost_new
            history.append(cost)
            J = _jacobian(fun, x, r, options)
            A = J.T @ J
            g = J.T @ r
            d_scale = np.maximum(d_scale, np.diag(A))
            mu *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
            nu = 2.0
            logger.debug("LM iter %d: cost=%.6g mu=%.3g", iteration, cost, mu)
            if reduction <= options.ftol * cost:
                converged, message = True, "cost tolerance reached"
                break
        else:
            mu *= nu
            nu *= 2.0

    try:
        condition = float(np.linalg.cond(A))
    except np.linalg.LinAlgError:
        condition = float("inf")
    m = r.size
    dof = m - n
    chi2 = 2.0 * cost
    if not np.isfinite(condition) or condition >= SINGULAR_CONDITION:
        if options.on_singular == "raise":
            raise RankDeficiencyError(f"normal matrix is singular (condition {condition:.3g})", condition)
        logger.warning("normal matrix is singular (condition %.3g); covariance undefined", condition)
        covariance = np.full((n, n), np.inf)
    else:
        scale = chi2 / dof if dof > 0 else 1.0
        covariance = np.linalg.inv(A) * scale
        covariance = 0.5 * (covariance + covariance.T)

    if not converged:
        logger.warning("Levenberg-Marquardt did not converge after %d iterations", iteration)
    return FitResult(
        names=names, params=x, covariance=covariance, chi2=chi2, dof=dof,
        iterations=iteration, nfev=nfev, gradient_norm=float(np.linalg.norm(g)),
        converged=converged, message=message, condition_number=condition,
        cost_history=history,
    )


# --- Loss-curve problems ---

def _check_series(ts: TimeSeries, name: str):
    if len(ts) < MIN_POINTS:
        raise InsufficientDataError(f"{name} has {len(ts)} points, need at least {MIN_POINTS}")


def model_total_density(rates: RateConstants, dist: VibrationalDistribution, n_tot0: float,
                        times: np.ndarray, rel_tol: float = FIT_REL_TOL) -> np.ndarray:
    """n_tot(t) of the three-level model started from n_tot0 * f(v) at t = 0."""
    start = LevelDensities.from_distribution(n_tot0, dist)
    matrix = RateMatrix.from_constants(rates, dist.v_cut)
    times = np.asarray(times, dtype=float)
    sample = times if times[0] > 0 else times[1:]
    abs_tol = rel_tol * max(n_tot0, 1e-300) * 1e-2
    if sample.size == 0:
        return np.array([n_tot0])
    traj = integrate_loss(start, matrix, sample, rel_tol=rel_tol, abs_tol=abs_tol, method=FIT_METHOD)
    total = traj.total
    return total if times[0] > 0 else np.concatenate(([n_tot0], total))


@dataclass
class FitProblem:
    """Datasets, model selector and fixed inputs of one rate-constant fit.

    ``model`` is "dual" (shared beta_2, beta_3 and one n_tot(0) per dataset,
    level populations fixed to ``distributions``) or "single" (one curve,
    free n0 and beta_1).
    """

    datasets: List[TimeSeries]
    model: str = "dual"
    distributions: List[VibrationalDistribution] = field(default_factory=list)
    init: RateConstants = field(default_factory=RateConstants)
    workers: Optional[int] = 1

    def __post_init__(self):
        if not self.datasets:
            raise InsufficientDataError("no datasets to fit")
        for i, ts in enumerate(self.datasets):
            _check_series(ts, ts.label or f"dataset {i}")
        if self.model == "dual":
            if len(self.distributions) != len(self.datasets):
                raise DomainError("one initial distribution per dataset is required")
        elif self.model == "single":
            if len(self.datasets) != 1:
                raise DomainError("the single-beta model fits exactly one dataset")
        else:
            raise DomainError(f"unknown model {self.model!r}")
        if sum(len(ts) for ts in self.datasets) <= self.n_params:
            raise InsufficientDataError("fewer points than free parameters")

    @property
    def n_params(self) -> int:
        return 2 + len(self.datasets) if self.model == "dual" else 2

    @property
    def names(self) -> List[str]:
        if self.model == "single":
            return ["n_tot0", "beta1"]
        labels = [ts.label or str(i) for i, ts in enumerate(self.datasets)]
        return ["beta2", "beta3"] + [f"n_tot0_{label}" for label in labels]

    def initial_parameters(self) -> np.ndarray:
        if self.model == "single":
            ts = self.datasets[0]
            n0, beta = _single_beta_guess(ts)
            return np.log([n0, beta])
        if self.init.beta2 <= 0 or self.init.beta3 <= 0:
            raise DomainError("initial beta2 and beta3 must be positive")
        n0s = [max(ts.values[0], 1e-300) for ts in self.datasets]
        return np.log([self.init.beta2, self.init.beta3, *n0s])

    def residuals(self, x: np.ndarray) -> np.ndarray:
        p = np.exp(x)
        if self.model == "single":
            ts = self.datasets[0]
            n0, beta = p
            return (n0 / (1.0 + beta * n0 * ts.times) - ts.values) / ts.uncertainties

        rates = RateConstants(beta2=p[0], beta3=p[1])

        def one(i):
            ts = self.datasets[i]
            model = model_total_density(rates, self.distributions[i], p[2 + i], ts.times)
            return (model - ts.values) / ts.uncertainties

        return np.concatenate(parallel_map(one, range(len(self.datasets)), self.workers))

    def bounds(self) -> Tuple[Optional[np.ndarray], Optional[np.ndarray]]:
        if self.model != "single":
            return None, None
        ts = self.datasets[0]
        n_scale = max(float(ts.values.max()), 1e-300)
        t_span = max(float(ts.times[-1] - ts.times[0]), 1e-300)
        lower = np.array([-np.inf, math.log(1e-9 / (n_scale * t_span))])
        return lower, None


def _single_beta_guess(ts: TimeSeries) -> Tuple[float, float]:
    """n0 and beta from a straight-line fit of 1/n against t."""
    positive = ts.values > 0
    t, inv = ts.times[positive], 1.0 / ts.values[positive]
    if t.size < 2:
        raise InsufficientDataError("need at least two positive densities")
    slope, intercept = np.polyfit(t, inv, 1)
    n0 = 1.0 / intercept if intercept > 0 else float(ts.values.max())
    scale = 1.0 / (max(float(ts.values.max()), 1e-300) * max(float(t[-1] - t[0]), 1e-300))
    return n0, max(slope, 1e-3 * scale)


def solve(problem: FitProblem, options: Optional[LMOptions] = None) -> FitResult:
    """Run the optimizer on ``problem`` and report parameters in linear space."""
    lower, upper = problem.bounds()
    base = options or LMOptions(on_singular="flag")
    options = LMOptions(
        max_iter=base.max_iter, gtol=base.gtol, xtol=base.xtol, ftol=base.ftol, tau=base.tau,
        diff_step=base.diff_step, absolute_step=True,
        lower=lower if base.lower is None else base.lower,
        upper=upper if base.upper is None else base.upper,
        on_singular=base.on_singular,
    )
    raw = levenberg_marquardt(problem.residuals, problem.initial_parameters(), options, problem.names)
    result = raw.to_linear(range(problem.n_params))
    logger.info(
        "%s fit: converged=%s chi2_red=%.3g iterations=%d",
        problem.model, result.converged, result.reduced_chi2, result.iterations,
    )
    return result


def fit_dual_curves(
    ts_thermal: TimeSeries,
    ts_heated: TimeSeries,
    dist_thermal: VibrationalDistribution,
    dist_heated: VibrationalDistribution,
    init: RateConstants,
    options: Optional[LMOptions] = None,
    workers: Optional[int] = 1,
) -> FitResult:
    """Simultaneous fit of (beta_2, beta_3) to a thermal and a heated loss curve."""
    _check_series(ts_thermal, "thermal dataset")
    _check_series(ts_heated, "heated dataset")
    thermal = ts_thermal if ts_thermal.label else TimeSeries(ts_thermal.times, ts_thermal.values, ts_thermal.sigma, "thermal")
    heated = ts_heated if ts_heated.label else TimeSeries(ts_heated.times, ts_heated.values, ts_heated.sigma, "heated")
    problem = FitProblem([thermal, heated], "dual", [dist_thermal, dist_heated], init, workers)
    return solve(problem, options)


def fit_single_beta(ts: TimeSeries, options: Optional[LMOptions] = None) -> FitResult:
    """Fit n(t) = n0 / (1 + beta_1 n0 t) with free n0 and beta_1."""
    _check_series(ts, ts.label or "dataset")
    return solve(FitProblem([ts], "single"), options)


def fit_mixture_loss(ts: TimeSeries, options: Optional[LMOptions] = None) -> FitResult:
    """beta_1 of a mixture of internal states, where channel |1> carries the loss."""
    return fit_single_beta(ts, options)


# --- Synthetic data ---

def synthesize_dataset(
    rates: RateConstants,
    dist: VibrationalDistribution,
    n_tot0: float,
    times: Sequence[float],
    noise_fraction: float = 0.0,
    seed: Optional[int] = None,
    label: str = "",
) -> TimeSeries:
    """Model n_tot(t) with multiplicative Gaussian noise, sigma = noise_fraction * model.

    Noise-free series carry no sigma (uniform weights).
    """
    if noise_fraction < 0:
        raise DomainError(f"noise_fraction must be non-negative, got {noise_fraction}")
    if n_tot0 <= 0:
        raise DomainError(f"n_tot0 must be positive, got {n_tot0}")
    times = np.asarray(times, dtype=float)
    model = model_total_density(rates, dist, n_tot0, times)
    if noise_fraction == 0:
        return TimeSeries(times, model, None, label)
    rng = np.random.default_rng(seed)
    values = np.clip(model * (1.0 + noise_fraction * rng.standard_normal(model.size)), 0.0, None)
    return TimeSeries(times, values, noise_fraction * model, label)


@dataclass(frozen=True)
class CoverageReport:
    trials: int
    failures: int
    covered: Dict[str, int]
    k: float

    @property
    def coverage(self) -> Dict[str, float]:
        """Covered fraction of all trials; a failed fit counts as a miss."""
        return {name: count / self.trials for name, count in self.covered.items()}

    @property
    def coverage_of_converged(self) -> Dict[str, float]:
        ok = self.trials - self.failures
        return {name: (count / ok if ok else 0.0) for name, count in self.covered.items()}


def coverage_trial(
    seeds: Tuple[int, int],
    rates: RateConstants,
    dist_thermal: VibrationalDistribution,
    dist_heated: VibrationalDistribution,
    n_tot0: float,
    times: Sequence[float],
    noise_fraction: float,
    k: float = 2.0,
) -> Optional[Dict[str, bool]]:
    """One synthesize -> fit round; None when the fit fails or does not converge."""
    thermal = synthesize_dataset(rates, dist_thermal, n_tot0, times, noise_fraction, seeds[0], "thermal")
    heated = synthesize_dataset(rates, dist_heated, n_tot0, times, noise_fraction, seeds[1], "heated")
    init = RateConstants(beta2=1.5 * rates.beta2, beta3=0.7 * rates.beta3)
    try:
        result = fit_dual_curves(thermal, heated, dist_thermal, dist_heated, init)
    except (IntegrationError, RankDeficiencyError) as exc:
        logger.warning("coverage trial failed: %s", exc)
        return None
    if not result.converged:
        return None
    return {
        "beta2": result.covers("beta2", rates.beta2, k),
        "beta3": result.covers("beta3", rates.beta3, k),
    }


def single_beta_coverage_trial(
    seed: int,
    beta: float,
    n0: float,
    times: Sequence[float],
    noise_fraction: float,
    k: float = 2.0,
) -> Optional[Dict[str, bool]]:
    """One noisy n0 / (1 + beta n0 t) curve fitted by fit_single_beta."""
    times = np.asarray(times, dtype=float)
    model = analytic_two_body(n0, beta, times)
    rng = np.random.default_rng(seed)
    values = np.clip(model * (1.0 + noise_fraction * rng.standard_normal(model.size)), 0.0, None)
    ts = TimeSeries(times, values, noise_fraction * model, "mixture")
    try:
        result = fit_single_beta(ts)
    except (IntegrationError, RankDeficiencyError, InsufficientDataError) as exc:
        logger.warning("coverage trial failed: %s", exc)
        return None
    if not result.converged:
        return None
    return {"beta1": result.covers("beta1", beta, k)}


def _tally(outcomes, names: Sequence[str], n_trials: int, k: float) -> CoverageReport:
    covered = {name: 0 for name in names}
    failures = 0
    for outcome in outcomes:
        if outcome is None:
            failures += 1
            continue
        for name, ok in outcome.items():
            covered[name] += int(ok)
    report = CoverageReport(trials=n_trials, failures=failures, covered=covered, k=k)
    logger.info("coverage over %d trials: %s (%d failed)", n_trials, report.coverage, failures)
    return report


def _trial_seeds(n_trials: int, seed: int, words: int) -> List[Tuple[int, ...]]:
    if n_trials < 1:
        raise DomainError("n_trials must be at least 1")
    children = np.random.SeedSequence(seed).spawn(n_trials)
    return [tuple(int(s) for s in child.generate_state(words)) for child in children]


def monte_carlo_coverage(
    n_trials: int,
    seed: int,
    rates: RateConstants,
    dist_thermal: VibrationalDistribution,
    dist_heated: VibrationalDistribution,
    n_tot0: float,
    times: Sequence[float],
    noise_fraction: float = 0.05,
    k: float = 2.0,
    workers: Optional[int] = None,
) -> CoverageReport:
    """Fraction of seeded trials whose k-sigma interval contains the generator value."""
    seed_pairs = _trial_seeds(n_trials, seed, 2)

    def run(pair):
        return coverage_trial(pair, rates, dist_thermal, dist_heated, n_tot0, times, noise_fraction, k)

    return _tally(parallel_map(run, seed_pairs, workers), ["beta2", "beta3"], n_trials, k)


def monte_carlo_single_coverage(
    n_trials: int,
    seed: int,
    beta: float,
    n0: float,
    times: Sequence[float],
    noise_fraction: float = 0.05,
    k: float = 2.0,
    workers: Optional[int] = None,
) -> CoverageReport:
    """Coverage of beta_1 from repeated single-curve fits."""
    seeds = [s[0] for s in _trial_seeds(n_trials, seed, 1)]

    def run(s):
        return single_beta_coverage_trial(s, beta, n0, times, noise_fraction, k)

    return _tally(parallel_map(run, seeds, workers), ["beta1"], n_trials, k)

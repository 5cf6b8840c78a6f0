"""
Stereokin Kinetics Module

Two-body loss dynamics of molecules distributed over the axial lattice levels:

    dn_v/dt = - beta_{v,v} n_v^2 - sum_{w != v} beta_{v,w} n_v n_w

With beta_{v,v} = beta_3 (intralevel, channel |3>) and beta_{v != w} = beta_2
(interlevel, channel |2>) this is the three-level loss model used to analyse
the measured n_tot(t) curves. The intralevel term carries no extra factor 2.

Key Functions:
    - loss_rhs(): time derivatives of the level densities
    - integrate_loss(): adaptive Runge-Kutta solution sampled at given times
    - analytic_two_body(): n0 / (1 + beta n0 t)
    - effective_initial_rate(): beta_3 S + beta_2 (1 - S), S = sum f^2
    - simulate_layer_resolved(): independent loss in every lattice layer and
      the resulting alpha(t) and its time average
    - convert_beta_2d_to_3d() / convert_beta_3d_to_2d(): sqrt(pi) a_ho scaling
    - initial_rate_curve(): thermal-equilibrium beta_initial vs n0/n_tot

All densities are m^-2, 2D rates m^2/s, times s.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field
from scipy.integrate import solve_ivp, trapezoid

from .core import parallel_map, per_cm2_to_per_m2, scaled_temperature
from .errors import DomainError, IntegrationError
from .gasmodel import (
    LayerStack,
    VibrationalDistribution,
    average_2d_density,
    boltzmann_occupancy,
    effective_layer_number,
)

logger = logging.getLogger(__name__)

DEFAULT_REL_TOL = 1e-8
DEFAULT_ABS_TOL = per_cm2_to_per_m2(1e-3)
DEFAULT_HOLD_TIMES = 5.0
DEFAULT_SAMPLES = 201
FALLBACK_HOLD_TIME = 1.0            # s, window when nothing is lost


class RateConstants(BaseModel):
    """Channel loss constants in m^2/s."""

    model_config = ConfigDict(frozen=True)

    beta1: float = Field(default=0.0, ge=0)
    beta2: float = Field(default=0.0, ge=0)
    beta3: float = Field(default=0.0, ge=0)


@dataclass(frozen=True)
class RateMatrix:
    """Symmetric beta_{v1,v2} over the lattice levels, m^2/s."""

    values: np.ndarray

    def __post_init__(self):
        b = np.array(self.values, dtype=float)
        if b.ndim != 2 or b.shape[0] != b.shape[1]:
            raise DomainError(f"rate matrix must be square, got shape {b.shape}")
        if np.any(b < 0):
            raise DomainError("rate matrix entries must be non-negative")
        if not np.allclose(b, b.T, rtol=1e-12, atol=0.0):
            raise DomainError("rate matrix must be symmetric")
        b.setflags(write=False)
        object.__setattr__(self, "values", b)

    @classmethod
    def from_constants(cls, rates: RateConstants, v_cut: int = 2) -> "RateMatrix":
        n = v_cut + 1
        b = np.full((n, n), rates.beta2)
        np.fill_diagonal(b, rates.beta3)
        return cls(b)

    @property
    def levels(self) -> int:
        return self.values.shape[0]

    def initial_rate(self, dist: VibrationalDistribution) -> float:
        """sum_{v,w} f_v f_w beta_{v,w}: -(dn_tot/dt)/n_tot^2 at t=0."""
        f = dist.fractions
        if f.size != self.levels:
            raise DomainError(f"distribution has {f.size} levels, matrix {self.levels}")
        return float(f @ self.values @ f)

    def scaled(self, factor: float) -> "RateMatrix":
        return RateMatrix(self.values * factor)


RatesLike = Union[RateMatrix, RateConstants]


def _as_matrix(rates: RatesLike, levels: int) -> RateMatrix:
    if isinstance(rates, RateConstants):
        return RateMatrix.from_constants(rates, levels - 1)
    if rates.levels != levels:
        raise DomainError(f"rate matrix has {rates.levels} levels, densities {levels}")
    return rates


@dataclass(frozen=True)
class LevelDensities:
    densities: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        n = np.array(self.densities, dtype=float)
        if np.any(n < 0):
            raise DomainError(f"level densities must be non-negative, got {n}")
        object.__setattr__(self, "densities", n)

    @classmethod
    def from_distribution(cls, n_tot: float, dist: VibrationalDistribution, time: float = 0.0) -> "LevelDensities":
        return cls(n_tot * dist.fractions, time)

    @property
    def total(self) -> float:
        return float(self.densities.sum())


@dataclass(frozen=True)
class Trajectory:
    """Level densities sampled at ``times``; ``densities`` has shape (times, levels)."""

    times: np.ndarray
    densities: np.ndarray
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise DomainError("trajectory times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "densities", np.asarray(self.densities, dtype=float))

    @property
    def total(self) -> np.ndarray:
        return self.densities.sum(axis=1)

    def sample(self, index: int) -> LevelDensities:
        return LevelDensities(self.densities[index], float(self.times[index]))

    def is_monotone(self, rtol: float = 1e-9) -> bool:
        """Every level non-increasing and non-negative, up to solver noise."""
        scale = rtol * max(float(self.densities.max(initial=0.0)), 1.0)
        return bool(np.all(self.densities >= -scale) and np.all(np.diff(self.densities, axis=0) <= scale))

    def to_frame(self) -> pd.DataFrame:
        """Plot-ready table in cm^-2."""
        frame = pd.DataFrame({"t_s": self.times})
        for v in range(self.densities.shape[1]):
            frame[f"n{v}_cm2"] = self.densities[:, v] * 1e-4
        frame["ntot_cm2"] = self.total * 1e-4
        return frame


# --- Rate equations ---

def loss_rhs(n: LevelDensities, rates: RatesLike) -> np.ndarray:
    """dn_v/dt in m^-2 s^-1."""
    y = n.densities
    beta = _as_matrix(rates, y.size).values
    return -y * (beta @ y)


def _rhs(_t, y, beta):
    return -y * (beta @ y)


def integrate_loss(
    n0: LevelDensities,
    rates: RatesLike,
    times: Sequence[float],
    rel_tol: float = DEFAULT_REL_TOL,
    abs_tol: float = DEFAULT_ABS_TOL,
    method: str = "RK45",
) -> Trajectory:
    """Solve the loss equations from ``n0`` and sample them at ``times``."""
    times = np.asarray(times, dtype=float)
    if rel_tol <= 0 or abs_tol <= 0:
        raise DomainError("tolerances must be positive")
    if times.size == 0:
        raise DomainError("no sample times requested")
    if np.any(np.diff(times) <= 0):
        raise DomainError("sample times must be strictly increasing")
    if times[0] < n0.time:
        raise DomainError(f"first sample time {times[0]} precedes the initial time {n0.time}")

    beta = _as_matrix(rates, n0.densities.size).values
    y0 = n0.densities

    if not np.any(beta) or times[-1] == n0.time:
        return Trajectory(times, np.tile(y0, (times.size, 1)), {"method": method, "nfev": 0, "rel_tol": rel_tol, "abs_tol": abs_tol})

    sol = solve_ivp(
        _rhs, (n0.time, times[-1]), y0, method=method, t_eval=times,
        args=(beta,), rtol=rel_tol, atol=abs_tol,
    )
    diagnostics = {
        "method": method, "rel_tol": rel_tol, "abs_tol": abs_tol,
        "nfev": int(sol.nfev), "status": int(sol.status), "message": sol.message,
    }
    if sol.status != 0:
        diagnostics["t_reached"] = float(sol.t[-1]) if sol.t.size else n0.time
        raise IntegrationError(f"loss integration failed: {sol.message}", diagnostics)

    logger.debug("integrate_loss: %d samples, nfev=%d", times.size, sol.nfev)
    return Trajectory(times, np.clip(sol.y.T, 0.0, None), diagnostics)


def analytic_two_body(n0: float, beta: float, t: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """Closed form of dn/dt = -beta n^2."""
    if n0 < 0 or beta < 0 or np.any(np.asarray(t) < 0):
        raise DomainError("analytic_two_body needs n0, beta, t >= 0")
    if np.ndim(t):
        t = np.asarray(t, dtype=float)
    return n0 / (1.0 + beta * n0 * t)


def effective_initial_rate(dist: VibrationalDistribution, beta2: float, beta3: float) -> float:
    """beta_3 sum f^2 + beta_2 sum_{v1 != v2} f(v1) f(v2)."""
    s = dist.purity()
    return beta3 * s + beta2 * (1.0 - s)


def population_weighted_rates(matrix: RateMatrix, dist: VibrationalDistribution) -> Tuple[float, float]:
    """(slow, fast): population-weighted means of the intralevel and interlevel entries."""
    f = dist.fractions
    pair = np.outer(f, f)
    diag = np.eye(f.size, dtype=bool)
    w_slow = pair[diag].sum()
    w_fast = pair[~diag].sum()
    slow = float((pair[diag] * matrix.values[diag]).sum() / w_slow) if w_slow > 0 else 0.0
    fast = float((pair[~diag] * matrix.values[~diag]).sum() / w_fast) if w_fast > 0 else 0.0
    return slow, fast


def initial_rate_curve(beta2: float, beta3: float, nu_z: float, temperatures: Sequence[float], v_cut: int = 2) -> pd.DataFrame:
    """beta_initial of a thermal gas against its ground-level fraction."""
    rows = []
    for temperature in temperatures:
        dist = boltzmann_occupancy(temperature, nu_z, v_cut)
        rows.append({
            "temperature_k": temperature,
            "scaled_temperature": scaled_temperature(temperature, nu_z),
            "ground_fraction": dist.ground_fraction,
            "beta_initial_m2_per_s": effective_initial_rate(dist, beta2, beta3),
        })
    return pd.DataFrame(rows)


# --- 2D <-> 3D ---

def convert_beta_2d_to_3d(beta2d: float, a_ho: float) -> float:
    if beta2d < 0 or a_ho <= 0:
        raise DomainError(f"convert_beta_2d_to_3d needs beta2d >= 0 and a_ho > 0, got {beta2d}, {a_ho}")
    return math.sqrt(math.pi) * a_ho * beta2d


def convert_beta_3d_to_2d(beta3d: float, a_ho: float) -> float:
    if beta3d < 0 or a_ho <= 0:
        raise DomainError(f"convert_beta_3d_to_2d needs beta3d >= 0 and a_ho > 0, got {beta3d}, {a_ho}")
    return beta3d / (math.sqrt(math.pi) * a_ho)


# --- Layer-resolved loss ---

@dataclass(frozen=True)
class LayerSimulation:
    times: np.ndarray
    layer_numbers: np.ndarray       # (times, layers) molecule numbers
    alpha: np.ndarray               # alpha(t)
    time_averaged_alpha: float
    layer_trajectories: List[Trajectory]

    @property
    def total_numbers(self) -> np.ndarray:
        return self.layer_numbers.sum(axis=1)


def characteristic_time(rates: RatesLike, n_bar: float, levels: int = 3) -> float:
    """1 / (beta_slow n_bar) with beta_slow the smallest positive rate entry."""
    beta = _as_matrix(rates, levels).values
    positive = beta[beta > 0]
    if positive.size == 0 or n_bar <= 0:
        raise DomainError("characteristic time needs a positive rate and density")
    return 1.0 / (float(positive.min()) * n_bar)


def default_hold_window(rates: RatesLike, n_bar: float, levels: int = 3) -> float:
    """DEFAULT_HOLD_TIMES characteristic times, or FALLBACK_HOLD_TIME when no loss occurs."""
    beta = _as_matrix(rates, levels).values
    if not np.any(beta > 0) or n_bar <= 0:
        logger.info("no loss at these rates; using a %.3g s window", FALLBACK_HOLD_TIME)
        return FALLBACK_HOLD_TIME
    return DEFAULT_HOLD_TIMES * characteristic_time(rates, n_bar, levels)


def time_averaged_alpha(times: np.ndarray, alpha: np.ndarray) -> float:
    span = times[-1] - times[0]
    if span <= 0:
        return float(alpha[0])
    return float(trapezoid(alpha, times) / span)


def _alpha_series(numbers: np.ndarray) -> np.ndarray:
    sq = np.sum(numbers**2, axis=1)
    return np.where(sq > 0, numbers.sum(axis=1) ** 2 / np.where(sq > 0, sq, 1.0), 1.0)


def simulate_layer_resolved(
    stack: LayerStack,
    dist: VibrationalDistribution,
    rates: RatesLike,
    sigma_r: float,
    times: Optional[Sequence[float]] = None,
    rel_tol: float = DEFAULT_REL_TOL,
    abs_tol: float = DEFAULT_ABS_TOL,
    workers: Optional[int] = None,
) -> LayerSimulation:
    """Integrate the loss independently in every layer and track alpha(t).

    Each layer starts at n_v = N_j f(v) / (4 pi sigma_r^2). Without ``times``
    the window spans DEFAULT_HOLD_TIMES characteristic times of the
    average initial density (FALLBACK_HOLD_TIME when the rates are all zero).
    """
    if sigma_r <= 0:
        raise DomainError(f"sigma_r must be positive, got {sigma_r}")
    area = 4.0 * math.pi * sigma_r**2
    matrix = _as_matrix(rates, len(dist))

    if times is None:
        n_bar = average_2d_density(stack.total, sigma_r, effective_layer_number(stack))
        t_end = default_hold_window(matrix, n_bar, len(dist))
        times = np.linspace(0.0, t_end, DEFAULT_SAMPLES)
        logger.info("layer simulation window: %.4g s", t_end)
    times = np.asarray(times, dtype=float)

    def run(layer_number: float) -> Trajectory:
        start = LevelDensities.from_distribution(layer_number / area, dist)
        return integrate_loss(start, matrix, times, rel_tol, abs_tol)

    trajectories = parallel_map(run, stack.numbers, workers)
    numbers = np.column_stack([traj.total * area for traj in trajectories])
    alpha = _alpha_series(numbers)
    return LayerSimulation(times, numbers, alpha, time_averaged_alpha(times, alpha), trajectories)

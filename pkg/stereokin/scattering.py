"""
Stereokin Scattering Module

Single-channel model of the three lowest adiabatic potentials,

    V(R) = hbar^2 L(L+1) / (2 mu R^2) + c3 / R^3 - c6 / R^6

with c3 = -2 d^2 / (4 pi eps0) for head-to-tail |2>, +d^2 / (4 pi eps0) for
side-by-side |3> and c3 = 0, L = 0 for the isotropic channel |1>.

Short-range chemistry is represented by a purely incoming wave at R_abs
(unit capture). The radial equation is integrated outward from R_abs and
matched to Riccati-Hankel functions at large R; the transmission is the
absorbed flux divided by the incoming flux.

Inside the radial solver lengths are in nm and energies in units of
hbar^2 / (2 mu nm^2), so u'' = (W(R) - k^2) u with W = V / that unit.

Key Functions:
    - make_potential(): AdiabaticPotential for a channel, dipole and molecule
    - potential_value() / barrier(): V(R) and its maximum
    - transmission(): numerical flux transmission with WKB available alongside
    - wkb_transmission(): Langer-corrected semiclassical estimate
    - rate_constant() / thermal_rate_constant(): 3D loss rate constants
    - dipole_scan(): beta(d) grid and its log-log slope
    - level_rate_matrix(): 2D beta_{v1,v2} for the kinetics module
    - suppression_factor(): beta_|2> / beta_|3>
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.integrate import quad, solve_ivp
from scipy.optimize import brentq, minimize_scalar
from scipy.special import roots_genlaguerre, spherical_jn, spherical_yn

from .channels import ChannelLabel
from .core import BOLTZMANN, FOUR_PI_EPS0, HBAR, MoleculeSpec, TrapSpec, harmonic_length, parallel_map, si_to_debye
from .errors import DomainError, InsufficientDataError, IntegrationError
from .kinetics import RateMatrix, convert_beta_3d_to_2d

logger = logging.getLogger(__name__)

NM = 1e-9
DEFAULT_R_ABS = 1e-9
R_FAR = 1e-5
SOLVER_RTOL = 1e-10
THERMAL_NODES = 16


class AdiabaticPotential(BaseModel):
    model_config = ConfigDict(frozen=True)

    channel: ChannelLabel
    induced_dipole: float = Field(ge=0)
    reduced_mass: float = Field(gt=0)
    c6: float = Field(ge=0)
    L_eff: int = Field(ge=0)
    c3: float

    @model_validator(mode="after")
    def _check_signs(self):
        if self.channel == ChannelLabel.HEAD_TO_TAIL and self.c3 > 0:
            raise ValueError("c3 must be <= 0 for the head-to-tail channel")
        if self.channel == ChannelLabel.SIDE_BY_SIDE and self.c3 < 0:
            raise ValueError("c3 must be >= 0 for the side-by-side channel")
        if self.channel == ChannelLabel.ISOTROPIC and (self.c3 != 0 or self.L_eff != 0):
            raise ValueError("the isotropic channel has c3 = 0 and L_eff = 0")
        return self

    @property
    def energy_unit(self) -> float:
        """hbar^2 / (2 mu nm^2) in J."""
        return HBAR**2 / (2.0 * self.reduced_mass * NM**2)

    @property
    def symmetry_factor(self) -> int:
        return 1 if self.channel == ChannelLabel.ISOTROPIC else 2


class TransmissionResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    energy: float
    transmission: float = Field(ge=0, le=1)
    barrier_radius: Optional[float] = None
    barrier_height: float = 0.0
    method: str = "numerical"
    reflection: Optional[float] = None
    flux_residual: Optional[float] = None


@dataclass(frozen=True)
class Barrier:
    radius: Optional[float]
    height: float

    @property
    def barrierless(self) -> bool:
        return self.radius is None


@dataclass(frozen=True)
class RateVsDipole:
    channel: ChannelLabel
    dipoles: np.ndarray        # C m
    rates: np.ndarray          # m^3/s, or m^2/s in 2D mode
    barriers: np.ndarray       # J
    slope: float
    window: Tuple[float, float]
    mode: str = "3d"

    def __post_init__(self):
        if np.any(np.diff(self.dipoles) <= 0):
            raise DomainError("dipole grid must be strictly increasing")
        if np.any(self.rates < 0):
            raise DomainError("rates must be non-negative")

    def to_frame(self) -> pd.DataFrame:
        rate_col = "beta_cm3_per_s" if self.mode == "3d" else "beta_cm2_per_s"
        scale = 1e6 if self.mode == "3d" else 1e4
        return pd.DataFrame({
            "d_debye": [si_to_debye(d) for d in self.dipoles],
            rate_col: self.rates * scale,
            "barrier_uK": self.barriers / BOLTZMANN * 1e6,
        })


# --- Potentials ---

def make_potential(channel: ChannelLabel, induced_dipole: float, molecule: MoleculeSpec) -> AdiabaticPotential:
    """Effective potential of ``channel`` at dipole ``induced_dipole`` (C m)."""
    if induced_dipole < 0:
        raise DomainError(f"induced dipole must be non-negative, got {induced_dipole}")
    channel = ChannelLabel(channel)
    dd = induced_dipole**2 / FOUR_PI_EPS0
    if channel == ChannelLabel.ISOTROPIC:
        c3, L = 0.0, 0
    elif channel == ChannelLabel.HEAD_TO_TAIL:
        c3, L = -2.0 * dd, 1
    else:
        c3, L = dd, 1
    return AdiabaticPotential(
        channel=channel, induced_dipole=induced_dipole, reduced_mass=molecule.reduced_mass,
        c6=molecule.c6, L_eff=L, c3=c3,
    )


def _angular(pot: AdiabaticPotential, langer: bool) -> float:
    if langer and pot.L_eff > 0:
        return (pot.L_eff + 0.5) ** 2
    return float(pot.L_eff * (pot.L_eff + 1))


def potential_value(pot: AdiabaticPotential, R):
    """V(R) in J for R in m (scalar or array)."""
    R = np.asarray(R, dtype=float)
    if np.any(R <= 0):
        raise DomainError("R must be positive")
    value = HBAR**2 * pot.L_eff * (pot.L_eff + 1) / (2.0 * pot.reduced_mass * R**2) + pot.c3 / R**3 - pot.c6 / R**6
    return float(value) if value.ndim == 0 else value


def _scaled_coefficients(pot: AdiabaticPotential, langer: bool = False) -> Tuple[float, float, float]:
    eps = pot.energy_unit
    return _angular(pot, langer), pot.c3 / (eps * NM**3), pot.c6 / (eps * NM**6)


def _w(R, coeffs):
    a, c3, c6 = coeffs
    return a / R**2 + c3 / R**3 - c6 / R**6


def _dw(R, coeffs):
    a, c3, c6 = coeffs
    return -2.0 * a / R**3 - 3.0 * c3 / R**4 + 6.0 * c6 / R**7


def _barrier_scaled(coeffs, r_min: float, r_max: float) -> Tuple[Optional[float], float]:
    """Maximum of W on [r_min, r_max] (nm); (None, 0) when no positive maximum."""
    grid = np.geomspace(r_min, r_max, 4000)
    values = _w(grid, coeffs)
    i = int(np.argmax(values))
    if values[i] <= 0 or i == 0 or i == grid.size - 1:
        return None, 0.0
    res = minimize_scalar(
        lambda x: -_w(math.exp(x), coeffs),
        bounds=(math.log(grid[i - 1]), math.log(grid[i + 1])),
        method="bounded", options={"xatol": 1e-12},
    )
    r_b = math.exp(res.x)
    return r_b, float(_w(r_b, coeffs))


def barrier(pot: AdiabaticPotential, r_abs: float = DEFAULT_R_ABS) -> Barrier:
    """Global maximum of V on (r_abs, R_FAR); barrierless channels report height 0."""
    coeffs = _scaled_coefficients(pot)
    r_b, w_b = _barrier_scaled(coeffs, r_abs / NM, R_FAR / NM)
    if r_b is None:
        return Barrier(None, 0.0)
    return Barrier(r_b * NM, w_b * pot.energy_unit)


# --- Transmission ---

def _riccati(L: int, rho: float):
    """Riccati-Bessel j^, n^ (n^ ~ cos) and their rho-derivatives."""
    j = spherical_jn(L, rho)
    jp = spherical_jn(L, rho, derivative=True)
    y = spherical_yn(L, rho)
    yp = spherical_yn(L, rho, derivative=True)
    return rho * j, j + rho * jp, -rho * y, -(y + rho * yp)


def transmission(pot: AdiabaticPotential, energy: float, r_abs: float = DEFAULT_R_ABS) -> TransmissionResult:
    """Flux transmission through the long-range potential into the absorbing region."""
    if energy <= 0:
        raise DomainError(f"collision energy must be positive, got {energy}")
    eps = pot.energy_unit
    coeffs = _scaled_coefficients(pot)
    k2 = energy / eps
    k = math.sqrt(k2)
    r0 = r_abs / NM

    r_b, w_b = _barrier_scaled(coeffs, r0, R_FAR / NM)
    if r_b is not None and r0 >= r_b:
        raise DomainError(f"R_abs={r_abs:g} m lies outside the barrier radius {r_b * NM:g} m")
    kin0 = k2 - _w(r0, coeffs)
    if kin0 <= 0:
        raise DomainError(f"no propagating wave at R_abs={r_abs:g} m for E={energy:g} J")

    K0 = math.sqrt(kin0)
    dK0 = -_dw(r0, coeffs) / (2.0 * K0)
    u0 = 1.0 / math.sqrt(K0)
    du0 = (-1j * K0 - dK0 / (2.0 * K0)) * u0

    r_max = max(40.0 / k, 50.0 * (r_b or 0.0), 200.0)

    def rhs(R, y):
        f = _w(R, coeffs) - k2
        return [y[2], y[3], f * y[0], f * y[1]]

    y0 = [u0, 0.0, du0.real, du0.imag]
    sol = solve_ivp(rhs, (r0, r_max), y0, method="DOP853", rtol=SOLVER_RTOL, atol=1e-12 * abs(u0))
    if sol.status != 0:
        raise IntegrationError(
            f"radial integration failed: {sol.message}",
            {"energy": energy, "r_max_nm": r_max, "nfev": int(sol.nfev), "t_reached": float(sol.t[-1])},
        )
    yr = sol.y[:, -1]
    u = yr[0] + 1j * yr[1]
    du = (yr[2] + 1j * yr[3]) / k

    jh, djh, nh, dnh = _riccati(pot.L_eff, k * r_max)
    hp, dhp = nh + 1j * jh, dnh + 1j * djh
    hm, dhm = nh - 1j * jh, dnh - 1j * djh
    a_in = (u * dhp - du * hp) / 2j
    b_out = (du * hm - u * dhm) / 2j

    j_abs = -(np.conj(u0) * du0).imag
    incoming = k * abs(a_in) ** 2
    t_value = float(j_abs / incoming)
    r_value = float(abs(b_out) ** 2 / abs(a_in) ** 2)
    residual = abs(1.0 - t_value - r_value)

    method = "numerical"
    if r_b is not None and k2 >= w_b:
        method = "numerical-over-barrier"
        logger.warning("E=%.3g J lies above the barrier top %.3g J", energy, w_b * eps)
    logger.debug("transmission: E=%.3g J T=%.4g flux residual=%.2g nfev=%d", energy, t_value, residual, sol.nfev)
    return TransmissionResult(
        energy=energy, transmission=min(max(t_value, 0.0), 1.0),
        barrier_radius=None if r_b is None else r_b * NM, barrier_height=w_b * eps,
        method=method, reflection=r_value, flux_residual=residual,
    )


def wkb_transmission(pot: AdiabaticPotential, energy: float, r_abs: float = DEFAULT_R_ABS,
                     langer: bool = True) -> TransmissionResult:
    """Kemble form 1 / (1 + exp(2 theta)), theta = integral of sqrt(W - k^2) under the barrier.

    With ``langer`` the centrifugal term uses (L + 1/2)^2 for L > 0.
    """
    if energy <= 0:
        raise DomainError(f"collision energy must be positive, got {energy}")
    eps = pot.energy_unit
    coeffs = _scaled_coefficients(pot, langer)
    k2 = energy / eps
    r0 = r_abs / NM
    r_b, w_b = _barrier_scaled(coeffs, r0, R_FAR / NM)
    method = "wkb-langer" if langer else "wkb"

    if r_b is None or k2 >= w_b:
        return TransmissionResult(
            energy=energy, transmission=1.0, barrier_radius=None if r_b is None else r_b * NM,
            barrier_height=w_b * eps, method=method + "-over-barrier",
        )

    def excess(R):
        return _w(R, coeffs) - k2

    inner = brentq(excess, r0, r_b, xtol=1e-14) if excess(r0) < 0 else r0
    outer_limit = r_b * 2.0
    while excess(outer_limit) > 0:
        outer_limit *= 2.0
    outer = brentq(excess, r_b, outer_limit, xtol=1e-14)
    theta, _ = quad(lambda R: math.sqrt(max(excess(R), 0.0)), inner, outer, limit=200)
    t_value = 1.0 / (1.0 + math.exp(2.0 * theta))
    return TransmissionResult(
        energy=energy, transmission=t_value, barrier_radius=r_b * NM,
        barrier_height=w_b * eps, method=method,
    )


# --- Rate constants ---

def _capture_rate(pot: AdiabaticPotential, energy: float, t_value: float) -> float:
    k = math.sqrt(2.0 * pot.reduced_mass * energy) / HBAR
    v = HBAR * k / pot.reduced_mass
    return pot.symmetry_factor * (2 * pot.L_eff + 1) * math.pi / k**2 * t_value * v


def rate_constant(pot: AdiabaticPotential, temperature: float, r_abs: float = DEFAULT_R_ABS) -> float:
    """3D beta = g (2L+1) (pi / k^2) T(E) v at the single energy E = k_B T, in m^3/s."""
    if temperature <= 0:
        raise DomainError(f"temperature must be positive, got {temperature}")
    energy = BOLTZMANN * temperature
    return _capture_rate(pot, energy, transmission(pot, energy, r_abs).transmission)


def thermal_rate_constant(pot: AdiabaticPotential, temperature: float, r_abs: float = DEFAULT_R_ABS,
                          nodes: int = THERMAL_NODES) -> float:
    """Maxwell-Boltzmann average of the energy-resolved rate (Gauss-Laguerre, weight x^(1/2) e^-x)."""
    if temperature <= 0:
        raise DomainError(f"temperature must be positive, got {temperature}")
    x, w = roots_genlaguerre(nodes, 0.5)
    kt = BOLTZMANN * temperature
    total = 0.0
    for xi, wi in zip(x, w):
        energy = xi * kt
        total += wi * _capture_rate(pot, energy, transmission(pot, energy, r_abs).transmission)
    return 2.0 / math.sqrt(math.pi) * total


def dipole_scan(
    channel: ChannelLabel,
    d_grid: Sequence[float],
    temperature: float,
    molecule: MoleculeSpec,
    window: Optional[Tuple[float, float]] = None,
    r_abs: float = DEFAULT_R_ABS,
    mode: str = "3d",
    a_ho: Optional[float] = None,
    thermal: bool = False,
    workers: Optional[int] = None,
) -> RateVsDipole:
    """beta(d) over ``d_grid`` (C m) with the least-squares slope of log beta vs log d inside ``window``."""
    d = np.asarray(d_grid, dtype=float)
    if d.size == 0 or np.any(np.diff(d) <= 0):
        raise DomainError("d_grid must be non-empty and strictly increasing")
    if mode not in ("3d", "2d"):
        raise DomainError(f"mode must be '3d' or '2d', got {mode!r}")
    if mode == "2d" and a_ho is None:
        raise DomainError("2d mode needs the harmonic length a_ho")
    lo, hi = window if window is not None else (float(d[0]), float(d[-1]))
    in_window = (d >= lo) & (d <= hi) & (d > 0)
    if np.count_nonzero(in_window) < 3:
        raise InsufficientDataError(f"slope window [{lo:g}, {hi:g}] holds fewer than 3 grid points")

    rate_fn = thermal_rate_constant if thermal else rate_constant

    def one(dipole):
        pot = make_potential(channel, dipole, molecule)
        return rate_fn(pot, temperature, r_abs), barrier(pot, r_abs).height

    results = parallel_map(one, d, workers)
    rates = np.array([r for r, _ in results])
    barriers = np.array([b for _, b in results])
    if mode == "2d":
        rates = np.array([convert_beta_3d_to_2d(r, a_ho) for r in rates])

    sel = in_window & (rates > 0)
    if np.count_nonzero(sel) < 3:
        raise InsufficientDataError("fewer than 3 positive rates inside the slope window")
    slope = float(np.polyfit(np.log(d[sel]), np.log(rates[sel]), 1)[0])
    logger.info("dipole scan channel %s: slope %.3f over [%.3g, %.3g] D", int(channel), slope,
                si_to_debye(lo), si_to_debye(hi))
    return RateVsDipole(ChannelLabel(channel), d, rates, barriers, slope, (lo, hi), mode)


def level_rate_matrix(
    induced_dipole: float,
    temperature: float,
    molecule: MoleculeSpec,
    trap: TrapSpec,
    v_cut: int = 2,
    r_abs: float = DEFAULT_R_ABS,
    a_ho: Optional[float] = None,
) -> RateMatrix:
    """2D beta_{v1,v2}: channel |3> on the diagonal, channel |2> off it."""
    if a_ho is None:
        a_ho = harmonic_length(molecule.mass, trap.nu_z)
    intra = rate_constant(make_potential(ChannelLabel.SIDE_BY_SIDE, induced_dipole, molecule), temperature, r_abs)
    inter = rate_constant(make_potential(ChannelLabel.HEAD_TO_TAIL, induced_dipole, molecule), temperature, r_abs)
    n = v_cut + 1
    values = np.full((n, n), convert_beta_3d_to_2d(inter, a_ho))
    np.fill_diagonal(values, convert_beta_3d_to_2d(intra, a_ho))
    return RateMatrix(values)


def suppression_factor(induced_dipole: float, temperature: float, molecule: MoleculeSpec,
                       r_abs: float = DEFAULT_R_ABS) -> float:
    """beta_|2> / beta_|3> at one dipole."""
    head = rate_constant(make_potential(ChannelLabel.HEAD_TO_TAIL, induced_dipole, molecule), temperature, r_abs)
    side = rate_constant(make_potential(ChannelLabel.SIDE_BY_SIDE, induced_dipole, molecule), temperature, r_abs)
    if side <= 0:
        raise DomainError("side-by-side rate vanished; suppression undefined")
    return head / side

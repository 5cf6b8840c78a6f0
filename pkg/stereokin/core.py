"""
Stereokin Core Module

Physical constants, unit conversions, the experiment configuration value types
and the settings layer shared by every other module.

Internal units are SI throughout. Domain units (nK, kHz, Debye, cm^-2,
cm^2/s, atomic units of C6) are converted at the boundary by the helpers
below; the file schemas in ``schemas`` call them when building an
``ExperimentConfig``.

Value Types:
    - PhysicalConstants: CODATA constants used by the model
    - MoleculeSpec: mass, label and C6 coefficient of the molecule
    - TrapSpec: lattice axial / transverse frequencies and wavelength
    - SimulationSettings: solver and run settings carried by a config file
    - ExperimentConfig: one experimental condition

Key Functions:
    - harmonic_length(): sqrt(hbar / (m * 2 pi nu))
    - scaled_temperature(): k_B T / (h nu_z)
    - thermal_radial_size(): equipartition rms size in the transverse plane
    - a_ho_for(): harmonic length of a configuration (molecule or reduced mass)
    - parallel_map(): ordered thread-pool map capped by STEREOKIN_THREADS

Usage:
    from stereokin.core import harmonic_length, AMU

    a_ho = harmonic_length(127 * AMU, 23e3)   # 5.88e-8 m
"""

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, List, Optional, TypeVar

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field
from scipy import constants as sc

from .errors import DomainError

# Load variables from .env
load_dotenv()

logger = logging.getLogger(__name__)

# --- Physical constants (SI) ---
PLANCK = sc.h
HBAR = sc.hbar
BOLTZMANN = sc.k
FOUR_PI_EPS0 = 4.0 * math.pi * sc.epsilon_0
AMU = sc.physical_constants["atomic mass constant"][0]
DEBYE = 1e-21 / sc.c
HARTREE = sc.physical_constants["Hartree energy"][0]
BOHR = sc.physical_constants["Bohr radius"][0]
C6_ATOMIC_UNIT = HARTREE * BOHR**6

# --- Defaults (implementer-supplied, not anchors) ---
DEFAULT_MASS_AMU = 127.0
DEFAULT_C6_AU = 16130.0
DEFAULT_NU_Z_HZ = 23e3
DEFAULT_NU_R_HZ = 36.0
DEFAULT_LATTICE_WAVELENGTH_M = 1064e-9


class PhysicalConstants(BaseModel):
    model_config = ConfigDict(frozen=True)

    planck: float = Field(default=PLANCK, gt=0)
    hbar: float = Field(default=HBAR, gt=0)
    boltzmann: float = Field(default=BOLTZMANN, gt=0)
    vacuum_permittivity_factor: float = Field(default=FOUR_PI_EPS0, gt=0)
    atomic_mass_unit: float = Field(default=AMU, gt=0)
    debye: float = Field(default=DEBYE, gt=0)
    c6_atomic_unit: float = Field(default=C6_ATOMIC_UNIT, gt=0)


CONSTANTS = PhysicalConstants()


# --- Unit conversions ---

def debye_to_si(d_debye: float) -> float:
    return d_debye * DEBYE


def si_to_debye(d_si: float) -> float:
    return d_si / DEBYE


def au_c6_to_si(c6_au: float) -> float:
    return c6_au * C6_ATOMIC_UNIT


def si_to_au_c6(c6_si: float) -> float:
    return c6_si / C6_ATOMIC_UNIT


def nk_to_kelvin(t_nk: float) -> float:
    return t_nk * 1e-9


def kelvin_to_nk(t_k: float) -> float:
    return t_k * 1e9


def kelvin_to_joule(t_k: float) -> float:
    return t_k * BOLTZMANN


def joule_to_kelvin(e_j: float) -> float:
    return e_j / BOLTZMANN


def cm2_to_m2(beta_cm2_per_s: float) -> float:
    """2D rate constant cm^2/s -> m^2/s."""
    return beta_cm2_per_s * 1e-4


def m2_to_cm2(beta_m2_per_s: float) -> float:
    return beta_m2_per_s * 1e4


def cm3_to_m3(beta_cm3_per_s: float) -> float:
    return beta_cm3_per_s * 1e-6


def m3_to_cm3(beta_m3_per_s: float) -> float:
    return beta_m3_per_s * 1e6


def per_cm2_to_per_m2(n_per_cm2: float) -> float:
    """2D density cm^-2 -> m^-2."""
    return n_per_cm2 * 1e4


def per_m2_to_per_cm2(n_per_m2: float) -> float:
    return n_per_m2 * 1e-4


# --- Configuration value types ---

class MoleculeSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    mass: float = Field(default=DEFAULT_MASS_AMU * AMU, gt=0)
    label: str = "KRb"
    # literature default for KRb, configurable
    c6: float = Field(default=DEFAULT_C6_AU * C6_ATOMIC_UNIT, gt=0)

    @property
    def reduced_mass(self) -> float:
        return self.mass / 2.0


class TrapSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    nu_z: float = Field(default=DEFAULT_NU_Z_HZ, gt=0)
    nu_r: float = Field(default=DEFAULT_NU_R_HZ, gt=0)
    lattice_wavelength: float = Field(default=DEFAULT_LATTICE_WAVELENGTH_M, gt=0)

    @property
    def lattice_wavevector(self) -> float:
        return 2.0 * math.pi / self.lattice_wavelength


class SimulationSettings(BaseModel):
    model_config = ConfigDict(frozen=True)

    v_cut: int = Field(default=2, ge=2)
    heating_transfer: float = Field(default=0.0, ge=0, le=1)
    heated_ground_fraction: Optional[float] = Field(default=None, ge=0, le=1)
    layer_rms_width: float = Field(default=6.49, gt=0)
    effective_layers: Optional[float] = Field(default=None, ge=1)
    hold_time: Optional[float] = Field(default=None, gt=0)
    time_points: int = Field(default=41, ge=2)
    r_abs: float = Field(default=1e-9, gt=0)
    rel_tol: float = Field(default=1e-8, gt=0)
    abs_tol: float = Field(default=per_cm2_to_per_m2(1e-3), gt=0)
    use_reduced_mass_for_a_ho: bool = False


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    molecule: MoleculeSpec = MoleculeSpec()
    trap: TrapSpec = TrapSpec()
    temperature: float = Field(default=800e-9, gt=0)
    induced_dipole: float = Field(default=0.0, ge=0)
    efield_metadata: Optional[float] = None  # V/m, informational only
    total_molecules: float = Field(default=34000, ge=0)
    simulation: SimulationSettings = SimulationSettings()


# --- Operations ---

def harmonic_length(mass: float, frequency: float) -> float:
    """Harmonic-oscillator length sqrt(hbar / (m * 2 pi nu))."""
    if mass <= 0 or frequency <= 0:
        raise DomainError(f"harmonic_length needs mass > 0 and frequency > 0, got {mass}, {frequency}")
    return math.sqrt(HBAR / (mass * 2.0 * math.pi * frequency))


def scaled_temperature(temperature: float, nu_z: float) -> float:
    """k_B T / (h nu_z)."""
    if nu_z <= 0:
        raise DomainError(f"nu_z must be positive, got {nu_z}")
    if temperature < 0:
        raise DomainError(f"temperature must be non-negative, got {temperature}")
    return BOLTZMANN * temperature / (PLANCK * nu_z)


def thermal_radial_size(temperature: float, nu_r: float, mass: float) -> float:
    """Equipartition rms size sqrt(k_B T / (m (2 pi nu_r)^2))."""
    if temperature <= 0 or nu_r <= 0 or mass <= 0:
        raise DomainError(
            f"thermal_radial_size needs positive inputs, got T={temperature}, nu_r={nu_r}, m={mass}"
        )
    omega = 2.0 * math.pi * nu_r
    return math.sqrt(BOLTZMANN * temperature / (mass * omega**2))


def a_ho_for(config: ExperimentConfig) -> float:
    """Axial harmonic length of a configuration; reduced mass when the flag is set."""
    mass = config.molecule.mass
    if config.simulation.use_reduced_mass_for_a_ho:
        mass = config.molecule.reduced_mass
    return harmonic_length(mass, config.trap.nu_z)


# --- Settings and worker pool ---

@dataclass(frozen=True)
class Settings:
    threads: int = 1
    log_level: str = "WARNING"

    @classmethod
    def from_env(cls) -> "Settings":
        raw = os.getenv("STEREOKIN_THREADS", "1")
        try:
            threads = max(1, int(raw))
        except ValueError:
            logger.warning("Ignoring non-integer STEREOKIN_THREADS=%r", raw)
            threads = 1
        return cls(threads=threads, log_level=os.getenv("STEREOKIN_LOG_LEVEL", "WARNING").upper())


T = TypeVar("T")
R = TypeVar("R")


def parallel_map(fn: Callable[[T], R], items: Iterable[T], workers: Optional[int] = None) -> List[R]:
    """Map ``fn`` over ``items`` preserving order, on at most ``workers`` threads."""
    items = list(items)
    if workers is None:
        workers = Settings.from_env().threads
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))

"""
Pydantic schemas for every file stereokin reads or writes.

Key names carry unit suffixes; ``to_config()`` / ``to_rates()`` convert a
validated file into the SI value types used by the library.
"""

from datetime import datetime
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field

from .core import (
    AMU,
    C6_ATOMIC_UNIT,
    DEFAULT_C6_AU,
    DEFAULT_MASS_AMU,
    DEFAULT_NU_R_HZ,
    DEFAULT_NU_Z_HZ,
    ExperimentConfig,
    MoleculeSpec,
    SimulationSettings,
    TrapSpec,
    cm2_to_m2,
    debye_to_si,
    nk_to_kelvin,
    per_cm2_to_per_m2,
)
from .kinetics import RateConstants


class _FileModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


# --- Inputs ---

class MoleculeFile(_FileModel):
    label: str = "KRb"
    mass_amu: float = Field(default=DEFAULT_MASS_AMU, gt=0)
    c6_au: float = Field(default=DEFAULT_C6_AU, gt=0)


class TrapFile(_FileModel):
    nu_z_hz: float = Field(default=DEFAULT_NU_Z_HZ, gt=0)
    nu_r_hz: float = Field(default=DEFAULT_NU_R_HZ, gt=0)
    lattice_wavelength_nm: float = Field(default=1064.0, gt=0)


class SimulationFile(_FileModel):
    v_cut: int = Field(default=2, ge=2)
    heating_transfer: float = Field(default=0.0, ge=0, le=1)
    heated_ground_fraction: Optional[float] = Field(default=None, ge=0, le=1)
    layer_rms_width: float = Field(default=6.49, gt=0)
    effective_layers: Optional[float] = Field(default=None, ge=1)
    hold_time_s: Optional[float] = Field(default=None, gt=0)
    time_points: int = Field(default=41, ge=2)
    r_abs_nm: float = Field(default=1.0, gt=0)
    rel_tol: float = Field(default=1e-8, gt=0)
    abs_tol_cm2: float = Field(default=1e-3, gt=0)
    use_reduced_mass_for_a_ho: bool = False

    def to_settings(self) -> SimulationSettings:
        return SimulationSettings(
            v_cut=self.v_cut,
            heating_transfer=self.heating_transfer,
            heated_ground_fraction=self.heated_ground_fraction,
            layer_rms_width=self.layer_rms_width,
            effective_layers=self.effective_layers,
            hold_time=self.hold_time_s,
            time_points=self.time_points,
            r_abs=self.r_abs_nm * 1e-9,
            rel_tol=self.rel_tol,
            abs_tol=per_cm2_to_per_m2(self.abs_tol_cm2),
            use_reduced_mass_for_a_ho=self.use_reduced_mass_for_a_ho,
        )


class ExperimentConfigFile(_FileModel):
    molecule: MoleculeFile = MoleculeFile()
    trap: TrapFile = TrapFile()
    temperature_nk: float = Field(default=800.0, gt=0)
    dipole_debye: float = Field(default=0.0, ge=0)
    efield_v_per_cm: Optional[float] = None
    total_molecules: float = Field(default=34000, ge=0)
    simulation: SimulationFile = SimulationFile()

    def to_config(self) -> ExperimentConfig:
        return ExperimentConfig(
            molecule=MoleculeSpec(
                label=self.molecule.label,
                mass=self.molecule.mass_amu * AMU,
                c6=self.molecule.c6_au * C6_ATOMIC_UNIT,
            ),
            trap=TrapSpec(
                nu_z=self.trap.nu_z_hz,
                nu_r=self.trap.nu_r_hz,
                lattice_wavelength=self.trap.lattice_wavelength_nm * 1e-9,
            ),
            temperature=nk_to_kelvin(self.temperature_nk),
            induced_dipole=debye_to_si(self.dipole_debye),
            efield_metadata=None if self.efield_v_per_cm is None else self.efield_v_per_cm * 100.0,
            total_molecules=self.total_molecules,
            simulation=self.simulation.to_settings(),
        )


class RatesFile(_FileModel):
    beta1_cm2_per_s: float = Field(default=0.0, ge=0)
    beta2_cm2_per_s: float = Field(ge=0)
    beta3_cm2_per_s: float = Field(ge=0)

    def to_rates(self) -> RateConstants:
        return RateConstants(
            beta1=cm2_to_m2(self.beta1_cm2_per_s),
            beta2=cm2_to_m2(self.beta2_cm2_per_s),
            beta3=cm2_to_m2(self.beta3_cm2_per_s),
        )


# --- Reports ---

class FitReport(BaseModel):
    mode: str
    parameters: Dict[str, float]
    standard_errors: Dict[str, Optional[float]]
    covariance: List[List[Optional[float]]]
    chi2: float
    reduced_chi2: Optional[float] = None
    dof: int
    converged: bool
    message: str
    iterations: int
    gradient_norm: float
    condition_number: Optional[float] = None
    identifiable: bool
    cost_history: List[float] = []


class ScanSummary(BaseModel):
    channel: int
    mode: str
    temperature_nk: float
    points: int
    slope: float
    window_debye: List[float]
    rate_units: str
    thermal_average: bool = False


class BandmapReport(BaseModel):
    fractions: List[float]
    uncertainties: List[Optional[float]]
    resolution_hbark: float
    amplitude: float
    offset: float
    center_hbark: float
    residual_norm: float
    converged: bool


class CloudReport(BaseModel):
    total_molecules: float
    sigma_r_um: float
    alpha: float
    average_density_cm2: float
    peak_layer_number: float
    peak_density_cm2: float
    a_ho_nm: float
    scaled_temperature: float
    ground_fraction: float


class RunManifest(BaseModel):
    subcommand: str
    config: Optional[Dict[str, Any]] = None
    inputs: List[str] = []
    outputs: List[str] = []
    seed: Optional[int] = None
    arguments: Dict[str, Any] = {}
    version: str
    timestamp: str = Field(default_factory=lambda: datetime.now().strftime("%Y%m%d_%H%M%S"))

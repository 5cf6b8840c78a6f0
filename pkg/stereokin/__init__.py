"""
Stereokin - Stereodynamic loss of ultracold polar molecules in a quasi-2D lattice

This package models two-body chemical loss of fermionic polar molecules
stacked in the layers of a 1D optical lattice, where the axial lattice level
of each molecule selects the collision channel. It includes:

- Channels: exchange-symmetry selection rules and the three lowest channels
- Gas Model: thermal level populations, parametric heating, layered-cloud geometry
- Kinetics: the level-resolved loss equations, layer-resolved simulation, 2D/3D rates
- Fitting: Levenberg-Marquardt extraction of beta_2, beta_3 (and beta_1) from loss curves
- Scattering: single-channel dipolar capture model with an absorbing short-range boundary
- Band Mapping: Brillouin-zone populations from momentum profiles
- Pipeline: step-wise orchestration of one experimental condition
- CLI: the `stereokin` command

Main exports:
    - StereodynamicsPipeline: orchestrator for one condition
    - ExperimentConfig: condition value type
    - RateConstants, RateMatrix: loss constants
    - VibrationalDistribution: level populations
    - FitResult: fit estimates, covariance and diagnostics

Usage:
    from stereokin import StereodynamicsPipeline
    from stereokin.data_loader import load_experiment_config, load_rates

    _, config = load_experiment_config("data/example_config.json")
    pipeline = StereodynamicsPipeline(config, load_rates("data/example_rates.json"))
    result = pipeline.run(noise=0.05, seed=1)
"""

__version__ = "0.1.0"

from .core import ExperimentConfig, MoleculeSpec, SimulationSettings, TrapSpec
from .fitting import FitResult, TimeSeries
from .gasmodel import VibrationalDistribution
from .kinetics import RateConstants, RateMatrix, Trajectory
from .pipeline import StereodynamicsPipeline

__all__ = [
    "StereodynamicsPipeline",
    "ExperimentConfig",
    "MoleculeSpec",
    "TrapSpec",
    "SimulationSettings",
    "RateConstants",
    "RateMatrix",
    "Trajectory",
    "VibrationalDistribution",
    "TimeSeries",
    "FitResult",
]

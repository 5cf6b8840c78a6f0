"""
Stereokin Pipeline Module

Step-wise orchestration of one experimental condition, from the prepared gas
to fitted and predicted loss rates.

Pipeline Steps:
    1. Prepare Gas (step1_prepare_gas)
       - Input: ExperimentConfig
       - Output: GasPreparation (thermal + heated level populations, layer
         stack, cloud geometry, average 2D density)

    2. Simulate Loss (step2_simulate_loss)
       - Input: GasPreparation, heated flag, optional sample times
       - Output: Trajectory of the level densities at the average density
       - Default window: the configured hold time, otherwise 5
         characteristic times, sampled at `time_points`

    3. Synthesize Datasets (step3_synthesize)
       - Input: GasPreparation, noise fraction, seed
       - Output: (thermal, heated) TimeSeries
       - Multiplicative Gaussian noise with sigma = noise * model

    4. Fit Rates (step4_fit)
       - Input: thermal and heated TimeSeries
       - Output: FitResult over (beta2, beta3, n_tot0 per curve)
       - Populations are fixed at the prepared distributions

    5. Compare With Scattering (step5_compare_scattering)
       - Input: induced dipole and temperature of the config
       - Output: ScatteringComparison (2D rates predicted from channels |2>
         and |3>, suppression ratio)

When no rates are passed to the constructor, the rates predicted by step 5
drive steps 2 and 3.

Usage:
    from stereokin.pipeline import StereodynamicsPipeline

    pipeline = StereodynamicsPipeline(config, rates)
    result = pipeline.run(noise=0.05, seed=7)
    print(result.fit.estimates)
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .core import ExperimentConfig, a_ho_for
from .fitting import FitResult, LMOptions, TimeSeries, fit_dual_curves, synthesize_dataset
from .gasmodel import (
    CloudState,
    LayerStack,
    VibrationalDistribution,
    cloud_state,
    config_layer_stack,
    initial_distribution,
)
from .kinetics import (
    LayerSimulation,
    LevelDensities,
    RateConstants,
    RateMatrix,
    Trajectory,
    default_hold_window,
    integrate_loss,
    simulate_layer_resolved,
)
from .scattering import level_rate_matrix, suppression_factor

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GasPreparation:
    thermal: VibrationalDistribution
    heated: VibrationalDistribution
    stack: LayerStack
    cloud: CloudState

    @property
    def n_tot0(self) -> float:
        return self.cloud.average_density


@dataclass(frozen=True)
class ScatteringComparison:
    beta2: float            # m^2/s, channel |2>
    beta3: float            # m^2/s, channel |3>
    suppression: float
    matrix: RateMatrix

    def as_rates(self) -> RateConstants:
        return RateConstants(beta2=self.beta2, beta3=self.beta3)


@dataclass(frozen=True)
class PipelineResult:
    preparation: GasPreparation
    trajectory: Trajectory
    datasets: Tuple[TimeSeries, TimeSeries]
    fit: FitResult
    scattering: Optional[ScatteringComparison]


class StereodynamicsPipeline:
    """
    Orchestrator for one experimental condition.

    Attributes:
        config (ExperimentConfig): the condition being modelled
        rates (RateConstants | None): loss constants; None means predicted
        workers (int | None): thread cap for per-layer work

    Example:
        >>> pipeline = StereodynamicsPipeline(config, RateConstants(beta2=1.2e-10, beta3=2e-11))
        >>> prep = pipeline.step1_prepare_gas()
        >>> traj = pipeline.step2_simulate_loss(prep)
        >>> traj.to_frame().head()
    """

    def __init__(self, config: ExperimentConfig, rates: Optional[RateConstants] = None,
                 workers: Optional[int] = None):
        self.config = config
        self.rates = rates
        self.workers = workers
        self._scattering: Optional[ScatteringComparison] = None

    def step1_prepare_gas(self) -> GasPreparation:
        prep = GasPreparation(
            thermal=initial_distribution(self.config, heated=False),
            heated=initial_distribution(self.config, heated=True),
            stack=config_layer_stack(self.config),
            cloud=cloud_state(self.config),
        )
        logger.info(
            "prepared gas: f0 thermal=%.3f heated=%.3f alpha=%.2f n_bar=%.4g m^-2",
            prep.thermal.ground_fraction, prep.heated.ground_fraction, prep.cloud.alpha, prep.n_tot0,
        )
        return prep

    def effective_rates(self) -> RateConstants:
        if self.rates is not None:
            return self.rates
        return self.step5_compare_scattering().as_rates()

    def default_times(self, prep: GasPreparation) -> np.ndarray:
        sim = self.config.simulation
        if sim.hold_time is not None:
            t_end = sim.hold_time
        else:
            t_end = default_hold_window(self.effective_rates(), prep.n_tot0, len(prep.thermal))
        return np.linspace(0.0, t_end, sim.time_points)

    def step2_simulate_loss(self, prep: GasPreparation, heated: bool = False,
                            times: Optional[Sequence[float]] = None) -> Trajectory:
        dist = prep.heated if heated else prep.thermal
        times = self.default_times(prep) if times is None else np.asarray(times, dtype=float)
        sim = self.config.simulation
        start = LevelDensities.from_distribution(prep.n_tot0, dist)
        return integrate_loss(start, self.effective_rates(), times, sim.rel_tol, sim.abs_tol)

    def layer_resolved(self, prep: GasPreparation, times: Optional[Sequence[float]] = None) -> LayerSimulation:
        """Per-layer loss of the thermal gas; alpha(t) and its time average."""
        sim = self.config.simulation
        return simulate_layer_resolved(
            prep.stack, prep.thermal, self.effective_rates(), prep.cloud.sigma_r,
            times, sim.rel_tol, sim.abs_tol, self.workers,
        )

    def step3_synthesize(self, prep: GasPreparation, noise: float = 0.05, seed: Optional[int] = None,
                         times: Optional[Sequence[float]] = None) -> Tuple[TimeSeries, TimeSeries]:
        times = self.default_times(prep) if times is None else np.asarray(times, dtype=float)
        rates = self.effective_rates()
        seeds = [None, None]
        if seed is not None:
            seeds = [int(s) for s in np.random.SeedSequence(seed).generate_state(2)]
        thermal = synthesize_dataset(rates, prep.thermal, prep.n_tot0, times, noise, seeds[0], "thermal")
        heated = synthesize_dataset(rates, prep.heated, prep.n_tot0, times, noise, seeds[1], "heated")
        return thermal, heated

    def step4_fit(self, prep: GasPreparation, thermal: TimeSeries, heated: TimeSeries,
                  init: Optional[RateConstants] = None, options: Optional[LMOptions] = None) -> FitResult:
        if init is None:
            init = self.rates or RateConstants(beta2=1e-10, beta3=1e-11)
        return fit_dual_curves(thermal, heated, prep.thermal, prep.heated, init, options)

    def step5_compare_scattering(self) -> ScatteringComparison:
        if self._scattering is not None:
            return self._scattering
        cfg = self.config
        matrix = level_rate_matrix(
            cfg.induced_dipole, cfg.temperature, cfg.molecule, cfg.trap,
            cfg.simulation.v_cut, cfg.simulation.r_abs, a_ho_for(cfg),
        )
        self._scattering = ScatteringComparison(
            beta2=float(matrix.values[0, 1]),
            beta3=float(matrix.values[0, 0]),
            suppression=suppression_factor(cfg.induced_dipole, cfg.temperature, cfg.molecule, cfg.simulation.r_abs),
            matrix=matrix,
        )
        logger.info("scattering prediction: beta2=%.4g beta3=%.4g m^2/s", self._scattering.beta2,
                    self._scattering.beta3)
        return self._scattering

    def run(self, noise: float = 0.05, seed: Optional[int] = None, compare: bool = True) -> PipelineResult:
        print(f"Preparing gas at T = {self.config.temperature * 1e9:.0f} nK")
        prep = self.step1_prepare_gas()
        print("Simulating thermal loss curve...")
        trajectory = self.step2_simulate_loss(prep)
        print(f"Synthesizing datasets (noise {noise:.1%})...")
        thermal, heated = self.step3_synthesize(prep, noise, seed)
        print("Fitting beta2, beta3...")
        fit = self.step4_fit(prep, thermal, heated)
        if not fit.converged:
            print(f"Warning: fit did not converge: {fit.message}")
        scattering = self.step5_compare_scattering() if compare else None
        return PipelineResult(prep, trajectory, (thermal, heated), fit, scattering)

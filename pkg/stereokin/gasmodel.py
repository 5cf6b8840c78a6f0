"""
Stereokin Gas Model Module

Populations of the axial lattice levels and the layered-cloud geometry that
turns molecule numbers into 2D densities.

Level populations:
    - boltzmann_occupancy(): thermal f(v), tail above v_cut aggregated into v_cut
    - parametric_transfer(): v=0 -> v=2 transfer with efficiency p
    - transfer_for_ground_fraction(): p that leaves a requested f(0)

Cloud geometry:
    - gaussian_layer_stack(): discrete Gaussian distribution over lattice layers
    - effective_layer_number(): alpha = (sum N_j)^2 / sum N_j^2
    - layer_width_for_alpha(): Gaussian width producing a given alpha
    - average_2d_density(): N / (4 pi alpha sigma_r^2)
    - peak_layer_density(): N_peak / (2 pi sigma_r^2)
    - cloud_state(): CloudState of an ExperimentConfig
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from .core import BOLTZMANN, PLANCK, ExperimentConfig, thermal_radial_size
from .errors import DomainError, TruncationError

logger = logging.getLogger(__name__)

NORMALIZATION_TOL = 1e-12


@dataclass(frozen=True)
class VibrationalDistribution:
    """Fractional populations f(v), v = 0..v_cut."""

    fractions: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.fractions, dtype=float)
        if f.ndim != 1 or f.size == 0:
            raise DomainError("fractions must be a non-empty 1D sequence")
        if np.any(f < 0):
            raise DomainError(f"fractions must be non-negative, got {f}")
        if abs(f.sum() - 1.0) > NORMALIZATION_TOL * max(1, f.size):
            raise DomainError(f"fractions must sum to 1, got sum {f.sum():.15g}")
        f.setflags(write=False)
        object.__setattr__(self, "fractions", f)

    @classmethod
    def normalized(cls, weights: Sequence[float]) -> "VibrationalDistribution":
        w = np.asarray(weights, dtype=float)
        return cls(w / w.sum())

    @property
    def v_cut(self) -> int:
        return self.fractions.size - 1

    @property
    def ground_fraction(self) -> float:
        return float(self.fractions[0])

    def purity(self) -> float:
        """S = sum f(v)^2, the intralevel pair weight."""
        return float(np.sum(self.fractions**2))

    def __len__(self):
        return self.fractions.size


@dataclass(frozen=True)
class LayerStack:
    """Molecule numbers per lattice layer, indices centred on the peak layer."""

    numbers: np.ndarray
    indices: np.ndarray
    width: float

    def __post_init__(self):
        n = np.asarray(self.numbers, dtype=float)
        if np.any(n < 0):
            raise DomainError("layer numbers must be non-negative")
        object.__setattr__(self, "numbers", n)
        object.__setattr__(self, "indices", np.asarray(self.indices, dtype=int))

    @property
    def total(self) -> float:
        return float(self.numbers.sum())

    @property
    def peak(self) -> float:
        return float(self.numbers.max())

    @classmethod
    def uniform(cls, total: float, layers: int) -> "LayerStack":
        idx = np.arange(layers) - layers // 2
        return cls(np.full(layers, total / layers), idx, width=float("inf"))


@dataclass(frozen=True)
class CloudState:
    total: float
    sigma_r: float
    alpha: float

    def __post_init__(self):
        if self.total < 0 or self.sigma_r <= 0 or self.alpha < 1:
            raise DomainError(f"invalid cloud state N={self.total}, sigma_r={self.sigma_r}, alpha={self.alpha}")

    @property
    def average_density(self) -> float:
        return average_2d_density(self.total, self.sigma_r, self.alpha)


# --- Level populations ---

def boltzmann_occupancy(temperature: float, nu_z: float, v_cut: int = 2) -> VibrationalDistribution:
    """Thermal populations of the axial levels; tail v >= v_cut lumped into v_cut."""
    if nu_z <= 0:
        raise DomainError(f"nu_z must be positive, got {nu_z}")
    if temperature < 0:
        raise DomainError(f"temperature must be non-negative, got {temperature}")
    if v_cut < 2:
        raise DomainError(f"v_cut must be at least 2, got {v_cut}")

    f = np.zeros(v_cut + 1)
    if temperature == 0:
        f[0] = 1.0
        return VibrationalDistribution(f)

    q = math.exp(-PLANCK * nu_z / (BOLTZMANN * temperature))
    v = np.arange(v_cut)
    f[:v_cut] = (1.0 - q) * q**v
    f[v_cut] = q**v_cut  # geometric tail sum
    return VibrationalDistribution(f / f.sum())


def parametric_transfer(dist: VibrationalDistribution, p: float) -> VibrationalDistribution:
    """Move a fraction p of the v=0 population to v=2."""
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"transfer fraction must lie in [0, 1], got {p}")
    f = dist.fractions.copy()
    moved = p * f[0]
    f[0] -= moved
    f[2] += moved
    return VibrationalDistribution(f)


def transfer_for_ground_fraction(dist: VibrationalDistribution, target_f0: float) -> float:
    """Transfer p with (1 - p) f(0) = target_f0."""
    f0 = dist.ground_fraction
    if not 0.0 <= target_f0 <= f0 or f0 == 0:
        raise DomainError(f"target ground fraction {target_f0} not reachable from f(0)={f0}")
    return 1.0 - target_f0 / f0


# --- Layer geometry ---

def gaussian_layer_stack(total: float, width: float, j_max: Optional[int] = None) -> LayerStack:
    """Discrete Gaussian N_j ~ exp(-j^2 / 2w^2), |j| <= j_max, summing to ``total``."""
    if total <= 0 or width <= 0:
        raise DomainError(f"total and width must be positive, got {total}, {width}")
    if j_max is None:
        j_max = int(math.ceil(5 * width))
    if j_max < 3 * width:
        raise TruncationError(f"j_max={j_max} truncates a stack of width {width} (need >= {3 * width:.3g})")
    j = np.arange(-j_max, j_max + 1)
    weights = np.exp(-(j**2) / (2.0 * width**2))
    return LayerStack(total * weights / weights.sum(), j, width)


def effective_layer_number(stack: LayerStack) -> float:
    n = stack.numbers
    denom = float(np.sum(n**2))
    if n.size == 0 or denom == 0:
        raise DomainError("effective layer number of an empty stack")
    return float(n.sum() ** 2 / denom)


def layer_width_for_alpha(alpha: float) -> float:
    """Width w of a Gaussian stack with effective layer number ``alpha``."""
    if alpha <= 1:
        raise DomainError(f"alpha must exceed 1, got {alpha}")

    def mismatch(w):
        return effective_layer_number(gaussian_layer_stack(1.0, w)) - alpha

    guess = alpha / (2 * math.sqrt(math.pi))
    return brentq(mismatch, 0.05, max(2 * guess, 1.0), xtol=1e-12)


def average_2d_density(total: float, sigma_r: float, alpha: float) -> float:
    """N / (4 pi alpha sigma_r^2) in m^-2."""
    if total <= 0 or sigma_r <= 0 or alpha <= 0:
        raise DomainError(f"average_2d_density needs positive inputs, got {total}, {sigma_r}, {alpha}")
    return total / (4.0 * math.pi * alpha * sigma_r**2)


def peak_layer_density(n_peak: float, sigma_r: float) -> float:
    """Peak column density N_peak / (2 pi sigma_r^2) of one layer."""
    if sigma_r <= 0:
        raise DomainError(f"sigma_r must be positive, got {sigma_r}")
    if n_peak < 0:
        raise DomainError(f"n_peak must be non-negative, got {n_peak}")
    return n_peak / (2.0 * math.pi * sigma_r**2)


# --- Config level helpers ---

def initial_distribution(config: ExperimentConfig, heated: bool = False) -> VibrationalDistribution:
    """Thermal populations of ``config``; with ``heated`` the parametric transfer is applied."""
    sim = config.simulation
    dist = boltzmann_occupancy(config.temperature, config.trap.nu_z, sim.v_cut)
    if not heated:
        return dist
    if sim.heated_ground_fraction is not None:
        return parametric_transfer(dist, transfer_for_ground_fraction(dist, sim.heated_ground_fraction))
    return parametric_transfer(dist, sim.heating_transfer)


def config_layer_stack(config: ExperimentConfig) -> LayerStack:
    return gaussian_layer_stack(config.total_molecules, config.simulation.layer_rms_width)


def cloud_state(config: ExperimentConfig) -> CloudState:
    sigma_r = thermal_radial_size(config.temperature, config.trap.nu_r, config.molecule.mass)
    alpha = config.simulation.effective_layers
    if alpha is None:
        alpha = effective_layer_number(config_layer_stack(config))
    logger.debug("cloud: N=%g sigma_r=%.4g m alpha=%.3f", config.total_molecules, sigma_r, alpha)
    return CloudState(total=config.total_molecules, sigma_r=sigma_r, alpha=alpha)

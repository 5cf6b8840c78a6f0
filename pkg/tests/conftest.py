import numpy as np
import pytest

from stereokin.core import ExperimentConfig, cm2_to_m2, per_cm2_to_per_m2
from stereokin.gasmodel import VibrationalDistribution
from stereokin.kinetics import RateConstants

THERMAL_FRACTIONS = (0.748, 0.188, 0.063)
HEATED_FRACTIONS = (0.5, 0.188, 0.312)


@pytest.fixture
def config():
    return ExperimentConfig()


@pytest.fixture
def thermal_dist():
    return VibrationalDistribution.normalized(THERMAL_FRACTIONS)


@pytest.fixture
def heated_dist():
    return VibrationalDistribution.normalized(HEATED_FRACTIONS)


@pytest.fixture
def rates():
    """Loss constants of the order measured at 0.174 D, in m^2/s."""
    return RateConstants(beta2=cm2_to_m2(1.2e-6), beta3=cm2_to_m2(2.0e-7))


@pytest.fixture
def n_tot0():
    return per_cm2_to_per_m2(1.15e7)


@pytest.fixture
def hold_times():
    return np.linspace(0.0, 1.0, 20)

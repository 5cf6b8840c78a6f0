import sys
import os

# Add parent directory to path for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import json
import logging

import numpy as np
from dotenv import load_dotenv

from stereokin.core import Settings, cm2_to_m2, per_cm2_to_per_m2
from stereokin.fitting import monte_carlo_coverage
from stereokin.gasmodel import VibrationalDistribution
from stereokin.kinetics import RateConstants

# Load environment variables (STEREOKIN_THREADS)
load_dotenv()

# Generator values of the study (cm^2/s, cm^-2)
BETA2_CM2 = 1.2e-6
BETA3_CM2 = 2.0e-7
N_TOT0_CM2 = 1.15e7
THERMAL_FRACTIONS = (0.748, 0.188, 0.063)
HEATED_FRACTIONS = (0.5, 0.188, 0.312)
HOLD_TIME_S = 1.0
POINTS = 20

DATA_DIR = os.path.join(os.path.dirname(os.path.dirname(__file__)), 'data')
OUTPUT_FILE = os.path.join(DATA_DIR, "coverage_study.json")


def run_study(n_trials: int, seed: int, noise: float, k: float, output: str = OUTPUT_FILE) -> dict:
    """
    Repeats synthesize -> dual-curve fit and counts how often the k-sigma
    interval of beta2 and beta3 contains the generator value.
    """
    rates = RateConstants(beta2=cm2_to_m2(BETA2_CM2), beta3=cm2_to_m2(BETA3_CM2))
    thermal = VibrationalDistribution.normalized(THERMAL_FRACTIONS)
    heated = VibrationalDistribution.normalized(HEATED_FRACTIONS)
    times = np.linspace(0.0, HOLD_TIME_S, POINTS)

    print(f"Running {n_trials} trials (noise {noise:.1%}, {Settings.from_env().threads} threads)...")
    report = monte_carlo_coverage(
        n_trials, seed, rates, thermal, heated, per_cm2_to_per_m2(N_TOT0_CM2), times, noise, k,
    )
    summary = {
        "trials": report.trials,
        "failures": report.failures,
        "k": report.k,
        "coverage": report.coverage,
        "coverage_of_converged": report.coverage_of_converged,
        "seed": seed,
        "noise_fraction": noise,
    }
    with open(output, "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2)

    for name, value in report.coverage.items():
        print(f"  {name}: {value:.1%} inside {k:g} sigma")
    print(f"Saved summary to {output}")
    return summary


if __name__ == "__main__":
    import argparse

    parser = argparse.ArgumentParser(description='Monte-Carlo coverage of the dual-curve fit')
    parser.add_argument('--trials', type=int, default=200, help='Number of seeded trials')
    parser.add_argument('--seed', type=int, default=2019, help='Master seed')
    parser.add_argument('--noise', type=float, default=0.05, help='Multiplicative noise fraction')
    parser.add_argument('--k', type=float, default=2.0, help='Interval half-width in standard errors')
    parser.add_argument('--output', type=str, default=OUTPUT_FILE)

    args = parser.parse_args()
    logging.basicConfig(level=Settings.from_env().log_level)

    summary = run_study(args.trials, args.seed, args.noise, args.k, args.output)
    if min(summary["coverage"].values()) < 0.9:
        print("\nCoverage below 90%.")
        sys.exit(1)

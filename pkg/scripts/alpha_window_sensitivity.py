import sys
import os

# Add parent directory to path for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import logging

import numpy as np
import pandas as pd
from dotenv import load_dotenv

from stereokin.core import ExperimentConfig, Settings, cm2_to_m2
from stereokin.gasmodel import cloud_state, config_layer_stack, initial_distribution
from stereokin.kinetics import RateConstants, characteristic_time, simulate_layer_resolved

load_dotenv()

BETA2_CM2 = 1.2e-6
BETA3_CM2 = 2.0e-7
WINDOWS = [1.0, 2.0, 3.0, 5.0, 8.0, 12.0]   # characteristic times
SAMPLES = 201

DATA_DIR = os.path.join(os.path.dirname(os.path.dirname(__file__)), 'data')
OUTPUT_FILE = os.path.join(DATA_DIR, "alpha_window_sensitivity.csv")


def scan_windows(windows, output: str = OUTPUT_FILE) -> pd.DataFrame:
    """
    Time-averaged alpha of the default 800 nK cloud for hold windows of
    several characteristic times 1 / (beta3 n_bar).
    """
    config = ExperimentConfig()
    rates = RateConstants(beta2=cm2_to_m2(BETA2_CM2), beta3=cm2_to_m2(BETA3_CM2))
    stack = config_layer_stack(config)
    cloud = cloud_state(config)
    dist = initial_distribution(config)
    tau = characteristic_time(rates, cloud.average_density)
    print(f"alpha(0) = {cloud.alpha:.2f}, characteristic time {tau * 1e3:.1f} ms")

    rows = []
    for w in windows:
        times = np.linspace(0.0, w * tau, SAMPLES)
        sim = simulate_layer_resolved(stack, dist, rates, cloud.sigma_r, times)
        rows.append({
            "window_tau": w,
            "window_s": w * tau,
            "alpha_end": float(sim.alpha[-1]),
            "alpha_time_averaged": sim.time_averaged_alpha,
        })
        print(f"  {w:5.1f} tau -> time-averaged alpha {sim.time_averaged_alpha:.2f}")

    frame = pd.DataFrame(rows)
    frame.to_csv(output, index=False, float_format="%.10g")
    print(f"Saved table to {output}")
    return frame


if __name__ == "__main__":
    logging.basicConfig(level=Settings.from_env().log_level)
    scan_windows(WINDOWS)

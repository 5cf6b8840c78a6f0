"""
Stereokin Data Loader Module

Reads experiment configurations, rate files, loss-curve datasets and momentum
traces. Column headers in user CSV files vary between setups, so they are
normalised onto the standard unit-suffixed names before use.

Key Functions:
    normalize_columns(): maps header variants onto standard names
        - loss curves: t_s, n_cm2, sigma_cm2
        - traces: p_hbark, od
    load_json_model(): parses JSON into a pydantic schema, reporting the
        offending field and line through ConfigError
    load_experiment_config() / load_rates(): config and rates JSON files
    load_time_series(): loss-curve CSV -> TimeSeries (m^-2)
    load_trace(): trace CSV -> MomentumTrace

Expected dataset CSV:
    t_s,n_cm2,sigma_cm2
    0.0,1.15e7,5.7e5
    0.05,1.02e7,5.1e5
    ...

Usage:
    from stereokin.data_loader import load_time_series

    thermal = load_time_series("data/thermal.csv", label="thermal")
"""

import json
import logging
import re
from pathlib import Path
from typing import Dict, List, Tuple, Type, TypeVar

import numpy as np
import pandas as pd
from pydantic import BaseModel, ValidationError

from .bandmap import MomentumTrace
from .core import ExperimentConfig
from .errors import ConfigError, DomainError, InsufficientDataError
from .fitting import TimeSeries
from .kinetics import RateConstants
from .schemas import ExperimentConfigFile, RatesFile

logger = logging.getLogger(__name__)

M = TypeVar("M", bound=BaseModel)

SERIES_ALIASES: Dict[str, List[str]] = {
    "t_s": ["t_s", "t", "time", "time_s", "hold_time_s"],
    "n_cm2": ["n_cm2", "n", "density", "density_cm2", "ntot_cm2", "n_tot_cm2"],
    "sigma_cm2": ["sigma_cm2", "sigma", "sigma_n_cm2", "err", "error", "uncertainty"],
}

TRACE_ALIASES: Dict[str, List[str]] = {
    "p_hbark": ["p_hbark", "p", "momentum", "momentum_hbark"],
    "od": ["od", "optical_depth", "signal"],
}


def normalize_columns(frame: pd.DataFrame, aliases: Dict[str, List[str]]) -> pd.DataFrame:
    """
    Renames header variants to the standard names in ``aliases``.

    Matching ignores case and surrounding whitespace; the first alias present
    wins. Unknown columns are kept unchanged.
    """
    lookup = {str(col).strip().lower(): col for col in frame.columns}
    renames = {}
    for standard, variants in aliases.items():
        for variant in variants:
            if variant.lower() in lookup:
                renames[lookup[variant.lower()]] = standard
                break
    return frame.rename(columns=renames)


def _field_line(text: str, field: str):
    match = re.search(rf'"{re.escape(field)}"\s*:', text)
    return text.count("\n", 0, match.start()) + 1 if match else None


def load_json_model(path, model: Type[M]) -> M:
    path = Path(path)
    if not path.exists():
        raise ConfigError("file not found", path=str(path))
    text = path.read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", path=str(path), line=exc.lineno) from exc
    try:
        return model.model_validate(data)
    except ValidationError as exc:
        err = exc.errors()[0]
        loc = ".".join(str(part) for part in err["loc"])
        leaf = str(err["loc"][-1]) if err["loc"] else None
        raise ConfigError(err["msg"], path=str(path), field=loc or None,
                          line=_field_line(text, leaf) if leaf else None) from exc


def load_experiment_config(path) -> Tuple[ExperimentConfigFile, ExperimentConfig]:
    file_model = load_json_model(path, ExperimentConfigFile)
    try:
        return file_model, file_model.to_config()
    except ValidationError as exc:
        raise ConfigError(str(exc), path=str(path)) from exc


def load_rates(path) -> RateConstants:
    return load_json_model(path, RatesFile).to_rates()


def _read_csv(path) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise ConfigError("file not found", path=str(path))
    try:
        frame = pd.read_csv(path)
    except pd.errors.EmptyDataError as exc:
        raise InsufficientDataError(f"{path}: file is empty") from exc
    except pd.errors.ParserError as exc:
        raise ConfigError(f"cannot parse CSV: {exc}", path=str(path)) from exc
    return frame


def load_time_series(path, label: str = "") -> TimeSeries:
    """Loss-curve CSV in cm^-2 -> TimeSeries in m^-2."""
    frame = normalize_columns(_read_csv(path), SERIES_ALIASES)
    for required in ("t_s", "n_cm2"):
        if required not in frame.columns:
            raise ConfigError(f"missing column (have {list(frame.columns)})", path=str(path), field=required)
    if frame.empty:
        raise InsufficientDataError(f"{path}: no data rows")
    frame = frame.sort_values("t_s")
    sigma = frame["sigma_cm2"].to_numpy(dtype=float) * 1e4 if "sigma_cm2" in frame.columns else None
    try:
        ts = TimeSeries(
            frame["t_s"].to_numpy(dtype=float),
            frame["n_cm2"].to_numpy(dtype=float) * 1e4,
            sigma,
            label or Path(path).stem,
        )
    except DomainError as exc:
        raise ConfigError(str(exc), path=str(path)) from exc
    logger.debug("loaded %d points from %s", len(ts), path)
    return ts


def load_trace(path) -> MomentumTrace:
    frame = normalize_columns(_read_csv(path), TRACE_ALIASES)
    for required in ("p_hbark", "od"):
        if required not in frame.columns:
            raise ConfigError(f"missing column (have {list(frame.columns)})", path=str(path), field=required)
    if frame.empty:
        raise InsufficientDataError(f"{path}: no data rows")
    frame = frame.sort_values("p_hbark")
    return MomentumTrace(frame["p_hbark"].to_numpy(dtype=float), frame["od"].to_numpy(dtype=float))


def fractions_argument(text: str) -> np.ndarray:
    """Parse '0.748,0.188,0.063' into an array."""
    try:
        values = np.array([float(v) for v in text.split(",")])
    except ValueError as exc:
        raise ConfigError(f"cannot parse fractions {text!r}") from exc
    return values

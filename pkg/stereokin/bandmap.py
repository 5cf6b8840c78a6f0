"""
Stereokin Band-Mapping Module

After an adiabatic lattice ramp-down, molecules in axial level v appear in the
v-th Brillouin zone of the momentum distribution along z:

    v = 0  ->  |p| < 1 hbar k
    v = 1  ->  1 < |p| < 2 hbar k
    v = 2  ->  2 < |p| < 3 hbar k

The measured profile is modelled as top-hats of area f(v), convolved with a
Gaussian imaging resolution, scaled by an amplitude and shifted by an offset.

Steps:
    1. read_od_image(): CSV matrix, ODIM binary container or grayscale image
    2. transverse_average(): mean OD within one rms width of the cloud centre
    3. fit_populations(): least-squares fit of model_trace() for f(v)

Image convention: axis 0 is the transverse direction, axis 1 the z momentum.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from PIL import Image
from scipy.integrate import trapezoid
from scipy.optimize import curve_fit
from scipy.special import erf

from .errors import BoundsError, ConfigError, DomainError, InsufficientDataError
from .fitting import LMOptions, levenberg_marquardt

logger = logging.getLogger(__name__)

ODIM_MAGIC = b"ODIM"
ZONES = 3
LOGIT_LIMIT = 30.0
MIN_SPAN = 3.0


@dataclass(frozen=True)
class ODImage:
    data: np.ndarray
    pixel_size: float = 1.0          # m / pixel
    calibration: float = 0.05        # hbar k / pixel along z

    def __post_init__(self):
        a = np.asarray(self.data, dtype=float)
        if a.ndim != 2:
            raise DomainError(f"OD image must be 2D, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise DomainError("OD image has non-finite entries")
        if self.calibration <= 0 or self.pixel_size <= 0:
            raise DomainError("pixel size and calibration must be positive")
        object.__setattr__(self, "data", a)

    @property
    def shape(self):
        return self.data.shape

    def momentum_axis(self) -> np.ndarray:
        cols = self.data.shape[1]
        return pixels_to_momentum(np.arange(cols) - (cols - 1) / 2.0, self.calibration)


@dataclass(frozen=True)
class MomentumTrace:
    momentum: np.ndarray    # hbar k
    od: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.momentum, dtype=float)
        od = np.asarray(self.od, dtype=float)
        if p.shape != od.shape or p.ndim != 1:
            raise DomainError("momentum and od must be 1D arrays of equal length")
        if np.any(np.diff(p) <= 0):
            raise DomainError("momentum axis must be strictly increasing")
        object.__setattr__(self, "momentum", p)
        object.__setattr__(self, "od", od)

    @property
    def area(self) -> float:
        return float(trapezoid(self.od, self.momentum))


@dataclass(frozen=True)
class ZonePopulations:
    fractions: np.ndarray
    uncertainties: np.ndarray
    resolution: float
    amplitude: float = 1.0
    offset: float = 0.0
    center: float = 0.0
    residual_norm: float = 0.0
    converged: bool = True
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        f = np.asarray(self.fractions, dtype=float)
        if np.any(f < 0) or abs(f.sum() - 1.0) > 1e-9:
            raise DomainError(f"zone fractions must be non-negative and sum to 1, got {f}")
        object.__setattr__(self, "fractions", f)
        object.__setattr__(self, "uncertainties", np.asarray(self.uncertainties, dtype=float))


def pixels_to_momentum(pixels, calibration: float):
    """Pixel offsets to momentum in hbar k, given hbar k per pixel."""
    if calibration <= 0:
        raise DomainError(f"calibration must be positive, got {calibration}")
    if np.ndim(pixels):
        return np.asarray(pixels, dtype=float) * calibration
    return float(pixels) * calibration


# --- Image handling ---

def _gaussian(x, amp, x0, width, offset):
    return amp * np.exp(-((x - x0) ** 2) / (2.0 * width**2)) + offset


def _transverse_center(marginal: np.ndarray) -> float:
    rows = np.arange(marginal.size, dtype=float)
    geometric = (marginal.size - 1) / 2.0
    spread = float(np.ptp(marginal))
    if spread <= 1e-12 * max(abs(float(marginal.max())), 1.0):
        return geometric
    base = float(marginal.min())
    weights = marginal - base
    x0 = float(np.sum(rows * weights) / np.sum(weights))
    w0 = max(math.sqrt(float(np.sum(weights * (rows - x0) ** 2) / np.sum(weights))), 1.0)
    try:
        popt, _ = curve_fit(_gaussian, rows, marginal, p0=[spread, x0, w0, base])
    except (RuntimeError, ValueError) as exc:
        logger.debug("transverse Gaussian fit failed (%s); using geometric centre", exc)
        return geometric
    center = float(popt[1])
    if not 0.0 <= center <= marginal.size - 1:
        return geometric
    return center


def transverse_average(image: ODImage, rms_width: float, center: Optional[float] = None) -> MomentumTrace:
    """Mean OD over rows within +-rms_width of the cloud centre (Gaussian fit of the transverse marginal)."""
    if rms_width <= 0:
        raise DomainError(f"rms_width must be positive, got {rms_width}")
    rows = image.shape[0]
    if center is None:
        center = _transverse_center(image.data.sum(axis=1))
    lo, hi = center - rms_width, center + rms_width
    if lo < -0.5 or hi > rows - 0.5:
        raise BoundsError(f"window [{lo:.2f}, {hi:.2f}] exceeds the image rows [0, {rows - 1}]")
    idx = np.arange(rows)
    selected = (idx >= lo) & (idx <= hi)
    if not np.any(selected):
        raise BoundsError("transverse window selects no rows")
    logger.debug("transverse average: centre %.2f, %d rows", center, int(selected.sum()))
    return MomentumTrace(image.momentum_axis(), image.data[selected].mean(axis=0))


def read_od_image(path, pixel_size: float = 1.0, calibration: float = 0.05) -> ODImage:
    """Load a CSV matrix, an ODIM binary container or a grayscale image file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError("file not found", path=str(path))
    suffix = path.suffix.lower()
    if suffix in (".csv", ".txt"):
        try:
            data = pd.read_csv(path, header=None).to_numpy(dtype=float)
        except (ValueError, pd.errors.ParserError) as exc:
            raise ConfigError(f"cannot parse OD matrix: {exc}", path=str(path)) from exc
    elif suffix in (".odim", ".bin"):
        data = _read_od_binary(path)
    else:
        try:
            with Image.open(path) as img:
                data = np.asarray(img.convert("F") if img.mode not in ("I;16", "I", "F") else img, dtype=float)
        except OSError as exc:
            raise ConfigError(f"cannot read image: {exc}", path=str(path)) from exc
    return ODImage(data, pixel_size, calibration)


def _read_od_binary(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    if raw[:4] != ODIM_MAGIC:
        raise ConfigError("missing ODIM magic", path=str(path))
    if len(raw) < 12:
        raise ConfigError("truncated ODIM header", path=str(path))
    rows, cols = (int(v) for v in np.frombuffer(raw, dtype="<u4", count=2, offset=4))
    expected = 12 + 8 * rows * cols
    if len(raw) != expected:
        raise ConfigError(f"ODIM payload has {len(raw)} bytes, expected {expected}", path=str(path))
    return np.frombuffer(raw, dtype="<f8", offset=12).reshape(rows, cols).copy()


def write_od_binary(path, array) -> Path:
    """Write ``array`` as magic, uint32 rows, uint32 cols, float64 row-major (little-endian)."""
    a = np.ascontiguousarray(array, dtype="<f8")
    if a.ndim != 2:
        raise DomainError("OD array must be 2D")
    path = Path(path)
    path.write_bytes(ODIM_MAGIC + np.array(a.shape, dtype="<u4").tobytes() + a.tobytes())
    return path


# --- Model ---

def _zone_intervals(v: int):
    if v == 0:
        return [(-1.0, 1.0)]
    return [(float(v), float(v + 1)), (-float(v + 1), -float(v))]


def model_trace(fractions: Sequence[float], resolution: float, amplitude: float = 1.0, offset: float = 0.0,
                momentum: Optional[Sequence[float]] = None, center: float = 0.0) -> MomentumTrace:
    """Zone top-hats of area f(v) convolved with a unit-area Gaussian of width ``resolution``."""
    if momentum is None:
        momentum = np.linspace(-4.0, 4.0, 801)
    p = np.asarray(momentum, dtype=float)
    return MomentumTrace(p, _model_values(np.asarray(fractions, dtype=float), resolution, amplitude, offset, p, center))


def _model_values(f, sigma, amplitude, offset, p, center):
    if sigma < 0:
        raise DomainError(f"resolution must be non-negative, got {sigma}")
    x = p - center
    total = np.zeros_like(x)
    for v, fv in enumerate(f):
        height = fv / 2.0
        for a, b in _zone_intervals(v):
            if sigma == 0:
                inside = np.where((x > a) & (x < b), 1.0, 0.0)
                inside = np.where((x == a) | (x == b), 0.5, inside)
                total += height * inside
            else:
                s = math.sqrt(2.0) * sigma
                total += 0.5 * height * (erf((x - a) / s) - erf((x - b) / s))
    return amplitude * total + offset


# --- Fit ---

def _softmax(z):
    e = np.exp(z - z.max())
    return e / e.sum()


def zone_window_estimate(trace: MomentumTrace, zones: int = ZONES) -> np.ndarray:
    """Fractions from OD sums inside each zone window, after removing an edge offset."""
    p, od = trace.momentum, trace.od
    outside = np.abs(p) > zones + 0.2
    offset = float(np.median(od[outside])) if np.any(outside) else float(od.min())
    signal = np.clip(od - offset, 0.0, None)
    sums = np.array([
        sum(float(signal[(p >= a) & (p < b)].sum()) for a, b in _zone_intervals(v))
        for v in range(zones)
    ])
    if sums.sum() <= 0:
        return np.full(zones, 1.0 / zones)
    return sums / sums.sum()


def fit_populations(trace: MomentumTrace, resolution: Optional[float] = None,
                    options: Optional[LMOptions] = None) -> ZonePopulations:
    """Least-squares fit of zone fractions, resolution, amplitude, offset and centre.

    With ``resolution`` given the Gaussian width is held fixed.
    """
    p, od = trace.momentum, trace.od
    if p[0] > -MIN_SPAN or p[-1] < MIN_SPAN:
        raise DomainError(f"trace spans [{p[0]:.2f}, {p[-1]:.2f}] hbar k; need at least +-{MIN_SPAN}")
    if p.size < 8:
        raise InsufficientDataError("trace has too few samples to fit")

    start_f = np.clip(zone_window_estimate(trace), 1e-6, None)
    logits0 = np.log(start_f[1:] / start_f[0])
    outside = np.abs(p) > ZONES + 0.2
    offset0 = float(np.median(od[outside])) if np.any(outside) else float(od.min())
    amplitude0 = max(float(trapezoid(od - offset0, p)), 1e-12)
    step = float(np.median(np.diff(p)))
    fixed = resolution is not None
    sigma0 = resolution if fixed else 2.0 * step

    def unpack(x):
        f = _softmax(np.concatenate(([0.0], x[:2])))
        if fixed:
            sigma, rest = resolution, x[2:]
        else:
            sigma, rest = math.exp(x[2]), x[3:]
        amplitude, offset, center = rest
        return f, sigma, amplitude, offset, center

    def residuals(x):
        f, sigma, amplitude, offset, center = unpack(x)
        return _model_values(f, sigma, amplitude, offset, p, center) - od

    x0 = list(logits0)
    names = ["z1", "z2"]
    if not fixed:
        x0.append(math.log(sigma0))
        names.append("log_sigma")
    x0 += [amplitude0, offset0, 0.0]
    names += ["amplitude", "offset", "center"]
    n = len(x0)
    lower = np.full(n, -np.inf)
    upper = np.full(n, np.inf)
    lower[:2], upper[:2] = -LOGIT_LIMIT, LOGIT_LIMIT
    base = options or LMOptions()
    opts = LMOptions(
        max_iter=base.max_iter, gtol=base.gtol, xtol=base.xtol, ftol=base.ftol, tau=base.tau,
        diff_step=base.diff_step, absolute_step=base.absolute_step,
        lower=lower, upper=upper, on_singular="flag",
    )
    result = levenberg_marquardt(residuals, np.array(x0), opts, names)

    f, sigma, amplitude, offset, center = unpack(result.params)
    grad = np.diag(f) - np.outer(f, f)
    G = grad[:, 1:]
    cov_z = result.covariance[:2, :2]
    if np.all(np.isfinite(cov_z)):
        unc = np.sqrt(np.abs(np.diag(G @ cov_z @ G.T)))
    else:
        unc = np.full(f.size, np.inf)
    if not result.converged:
        logger.warning("band-map fit did not converge: %s", result.message)
    return ZonePopulations(
        fractions=f, uncertainties=unc, resolution=float(sigma), amplitude=float(amplitude),
        offset=float(offset), center=float(center),
        residual_norm=float(math.sqrt(result.chi2)), converged=result.converged,
        diagnostics={"iterations": result.iterations, "message": result.message,
                     "condition_number": result.condition_number},
    )

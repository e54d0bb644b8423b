"""Training-set preparation: splits, intensity classes, augmentation,
log targets, and label-density-smoothing sample weights."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.ndimage import convolve1d

from .grid import PatchRecord


@dataclass(frozen=True)
class IntensityThresholds:
    """Rain-rate class boundaries in mm/h."""

    light: float = 0.2
    medium: float = 1.0
    heavy: float = 2.4
    extreme: float = 7.0

    def __post_init__(self):
        if not (0 < self.light < self.medium < self.heavy < self.extreme):
            raise ValueError("thresholds must satisfy 0 < light < medium < heavy < extreme")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.light, self.medium, self.heavy, self.extreme)


DEFAULT_THRESHOLDS = IntensityThresholds()

# Rain/no-rain boundary for the detection stage; aligned with the lightest
# verification threshold so "detected" and "scored as raining" coincide.
RAIN_THRESHOLD = DEFAULT_THRESHOLDS.light


class IntensityClass(enum.IntEnum):
    NONE = 0
    LIGHT = 1
    MEDIUM = 2
    HEAVY = 3
    EXTREME = 4


def classify_intensity(rate: float, t: IntensityThresholds = DEFAULT_THRESHOLDS) -> IntensityClass:
    """Class of a single rate; boundaries belong to the upper class."""
    if not math.isfinite(rate) or rate < 0:
        raise ValueError(f"rate must be finite and >= 0, got {rate}")
    if rate < t.light:
        return IntensityClass.NONE
    if rate < t.medium:
        return IntensityClass.LIGHT
    if rate < t.heavy:
        return IntensityClass.MEDIUM
    if rate < t.extreme:
        return IntensityClass.HEAVY
    return IntensityClass.EXTREME


def classify_intensity_grid(rates: np.ndarray, t: IntensityThresholds = DEFAULT_THRESHOLDS) -> np.ndarray:
    """Vectorized classify_intensity; returns IntensityClass integer codes."""
    rates = np.asarray(rates)
    if rates.size and ((rates < 0).any() or not np.isfinite(rates).all()):
        raise ValueError("rates must be finite and >= 0")
    return np.digitize(rates, t.as_tuple(), right=False)


def class_histogram(
    records: Iterable[PatchRecord], t: IntensityThresholds = DEFAULT_THRESHOLDS
) -> dict[IntensityClass, int]:
    """Counts per intensity class over valid (m=1) cells of all records."""
    counts = np.zeros(len(IntensityClass), dtype=np.int64)
    seen = 0
    for rec in records:
        seen += 1
        codes = classify_intensity_grid(rec.y[rec.m], t)
        counts += np.bincount(codes, minlength=len(IntensityClass))
    if seen == 0:
        raise ValueError("records must be nonempty")
    return {cls: int(counts[cls]) for cls in IntensityClass}


def histogram_table(counts: dict[IntensityClass, int]) -> str:
    """Plain-text class/count/fraction table."""
    total = sum(counts.values())
    lines = ["class count fraction"]
    for cls in IntensityClass:
        n = counts.get(cls, 0)
        frac = n / total if total else 0.0
        lines.append(f"{cls.name.lower()} {n} {frac:.6f}")
    return "\n".join(lines) + "\n"


class AugmentOp(enum.Enum):
    """Geometric augmentations; applied jointly to x, y, m."""

    IDENTITY = "identity"
    HFLIP = "hflip"
    VFLIP = "vflip"
    ROT90 = "rot90"
    ROT180 = "rot180"
    ROT270 = "rot270"

    @property
    def inverse(self) -> "AugmentOp":
        return {
            AugmentOp.ROT90: AugmentOp.ROT270,
            AugmentOp.ROT270: AugmentOp.ROT90,
        }.get(self, self)


def _transform(a: np.ndarray, op: AugmentOp) -> np.ndarray:
    if op is AugmentOp.IDENTITY:
        return a.copy()
    if op is AugmentOp.HFLIP:
        out = np.flip(a, axis=1)
    elif op is AugmentOp.VFLIP:
        out = np.flip(a, axis=0)
    elif op is AugmentOp.ROT90:
        out = np.rot90(a, k=1, axes=(0, 1))
    elif op is AugmentOp.ROT180:
        out = np.rot90(a, k=2, axes=(0, 1))
    elif op is AugmentOp.ROT270:
        out = np.rot90(a, k=3, axes=(0, 1))
    else:  # pragma: no cover
        raise ValueError(f"unknown op {op}")
    return np.ascontiguousarray(out)


def apply_augment(
    x: np.ndarray, y: np.ndarray, m: np.ndarray, op: AugmentOp
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Apply one isometry to the (x, y, m) triple; channel axis untouched."""
    if op in (AugmentOp.ROT90, AugmentOp.ROT270) and y.shape[0] != y.shape[1]:
        raise ValueError(f"{op.value} requires a square patch, got {y.shape}")
    return _transform(x, op), _transform(y, op), _transform(m, op)


def augment(record: PatchRecord, op: AugmentOp) -> PatchRecord:
    x, y, m = apply_augment(record.x, record.y, record.m, op)
    return PatchRecord(
        x=x, y=y, m=m, row=record.row, col=record.col, t_start=record.t_start, t_end=record.t_end
    )


def sample_augment(rng: np.random.Generator) -> AugmentOp:
    """Uniform draw over the six implemented ops."""
    ops = list(AugmentOp)
    return ops[int(rng.integers(len(ops)))]


def split_by_period(
    records: Sequence[PatchRecord], train_years: set[int], validation_years: set[int]
) -> tuple[list[PatchRecord], list[PatchRecord]]:
    """Partition records by t_start year; records in neither set are dropped."""
    overlap = set(train_years) & set(validation_years)
    if overlap:
        raise ValueError(f"train and validation years overlap: {sorted(overlap)}")
    train, val = [], []
    for rec in records:
        if rec.t_start is None:
            raise ValueError("record has no t_start; cannot split by period")
        year = rec.t_start.year
        if year in train_years:
            train.append(rec)
        elif year in validation_years:
            val.append(rec)
    return train, val


def log_transform(rate, rain_threshold: float = RAIN_THRESHOLD):
    """Natural log of the rate; defined only at/above the rain threshold."""
    arr = np.asarray(rate, dtype=np.float64)
    if (arr < rain_threshold).any():
        raise ValueError(f"log target requires rate >= {rain_threshold}")
    out = np.log(arr)
    return float(out) if np.isscalar(rate) or arr.ndim == 0 else out


def inv_log_transform(z):
    arr = np.exp(np.asarray(z, dtype=np.float64))
    return float(arr) if np.isscalar(z) or arr.ndim == 0 else arr


@dataclass(frozen=True)
class LDSConfig:
    """Label-distribution-smoothing hyperparameters (log-rate units)."""

    bin_width: float = 0.1
    kernel: str = "gaussian"
    bandwidth: float = 2.0  # in bins
    clip_weight_max: float = 100.0

    def __post_init__(self):
        if self.bin_width <= 0 or self.bandwidth <= 0 or self.clip_weight_max <= 0:
            raise ValueError("bin_width, bandwidth, clip_weight_max must be positive")
        if self.kernel not in ("gaussian", "triangular"):
            raise ValueError("kernel must be 'gaussian' or 'triangular'")


def lds_kernel_window(kernel: str, bandwidth: float) -> np.ndarray:
    """Symmetric odd-length smoothing window, normalized to sum to 1.

    gaussian: taps exp(-k^2 / (2 bw^2)) over |k| <= ceil(3 bw);
    triangular: taps (1 - |k| / (bw + 1)) over |k| <= ceil(bw).
    """
    if kernel == "gaussian":
        half = int(math.ceil(3 * bandwidth))
        k = np.arange(-half, half + 1, dtype=np.float64)
        w = np.exp(-0.5 * (k / bandwidth) ** 2)
    elif kernel == "triangular":
        half = int(math.ceil(bandwidth))
        k = np.arange(-half, half + 1, dtype=np.float64)
        w = np.maximum(0.0, 1.0 - np.abs(k) / (bandwidth + 1.0))
    else:
        raise ValueError(f"unknown kernel {kernel!r}")
    return w / w.sum()


class LDSWeighter:
    """Inverse smoothed-label-density weights, reusable for batch lookups.

    Fit once on the training population of log-rates; `weights_for` then maps
    any values through the same binning, density, clip, and the population's
    mean-1 rescale factor.
    """

    def __init__(self, values: np.ndarray, cfg: LDSConfig):
        values = np.asarray(values, dtype=np.float64)
        if values.size == 0:
            raise ValueError("values must be nonempty")
        if not np.isfinite(values).all():
            raise ValueError("values must be finite")
        self.cfg = cfg
        self.origin = float(values.min())
        idx = self._bin_of(values)
        counts = np.bincount(idx, minlength=int(idx.max()) + 1).astype(np.float64)
        window = lds_kernel_window(cfg.kernel, cfg.bandwidth)
        self.density = convolve1d(counts, window, mode="constant", cval=0.0)
        raw = np.minimum(1.0 / self.density[idx], cfg.clip_weight_max)
        self.rescale = 1.0 / raw.mean()

    def _bin_of(self, values: np.ndarray) -> np.ndarray:
        idx = np.floor((np.asarray(values, dtype=np.float64) - self.origin) / self.cfg.bin_width)
        return np.clip(idx, 0, None).astype(np.int64)

    def weights_for(self, values: np.ndarray) -> np.ndarray:
        idx = np.minimum(self._bin_of(values), len(self.density) - 1)
        # values in unoccupied gap bins hit zero density; the clip bounds them
        with np.errstate(divide="ignore"):
            raw = np.minimum(1.0 / self.density[idx], self.cfg.clip_weight_max)
        return raw * self.rescale


def lds_weights(valid_log_rates, cfg: LDSConfig = LDSConfig()) -> np.ndarray:
    """Per-sample weights: inverse smoothed density, clipped, mean rescaled to 1."""
    w = LDSWeighter(valid_log_rates, cfg)
    return w.weights_for(np.asarray(valid_log_rates, dtype=np.float64))

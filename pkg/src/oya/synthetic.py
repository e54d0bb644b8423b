"""Procedural (scene, swath) generation with a known channel-to-rain law.

Scenes are smoothed correlated random fields dressed up as brightness
temperatures. The rain rate is an exact deterministic function of two
channels (a longwave window channel plus a secondary one), so no single
channel fully determines rain, the truth is reproducible by a lookup oracle,
and the class balance is heavily dominated by no-rain cells. Ground truth is
served either as a narrow swath strip (training realism) or as a dense,
optionally noise-corrupted field (pretraining surrogate).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timedelta

import numpy as np
from scipy.ndimage import gaussian_filter

from .grid import ChannelDescriptor, GeoScene, GriddedPair, GridSpec, PrecipSwath

BASE_TEMPERATURE = 250.0  # channel offset, Kelvin-like
TEMPERATURE_SPREAD = 25.0  # channel scale
SHARED_MIX = 0.5  # cross-channel coupling through one shared field
SPECKLE_PROB_SCALE = 0.05  # false-rain probability = scale * noise_level
SPECKLE_RATE_RANGE = (0.2, 2.0)  # mm/h for false-rain cells

_CHANNEL_TABLE = [
    ("longwave_window", 10.8, "IR"),
    ("water_vapor_upper", 6.2, "IR"),
    ("visible_red", 0.64, "visible"),
    ("near_ir_snow_ice", 1.6, "near-IR"),
    ("shortwave_window", 3.9, "IR"),
    ("ozone_band", 9.7, "IR"),
    ("dirty_window", 12.0, "IR"),
    ("co2_band", 13.4, "IR"),
    ("water_vapor_mid", 6.9, "IR"),
    ("water_vapor_low", 7.3, "IR"),
    ("cloud_top_phase", 8.7, "IR"),
    ("near_ir_vegetation", 0.86, "near-IR"),
    ("visible_blue", 0.47, "visible"),
    ("cirrus", 1.37, "near-IR"),
    ("cloud_particle_size", 2.2, "near-IR"),
    ("clean_window", 10.3, "IR"),
]


def channel_set(n: int) -> list[ChannelDescriptor]:
    """First n canonical channels; channel 0 is the longwave window."""
    if n < 1:
        raise ValueError("need at least one channel")
    out = [ChannelDescriptor(*_CHANNEL_TABLE[i]) for i in range(min(n, len(_CHANNEL_TABLE)))]
    for i in range(len(_CHANNEL_TABLE), n):
        out.append(ChannelDescriptor(f"band_{i:02d}", 14.0 + i, "IR"))
    return out


@dataclass(frozen=True)
class RainLaw:
    """rate = scale * max(0, temp_threshold - b)^shape, b a two-channel blend."""

    temp_threshold: float = 225.0
    scale: float = 0.05
    shape: float = 1.6
    primary_weight: float = 0.65
    secondary_weight: float = 0.35
    primary_channel: int = 0
    secondary_channel: int = 1

    def blend(self, x: np.ndarray) -> np.ndarray:
        c = x.shape[2]
        p = min(self.primary_channel, c - 1)
        s = min(self.secondary_channel, c - 1)
        return self.primary_weight * x[:, :, p].astype(np.float64) + self.secondary_weight * x[
            :, :, s
        ].astype(np.float64)

    def rate_from_channels(self, x: np.ndarray) -> np.ndarray:
        """Exact dense truth from the channel stack; float64 output."""
        excess = np.maximum(0.0, self.temp_threshold - self.blend(x))
        return self.scale * excess**self.shape


def _default_window() -> GridSpec:
    return GridSpec.from_origin(lat_max=1.44, lon_min=-1.44, rows=64, cols=64)


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 7
    grid: GridSpec = field(default_factory=_default_window)
    channels: int = 8
    correlation_length: float = 6.0  # cells
    rain_law: RainLaw = field(default_factory=RainLaw)
    swath_width: int = 25  # cells, about 125 km at 5 km spacing
    noise_level: float = 0.0
    t_start: datetime = datetime(2021, 1, 1, 0, 0)
    duration_minutes: int = 15

    def __post_init__(self):
        if self.channels < 1:
            raise ValueError("channels must be >= 1")
        if self.swath_width < 1:
            raise ValueError("swath_width must be >= 1")
        if not 0 <= self.noise_level < 1:
            raise ValueError("noise_level must lie in [0, 1)")
        if self.correlation_length <= 0:
            raise ValueError("correlation_length must be positive")


def _smooth_standard_field(rng: np.random.Generator, shape, sigma: float) -> np.ndarray:
    f = gaussian_filter(rng.standard_normal(shape), sigma=sigma, mode="wrap")
    return (f - f.mean()) / f.std()


def _make_scene(cfg: SynthConfig, rng: np.random.Generator) -> GeoScene:
    shape = cfg.grid.shape
    shared = _smooth_standard_field(rng, shape, cfg.correlation_length)
    mix = np.sqrt(1.0 - SHARED_MIX**2)
    stack = []
    for _ in range(cfg.channels):
        private = _smooth_standard_field(rng, shape, cfg.correlation_length)
        f = SHARED_MIX * shared + mix * private
        f = (f - f.mean()) / f.std()
        stack.append(BASE_TEMPERATURE + TEMPERATURE_SPREAD * f)
    data = np.stack(stack, axis=2).astype(np.float32)
    return GeoScene(
        t_start=cfg.t_start,
        t_end=cfg.t_start + timedelta(minutes=cfg.duration_minutes),
        grid=cfg.grid,
        channels=channel_set(cfg.channels),
        data=data,
    )


def _strip_cells(cfg: SynthConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Row/col indices of cells inside a random straight strip."""
    rows, cols = cfg.grid.shape
    angle = rng.uniform(0.0, np.pi)
    r0 = rng.uniform(0, rows)
    c0 = rng.uniform(0, cols)
    rr, cc = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    dist = np.abs((rr - r0) * np.sin(angle) - (cc - c0) * np.cos(angle))
    inside = dist <= cfg.swath_width / 2.0
    return np.nonzero(inside)


def generate_pair(cfg: SynthConfig) -> tuple[GeoScene, PrecipSwath, np.ndarray]:
    """One scene, its swath-sampled truth, and the full dense truth field.

    Swath samples sit exactly on cell centers (one per covered cell) with
    timestamps inside the scene window, so rasterizing the swath reproduces
    the dense truth on the covered cells.
    """
    rng = np.random.default_rng(cfg.seed)
    scene = _make_scene(cfg, rng)
    dense = cfg.rain_law.rate_from_channels(scene.data).astype(np.float32)
    rows_idx, cols_idx = _strip_cells(cfg, rng)
    lat = scene.grid.lat_max - (rows_idx + 0.5) * scene.grid.spacing
    lon = scene.grid.lon_min + (cols_idx + 0.5) * scene.grid.spacing
    span_us = int((scene.t_end - scene.t_start).total_seconds() * 1e6)
    offsets = rng.integers(0, span_us + 1, size=rows_idx.size)
    t0 = np.datetime64(scene.t_start, "us")
    swath = PrecipSwath(
        lat=lat,
        lon=lon,
        time=t0 + offsets.astype("timedelta64[us]"),
        rate=dense[rows_idx, cols_idx].astype(np.float64),
    )
    return scene, swath, dense


def generate_dense_noisy(cfg: SynthConfig) -> GriddedPair:
    """All-valid pair with multiplicative lognormal noise and rain speckle.

    The noise factor exp(s Z - s^2/2) has mean 1; a fraction of dry cells
    additionally receives small false rain rates. noise_level 0 returns the
    dense truth unchanged.
    """
    rng = np.random.default_rng(cfg.seed)
    scene = _make_scene(cfg, rng)
    dense = cfg.rain_law.rate_from_channels(scene.data)
    s = cfg.noise_level
    y = dense.copy()
    if s > 0:
        z = rng.standard_normal(dense.shape)
        y = dense * np.exp(s * z - s * s / 2.0)
        dry = dense <= 0
        speckle = dry & (rng.random(dense.shape) < SPECKLE_PROB_SCALE * s)
        y[speckle] = rng.uniform(*SPECKLE_RATE_RANGE, size=int(speckle.sum()))
    return GriddedPair(
        x=scene.data,
        y=y.astype(np.float32),
        m=np.ones(dense.shape, dtype=bool),
        t_start=scene.t_start,
        t_end=scene.t_end,
    )

"""Equirectangular target grid: scene/swath types, collocation, patching.

Conventions used throughout the package:

- Row 0 is the northernmost row; column 0 is the westernmost column.
- Cell (r, c) spans latitudes [lat_max - (r+1)*spacing, lat_max - r*spacing]
  and longitudes [lon_min + c*spacing, lon_min + (c+1)*spacing); its center
  is (lat_max - (r+0.5)*spacing, lon_min + (c+0.5)*spacing).
- All timestamps are naive datetimes interpreted as UTC.
- Multi-channel imagery is stored as float32 arrays of shape (rows, cols, C);
  ground-truth rates are float32 (rows, cols); validity masks are bool.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime

import numpy as np

DEFAULT_SPACING_DEG = 0.045  # about 5 km at the equator

CHANNEL_CATEGORIES = ("visible", "near-IR", "IR")


class GridExtentError(ValueError):
    """A coordinate falls outside the grid extent."""


class GridMismatchError(ValueError):
    """Two objects that must share a grid do not."""


@dataclass(frozen=True)
class GridSpec:
    """Regular lat/lon grid, north-up and west-first."""

    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float
    spacing: float
    rows: int
    cols: int

    def __post_init__(self):
        if self.spacing <= 0:
            raise ValueError(f"spacing must be positive, got {self.spacing}")
        if self.lat_min >= self.lat_max or self.lon_min >= self.lon_max:
            raise ValueError("extent must have positive span")
        want_rows = round((self.lat_max - self.lat_min) / self.spacing)
        want_cols = round((self.lon_max - self.lon_min) / self.spacing)
        if self.rows != want_rows or self.cols != want_cols:
            raise ValueError(
                f"rows/cols ({self.rows}, {self.cols}) inconsistent with extent "
                f"and spacing (expected {want_rows}, {want_cols})"
            )
        if self.rows < 1 or self.cols < 1:
            raise ValueError("grid must contain at least one cell")

    @classmethod
    def from_extent(cls, lat_min, lat_max, lon_min, lon_max, spacing=DEFAULT_SPACING_DEG):
        rows = round((lat_max - lat_min) / spacing)
        cols = round((lon_max - lon_min) / spacing)
        return cls(lat_min, lat_max, lon_min, lon_max, spacing, rows, cols)

    @classmethod
    def from_origin(cls, lat_max, lon_min, rows, cols, spacing=DEFAULT_SPACING_DEG):
        """Window addressed by its northwest corner and size in cells."""
        return cls(
            lat_min=lat_max - rows * spacing,
            lat_max=lat_max,
            lon_min=lon_min,
            lon_max=lon_min + cols * spacing,
            spacing=spacing,
            rows=rows,
            cols=cols,
        )

    @classmethod
    def global_default(cls):
        """60S-60N, 180W-180E at 0.045 degrees: 2667 x 8000 cells."""
        return cls.from_extent(-60.0, 60.0, -180.0, 180.0, DEFAULT_SPACING_DEG)

    @property
    def shape(self):
        return (self.rows, self.cols)

    def lat_centers(self) -> np.ndarray:
        return self.lat_max - (np.arange(self.rows) + 0.5) * self.spacing

    def lon_centers(self) -> np.ndarray:
        return self.lon_min + (np.arange(self.cols) + 0.5) * self.spacing

    def cell_center(self, row: int, col: int) -> tuple[float, float]:
        if not (0 <= row < self.rows and 0 <= col < self.cols):
            raise GridExtentError(f"cell ({row}, {col}) outside grid {self.shape}")
        lat = self.lat_max - (row + 0.5) * self.spacing
        lon = self.lon_min + (col + 0.5) * self.spacing
        return lat, lon


@dataclass(frozen=True)
class ChannelDescriptor:
    """One spectral channel of a geostationary imager."""

    name: str
    center_wavelength: float  # microns
    category: str  # one of CHANNEL_CATEGORIES

    def __post_init__(self):
        if self.center_wavelength <= 0:
            raise ValueError("center_wavelength must be positive")
        if self.category not in CHANNEL_CATEGORIES:
            raise ValueError(f"category must be one of {CHANNEL_CATEGORIES}")
        if "|" in self.name or "\n" in self.name or not self.name:
            raise ValueError("channel name must be nonempty without '|' or newlines")


@dataclass(eq=False)
class GeoScene:
    """Multi-channel observation on a grid window over a time interval."""

    t_start: datetime
    t_end: datetime
    grid: GridSpec
    channels: list[ChannelDescriptor]
    data: np.ndarray  # (rows, cols, C) float32

    def __post_init__(self):
        if self.t_start > self.t_end:
            raise ValueError("t_start must not exceed t_end")
        names = [c.name for c in self.channels]
        if len(set(names)) != len(names):
            raise ValueError("channel names must be unique")
        self.data = np.asarray(self.data, dtype=np.float32)
        expected = (self.grid.rows, self.grid.cols, len(self.channels))
        if self.data.shape != expected:
            raise ValueError(f"data shape {self.data.shape} != {expected}")
        if not np.isfinite(self.data).all():
            raise ValueError("scene data contains non-finite values")


@dataclass(eq=False)
class PrecipSwath:
    """Sparse ground-truth rain-rate samples (narrow-swath overpasses)."""

    lat: np.ndarray   # (N,) degrees
    lon: np.ndarray   # (N,) degrees
    time: np.ndarray  # (N,) datetime64[us], UTC
    rate: np.ndarray  # (N,) mm/h

    def __post_init__(self):
        self.lat = np.asarray(self.lat, dtype=np.float64)
        self.lon = np.asarray(self.lon, dtype=np.float64)
        self.time = np.asarray(self.time, dtype="datetime64[us]")
        self.rate = np.asarray(self.rate, dtype=np.float64)
        n = self.lat.shape[0]
        if not (self.lon.shape == self.time.shape == self.rate.shape == (n,)):
            raise ValueError("swath arrays must be 1-d and equally sized")
        if n:
            if not np.isfinite(self.rate).all() or (self.rate < 0).any():
                raise ValueError("rates must be finite and non-negative")
            if (self.lat < -90).any() or (self.lat > 90).any():
                raise ValueError("latitudes outside [-90, 90]")
            if (self.lon < -180).any() or (self.lon >= 180).any():
                raise ValueError("longitudes outside [-180, 180)")

    def __len__(self):
        return self.lat.shape[0]

    @classmethod
    def empty(cls):
        return cls(
            lat=np.empty(0),
            lon=np.empty(0),
            time=np.empty(0, dtype="datetime64[us]"),
            rate=np.empty(0),
        )


@dataclass(eq=False)
class GriddedPair:
    """Collocated (x, y, m) training triple on one grid window.

    y is meaningful only where m is True (0 by convention elsewhere).
    t_start/t_end carry the source scene's window for manifests and splits.
    """

    x: np.ndarray  # (rows, cols, C) float32
    y: np.ndarray  # (rows, cols) float32, mm/h
    m: np.ndarray  # (rows, cols) bool
    t_start: datetime | None = None
    t_end: datetime | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float32)
        self.y = np.asarray(self.y, dtype=np.float32)
        self.m = np.asarray(self.m, dtype=bool)
        if self.x.ndim != 3:
            raise ValueError("x must be (rows, cols, C)")
        if self.y.shape != self.x.shape[:2] or self.m.shape != self.x.shape[:2]:
            raise ValueError("x, y, m must agree spatially")
        if (self.y[self.m] < 0).any():
            raise ValueError("y must be non-negative on valid cells")


@dataclass(eq=False)
class PatchRecord:
    """One training example: a patch of a GriddedPair plus its provenance."""

    x: np.ndarray  # (P, P, C) float32
    y: np.ndarray  # (P, P) float32
    m: np.ndarray  # (P, P) bool
    row: int
    col: int
    t_start: datetime | None = None
    t_end: datetime | None = None


def latlon_to_index(lat: float, lon: float, g: GridSpec) -> tuple[int, int]:
    """Map a coordinate to its containing cell.

    Raises GridExtentError for lat outside [lat_min, lat_max] or lon outside
    [lon_min, lon_max).
    """
    if not (g.lat_min <= lat <= g.lat_max):
        raise GridExtentError(f"lat {lat} outside [{g.lat_min}, {g.lat_max}]")
    if not (g.lon_min <= lon < g.lon_max):
        raise GridExtentError(f"lon {lon} outside [{g.lon_min}, {g.lon_max})")
    row = int(np.floor((g.lat_max - lat) / g.spacing))
    col = int(np.floor((lon - g.lon_min) / g.spacing))
    return min(max(row, 0), g.rows - 1), min(max(col, 0), g.cols - 1)


def _index_arrays(lat, lon, g: GridSpec):
    """Vectorized cell indices plus an in-extent mask (no exception path)."""
    lat = np.asarray(lat, dtype=np.float64)
    lon = np.asarray(lon, dtype=np.float64)
    ok = (lat >= g.lat_min) & (lat <= g.lat_max) & (lon >= g.lon_min) & (lon < g.lon_max)
    rows = np.floor((g.lat_max - lat) / g.spacing).astype(np.int64)
    cols = np.floor((lon - g.lon_min) / g.spacing).astype(np.int64)
    np.clip(rows, 0, g.rows - 1, out=rows)
    np.clip(cols, 0, g.cols - 1, out=cols)
    return rows, cols, ok


def rasterize_swath(
    s: PrecipSwath, g: GridSpec, t0: datetime, t1: datetime
) -> tuple[np.ndarray, np.ndarray]:
    """Grid the in-window swath samples: per-cell arithmetic mean and mask.

    Only samples with t0 <= time <= t1 (closed interval) contribute; samples
    outside the grid extent are skipped. Cells holding at least one sample get
    m=1 and y = mean of their samples' rates; all others get m=0, y=0.
    """
    if t0 > t1:
        raise ValueError("t0 must not exceed t1")
    y = np.zeros(g.shape, dtype=np.float64)
    count = np.zeros(g.shape, dtype=np.int64)
    if len(s):
        in_window = (s.time >= np.datetime64(t0)) & (s.time <= np.datetime64(t1))
        rows, cols, in_extent = _index_arrays(s.lat, s.lon, g)
        keep = in_window & in_extent
        np.add.at(y, (rows[keep], cols[keep]), s.rate[keep])
        np.add.at(count, (rows[keep], cols[keep]), 1)
    m = count > 0
    y[m] /= count[m]
    return y.astype(np.float32), m


def collocate(scene: GeoScene, s: PrecipSwath, grid: GridSpec | None = None) -> GriddedPair:
    """Pair a scene with the swath samples inside its time window."""
    if grid is not None and grid != scene.grid:
        raise GridMismatchError("scene grid differs from the requested target grid")
    y, m = rasterize_swath(s, scene.grid, scene.t_start, scene.t_end)
    return GriddedPair(x=scene.data, y=y, m=m, t_start=scene.t_start, t_end=scene.t_end)


def tile_patches(p: GriddedPair, patch: int = 128) -> list[PatchRecord]:
    """Cut non-overlapping patch x patch tiles anchored at (0, 0).

    A tile is emitted iff it contains at least one valid (m=1) cell. Tiles
    that would extend past the pair boundary are not emitted.
    """
    rows, cols = p.y.shape
    if patch < 1:
        raise ValueError("patch must be positive")
    if patch > rows or patch > cols:
        raise ValueError(f"patch {patch} larger than pair {p.y.shape}")
    out = []
    for r0 in range(0, rows - patch + 1, patch):
        for c0 in range(0, cols - patch + 1, patch):
            msub = p.m[r0 : r0 + patch, c0 : c0 + patch]
            if msub.any():
                out.append(
                    PatchRecord(
                        x=np.ascontiguousarray(p.x[r0 : r0 + patch, c0 : c0 + patch]),
                        y=np.ascontiguousarray(p.y[r0 : r0 + patch, c0 : c0 + patch]),
                        m=np.ascontiguousarray(msub),
                        row=r0,
                        col=c0,
                        t_start=p.t_start,
                        t_end=p.t_end,
                    )
                )
    return out

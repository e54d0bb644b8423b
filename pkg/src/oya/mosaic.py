"""Merge per-satellite rate estimates into one quasi-global product.

Each geostationary satellite contributes inside a great-circle disk around
its sub-satellite point; overlap cells take the unweighted arithmetic mean.
Cells no satellite covers are marked no-data (NaN rates, count 0).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grid import GridSpec
from .store import grid_spec_lines, read_field, write_field

DEFAULT_VIEW_RADIUS_DEG = 70.0  # usable field of view, degrees of arc


@dataclass
class SatelliteCoverage:
    satellite_id: str
    sub_longitude: float
    max_view_radius: float
    coverage: np.ndarray  # (rows, cols) bool

    def __post_init__(self):
        self.coverage = np.asarray(self.coverage, dtype=bool)
        if not self.coverage.any():
            raise ValueError(f"satellite {self.satellite_id!r} covers no cells")


@dataclass
class GlobalEstimate:
    grid: GridSpec
    rates: np.ndarray  # (rows, cols) float32, NaN = no data
    contributor_count: np.ndarray  # (rows, cols) int32


def coverage_mask(sub_longitude: float, max_view_radius: float, g: GridSpec) -> np.ndarray:
    """Cells whose center lies within the view radius of (0, sub_longitude).

    Great-circle distance by the haversine formula, in degrees of arc.
    """
    if not 0 < max_view_radius <= 90:
        raise ValueError("max_view_radius must lie in (0, 90] degrees")
    lat = np.deg2rad(g.lat_centers())[:, None]
    dlon = np.deg2rad(g.lon_centers() - sub_longitude)[None, :]
    # haversine with the sub-satellite point at latitude 0
    h = np.sin(lat / 2) ** 2 + np.cos(lat) * np.sin(dlon / 2) ** 2
    dist = 2 * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))
    return dist <= np.deg2rad(max_view_radius)


def satellite_coverage(
    satellite_id: str,
    sub_longitude: float,
    g: GridSpec,
    max_view_radius: float = DEFAULT_VIEW_RADIUS_DEG,
) -> SatelliteCoverage:
    return SatelliteCoverage(
        satellite_id=satellite_id,
        sub_longitude=sub_longitude,
        max_view_radius=max_view_radius,
        coverage=coverage_mask(sub_longitude, max_view_radius, g),
    )


def merge_global(estimates: list[tuple[np.ndarray, np.ndarray]], g: GridSpec) -> GlobalEstimate:
    """Average the covering satellites' rates per cell.

    `estimates` holds (rates, coverage) pairs on the same grid. Rates outside
    a satellite's coverage are ignored.
    """
    if not estimates:
        raise ValueError("merge_global needs at least one estimate")
    total = np.zeros(g.shape, dtype=np.float64)
    count = np.zeros(g.shape, dtype=np.int32)
    for rates, coverage in estimates:
        rates = np.asarray(rates, dtype=np.float64)
        coverage = np.asarray(coverage, dtype=bool)
        if rates.shape != g.shape or coverage.shape != g.shape:
            raise ValueError(f"estimate shape {rates.shape} does not match grid {g.shape}")
        total[coverage] += rates[coverage]
        count += coverage.astype(np.int32)
    rates_out = np.full(g.shape, np.nan, dtype=np.float64)
    covered = count > 0
    rates_out[covered] = total[covered] / count[covered]
    return GlobalEstimate(grid=g, rates=rates_out.astype(np.float32), contributor_count=count)


def write_global_product(
    out_dir, est: GlobalEstimate, satellites: list[str], timestamp: str
) -> Path:
    """Product directory: rates + contributor counts + a manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_field(out / "rates.bin", est.rates)
    write_field(out / "contributors.bin", est.contributor_count.astype(np.float32))
    lines = ["format: oya-global-product", "version: 1", f"timestamp: {timestamp}"]
    lines += grid_spec_lines(est.grid)
    lines += [f"satellite: {s}" for s in satellites]
    (out / "manifest.txt").write_text("\n".join(lines) + "\n")
    return out


def read_global_product(path) -> tuple[GlobalEstimate, list[str], str]:
    path = Path(path)
    kv = {}
    satellites = []
    for line in (path / "manifest.txt").read_text().splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition(":")
        key, value = key.strip(), value.strip()
        if key == "satellite":
            satellites.append(value)
        else:
            kv[key] = value
    from .store import grid_spec_from_keys

    grid = grid_spec_from_keys(kv)
    rates = read_field(path / "rates.bin")
    count = read_field(path / "contributors.bin").astype(np.int32)
    return GlobalEstimate(grid=grid, rates=rates, contributor_count=count), satellites, kv.get("timestamp", "")

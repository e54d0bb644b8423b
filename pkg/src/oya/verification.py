"""Categorical verification against sparse truth: contingency counts,
threshold metrics, per-cell skill maps, and case-study report bundles.

A cell counts toward a threshold T as TP if both truth and prediction are
>= T, FP if only the prediction is, FN if only the truth is, TN otherwise;
invalid (m=0) cells are excluded entirely. Ratios with zero denominators are
reported as NaN, the explicit "undefined" marker, and must be excluded from
any averaging downstream.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import DEFAULT_THRESHOLDS
from .grid import GeoScene, GriddedPair, GridSpec

STANDARD_THRESHOLDS = DEFAULT_THRESHOLDS.as_tuple()

UNDEFINED = math.nan


class ThresholdMismatchError(ValueError):
    """Tables with different threshold sets cannot be merged."""


@dataclass
class ContingencyTable:
    thresholds: tuple[float, ...]
    tp: np.ndarray  # (T,) int64
    fp: np.ndarray
    fn: np.ndarray
    tn: np.ndarray

    def __post_init__(self):
        self.thresholds = tuple(float(t) for t in self.thresholds)
        n = len(self.thresholds)
        for name in ("tp", "fp", "fn", "tn"):
            arr = np.asarray(getattr(self, name), dtype=np.int64)
            if arr.shape != (n,):
                raise ValueError(f"{name} must have one count per threshold")
            if (arr < 0).any():
                raise ValueError(f"{name} counts must be non-negative")
            setattr(self, name, arr)

    @classmethod
    def empty(cls, thresholds) -> "ContingencyTable":
        n = len(tuple(thresholds))
        z = np.zeros(n, dtype=np.int64)
        return cls(tuple(thresholds), z.copy(), z.copy(), z.copy(), z.copy())


@dataclass
class MetricReport:
    thresholds: tuple[float, ...]
    csi: np.ndarray
    pod: np.ndarray
    far: np.ndarray
    bias: np.ndarray


def _check_thresholds(thresholds) -> tuple[float, ...]:
    ts = tuple(float(t) for t in thresholds)
    if not ts:
        raise ValueError("need at least one threshold")
    if any(b <= a for a, b in zip(ts, ts[1:])):
        raise ValueError("thresholds must be strictly increasing")
    return ts


def accumulate(
    m: np.ndarray, y_true: np.ndarray, y_pred: np.ndarray, thresholds=STANDARD_THRESHOLDS
) -> ContingencyTable:
    """Per-threshold contingency counts over valid cells."""
    ts = _check_thresholds(thresholds)
    m = np.asarray(m, dtype=bool)
    if not (m.shape == np.shape(y_true) == np.shape(y_pred)):
        raise ValueError("m, y_true, y_pred shapes must agree")
    t = np.asarray(y_true)[m]
    p = np.asarray(y_pred)[m]
    tp = np.empty(len(ts), dtype=np.int64)
    fp = np.empty_like(tp)
    fn = np.empty_like(tp)
    tn = np.empty_like(tp)
    for i, thr in enumerate(ts):
        a = t >= thr
        b = p >= thr
        tp[i] = int(np.count_nonzero(a & b))
        fp[i] = int(np.count_nonzero(~a & b))
        fn[i] = int(np.count_nonzero(a & ~b))
        tn[i] = int(np.count_nonzero(~a & ~b))
    return ContingencyTable(ts, tp, fp, fn, tn)


def _ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.full(num.shape, UNDEFINED, dtype=np.float64)
    ok = den > 0
    out[ok] = num[ok] / den[ok]
    return out


def metrics(table: ContingencyTable) -> MetricReport:
    """CSI, POD, FAR, Bias per threshold; zero denominators give NaN."""
    tp = table.tp.astype(np.float64)
    fp = table.fp.astype(np.float64)
    fn = table.fn.astype(np.float64)
    return MetricReport(
        thresholds=table.thresholds,
        csi=_ratio(tp, tp + fp + fn),
        pod=_ratio(tp, tp + fn),
        far=_ratio(fp, tp + fp),
        bias=_ratio(tp + fp, tp + fn),
    )


def merge(*tables: ContingencyTable) -> ContingencyTable:
    """Elementwise sum; identical threshold sets required."""
    if not tables:
        raise ValueError("merge needs at least one table")
    ts = tables[0].thresholds
    for t in tables[1:]:
        if t.thresholds != ts:
            raise ThresholdMismatchError(f"threshold sets differ: {t.thresholds} vs {ts}")
    return ContingencyTable(
        ts,
        sum(t.tp for t in tables),
        sum(t.fp for t in tables),
        sum(t.fn for t in tables),
        sum(t.tn for t in tables),
    )


def write_metrics_csv(path, table: ContingencyTable) -> None:
    rep = metrics(table)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["threshold", "CSI", "POD", "FAR", "Bias", "TP", "FP", "FN", "TN"])
        for i, thr in enumerate(table.thresholds):
            w.writerow(
                [
                    repr(thr),
                    repr(float(rep.csi[i])),
                    repr(float(rep.pod[i])),
                    repr(float(rep.far[i])),
                    repr(float(rep.bias[i])),
                    int(table.tp[i]),
                    int(table.fp[i]),
                    int(table.fn[i]),
                    int(table.tn[i]),
                ]
            )


class CellContingency:
    """Streaming per-cell contingency accumulator at one threshold.

    Memory is proportional to the grid, not to the number of pairs; shards
    may be accumulated independently and merged.
    """

    def __init__(self, grid: GridSpec, threshold: float):
        self.grid = grid
        self.threshold = float(threshold)
        shape = grid.shape
        self.tp = np.zeros(shape, dtype=np.int64)
        self.fp = np.zeros(shape, dtype=np.int64)
        self.fn = np.zeros(shape, dtype=np.int64)
        self.tn = np.zeros(shape, dtype=np.int64)

    def update(self, m: np.ndarray, y_true: np.ndarray, y_pred: np.ndarray) -> None:
        if m.shape != self.grid.shape:
            raise ValueError(f"pair shape {m.shape} does not match grid {self.grid.shape}")
        m = np.asarray(m, dtype=bool)
        a = (np.asarray(y_true) >= self.threshold) & m
        b = (np.asarray(y_pred) >= self.threshold) & m
        self.tp += (a & b).astype(np.int64)
        self.fp += (~a & b & m).astype(np.int64)
        self.fn += (a & ~b).astype(np.int64)
        self.tn += (~a & ~b & m).astype(np.int64)

    def merge_with(self, other: "CellContingency") -> None:
        if other.grid != self.grid or other.threshold != self.threshold:
            raise ValueError("shards must share grid and threshold")
        self.tp += other.tp
        self.fp += other.fp
        self.fn += other.fn
        self.tn += other.tn

    def csi(self) -> np.ndarray:
        den = (self.tp + self.fp + self.fn).astype(np.float64)
        out = np.full(self.grid.shape, UNDEFINED, dtype=np.float64)
        ok = den > 0
        out[ok] = self.tp[ok] / den[ok]
        return out


def csi_map(pairs, threshold: float, g: GridSpec) -> np.ndarray:
    """Per-cell CSI over a stream of (m, y_true, y_pred) triples on grid g."""
    acc = CellContingency(g, threshold)
    for m, y_true, y_pred in pairs:
        acc.update(m, y_true, y_pred)
    return acc.csi()


# Rate rendering: fixed lookup from intensity class to RGB.
_RATE_COLORS = np.array(
    [
        [40, 40, 40],     # below light: dry
        [120, 180, 255],  # light
        [30, 90, 230],    # medium
        [250, 160, 30],   # heavy
        [220, 30, 30],    # extreme
    ],
    dtype=np.uint8,
)
_INVALID_COLOR = np.array([0, 0, 0], dtype=np.uint8)
_UNDEFINED_COLOR = np.array([160, 60, 160], dtype=np.uint8)


def render_rate_field(rates: np.ndarray, m: np.ndarray | None = None) -> np.ndarray:
    """RGB image of a rate field using the intensity-class color table."""
    rates = np.asarray(rates, dtype=np.float64)
    codes = np.digitize(rates, STANDARD_THRESHOLDS, right=False)
    img = _RATE_COLORS[codes]
    if m is not None:
        img = img.copy()
        img[~np.asarray(m, dtype=bool)] = _INVALID_COLOR
    return img


def render_csi_field(csi: np.ndarray) -> np.ndarray:
    """Grayscale 0..1 skill map; undefined cells in a distinct color."""
    csi = np.asarray(csi, dtype=np.float64)
    gray = np.clip(np.nan_to_num(csi, nan=0.0), 0.0, 1.0) * 255
    img = np.repeat(gray.astype(np.uint8)[:, :, None], 3, axis=2)
    img[np.isnan(csi)] = _UNDEFINED_COLOR
    return img


def write_ppm(path, rgb: np.ndarray) -> None:
    """Binary portable pixmap (P6), no plotting dependency."""
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError("expected an (H, W, 3) uint8 image")
    h, w, _ = rgb.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(rgb.tobytes())


@dataclass
class CaseReport:
    """Per-event comparison of retrieval products against swath truth."""

    fields: dict[str, np.ndarray]
    tables: dict[str, ContingencyTable]
    reports: dict[str, MetricReport]
    images: dict[str, np.ndarray]


def case_report(
    scene: GeoScene,
    pair: GriddedPair,
    predictions_by_product: dict[str, np.ndarray],
    thresholds=STANDARD_THRESHOLDS,
) -> CaseReport:
    """Score each product on the pair's valid cells and render every field."""
    shape = pair.y.shape
    if scene.data.shape[:2] != shape:
        raise ValueError(f"scene window {scene.data.shape[:2]} does not match pair {shape}")
    fields: dict[str, np.ndarray] = {"truth": pair.y}
    tables: dict[str, ContingencyTable] = {}
    reports: dict[str, MetricReport] = {}
    images: dict[str, np.ndarray] = {"truth": render_rate_field(pair.y, pair.m)}
    for name, pred in predictions_by_product.items():
        pred = np.asarray(pred, dtype=np.float64)
        if pred.shape != shape:
            raise ValueError(f"product {name!r} window {pred.shape} does not match pair {shape}")
        fields[name] = pred.astype(np.float32)
        tables[name] = accumulate(pair.m, pair.y, pred, thresholds)
        reports[name] = metrics(tables[name])
        images[name] = render_rate_field(pred)
    return CaseReport(fields=fields, tables=tables, reports=reports, images=images)

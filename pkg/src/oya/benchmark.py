"""Desk-scale synthetic benchmark: data builders, scoring, transfer study.

The benchmark task is fixed: 8-channel scenes on 64x64 windows, 400
swath-sparse training pairs, 50 dense validation pairs, and a compact
two-stage model (depth 2, width 8) that trains on a laptop CPU in minutes.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from datetime import datetime, timedelta

import numpy as np

from .checkpoint import Checkpoint
from .data import RAIN_THRESHOLD
from .grid import GridSpec, PatchRecord, collocate, tile_patches
from .inference import TwoStagePredictor
from .model import UNetConfig
from .synthetic import SynthConfig, generate_dense_noisy, generate_pair
from .training import TrainConfig, train
from .verification import ContingencyTable, MetricReport, STANDARD_THRESHOLDS, accumulate, merge, metrics

TRAIN_SEED_BASE = 0
VAL_SEED_BASE = 10_000
PRETRAIN_SEED_BASE = 20_000


@dataclass(frozen=True)
class BenchmarkConfig:
    seed: int = 7
    channels: int = 8
    patch: int = 64
    train_pairs: int = 400
    val_pairs: int = 50
    pretrain_pairs: int = 400
    pretrain_noise: float = 0.3
    swath_width: int = 25
    correlation_length: float = 6.0
    model_depth: int = 2
    model_width: int = 8

    def model_cfgs(self, in_channels: int) -> tuple[UNetConfig, UNetConfig]:
        clf = UNetConfig(
            in_channels=in_channels, depth=self.model_depth, base_width=self.model_width, out_channels=2
        )
        reg = replace(clf, out_channels=1)
        return clf, reg


def window_grid(patch: int) -> GridSpec:
    half = patch / 2 * 0.045
    return GridSpec.from_origin(lat_max=half, lon_min=-half, rows=patch, cols=patch)


def _synth_cfg(bench: BenchmarkConfig, seed: int, t_start: datetime, noise: float = 0.0) -> SynthConfig:
    return SynthConfig(
        seed=seed,
        grid=window_grid(bench.patch),
        channels=bench.channels,
        correlation_length=bench.correlation_length,
        swath_width=bench.swath_width,
        noise_level=noise,
        t_start=t_start,
    )


def _parallel_map(fn, n: int, workers: int) -> list:
    """Index-ordered map; results are identical for any worker count."""
    if workers <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, range(n)))


def build_train_records(bench: BenchmarkConfig, workers: int = 1) -> list[PatchRecord]:
    """Swath-sparse training patches, timestamped in 2021."""

    def one(i: int) -> list[PatchRecord]:
        cfg = _synth_cfg(
            bench,
            seed=bench.seed + TRAIN_SEED_BASE + i,
            t_start=datetime(2021, 1, 1) + timedelta(hours=i),
        )
        scene, swath, _ = generate_pair(cfg)
        return tile_patches(collocate(scene, swath), bench.patch)

    records = []
    for tiles in _parallel_map(one, bench.train_pairs, workers):
        records.extend(tiles)
    return records


def build_val_records(bench: BenchmarkConfig, workers: int = 1) -> list[PatchRecord]:
    """Dense validation patches (all-valid truth), timestamped in 2022."""

    def one(i: int) -> PatchRecord:
        cfg = _synth_cfg(
            bench,
            seed=bench.seed + VAL_SEED_BASE + i,
            t_start=datetime(2022, 1, 1) + timedelta(hours=i),
        )
        scene, _, dense = generate_pair(cfg)
        return PatchRecord(
            x=scene.data,
            y=dense,
            m=np.ones(dense.shape, dtype=bool),
            row=0,
            col=0,
            t_start=scene.t_start,
            t_end=scene.t_end,
        )

    return _parallel_map(one, bench.val_pairs, workers)


def build_pretrain_records(bench: BenchmarkConfig, workers: int = 1) -> list[PatchRecord]:
    """Dense noisy pretraining patches, timestamped in 2021."""

    def one(i: int) -> PatchRecord:
        cfg = _synth_cfg(
            bench,
            seed=bench.seed + PRETRAIN_SEED_BASE + i,
            t_start=datetime(2021, 6, 1) + timedelta(hours=i),
            noise=bench.pretrain_noise,
        )
        pair = generate_dense_noisy(cfg)
        return PatchRecord(
            x=pair.x, y=pair.y, m=pair.m, row=0, col=0, t_start=pair.t_start, t_end=pair.t_end
        )

    return _parallel_map(one, bench.pretrain_pairs, workers)


def _center_crop(arr: np.ndarray, crop: int) -> np.ndarray:
    h, w = arr.shape[:2]
    r0 = (h - crop) // 2
    c0 = (w - crop) // 2
    return arr[r0 : r0 + crop, c0 : c0 + crop]


def evaluate_checkpoint(
    ckpt: Checkpoint,
    records,
    thresholds=STANDARD_THRESHOLDS,
    center_crop: int | None = None,
    decision_threshold: float = 0.5,
) -> tuple[ContingencyTable, MetricReport]:
    """Pooled contingency metrics of the two-stage estimate over records."""
    predictor = TwoStagePredictor(ckpt, decision_threshold=decision_threshold)
    tables = []
    for rec in records:
        est = predictor.estimate(rec.x)
        y, m = rec.y, rec.m
        if center_crop is not None:
            est = _center_crop(est, center_crop)
            y = _center_crop(y, center_crop)
            m = _center_crop(m, center_crop)
        tables.append(accumulate(m, y, est, thresholds))
    table = merge(*tables)
    return table, metrics(table)


def always_rain_csi(records, threshold: float = RAIN_THRESHOLD) -> float:
    """Closed-form CSI of the predict-rain-everywhere baseline.

    With rain predicted at every valid cell, FN = 0 and CSI reduces to the
    fraction of valid cells whose true rate reaches the threshold.
    """
    hits = 0
    total = 0
    for rec in records:
        valid = rec.y[rec.m]
        hits += int((valid >= threshold).sum())
        total += valid.size
    if total == 0:
        raise ValueError("no valid cells in records")
    return hits / total


def csi_at(report: MetricReport, threshold: float) -> float:
    return float(report.csi[report.thresholds.index(threshold)])


def make_eval_stopper(records, target_csi: float, threshold: float = RAIN_THRESHOLD):
    """eval_fn for train(): stop at the first step whose CSI meets the target.

    Returns (fn, result) where result["step"] holds the first reaching step.
    """
    result: dict = {"step": None, "csi": []}

    def fn(step: int, ckpt: Checkpoint) -> bool:
        _, rep = evaluate_checkpoint(ckpt, records, thresholds=(threshold,))
        value = csi_at(rep, threshold)
        result["csi"].append((step, value))
        if value >= target_csi:
            result["step"] = step
            return True
        return False

    return fn, result


def first_step_reaching(
    cfg: TrainConfig,
    train_records,
    val_records,
    target_csi: float,
    threshold: float = RAIN_THRESHOLD,
    eval_every: int = 50,
    init: Checkpoint | None = None,
    **train_kwargs,
) -> int | None:
    """Train with periodic validation; first step whose CSI >= target, or None."""
    fn, result = make_eval_stopper(val_records, target_csi, threshold)
    train(cfg, train_records, init=init, eval_every=eval_every, eval_fn=fn, **train_kwargs)
    return result["step"]


def run_benchmark(
    bench: BenchmarkConfig,
    train_cfg: TrainConfig,
    train_records=None,
    val_records=None,
) -> dict:
    """Train the two-stage model on the synthetic task and score it."""
    if train_records is None:
        train_records = build_train_records(bench)
    if val_records is None:
        val_records = build_val_records(bench)
    clf_cfg, reg_cfg = bench.model_cfgs(bench.channels)
    ckpt = train(train_cfg, train_records, classifier_cfg=clf_cfg, regressor_cfg=reg_cfg)
    table, report = evaluate_checkpoint(ckpt, val_records)
    return {
        "checkpoint": ckpt,
        "table": table,
        "report": report,
        "csi_light": csi_at(report, STANDARD_THRESHOLDS[0]),
        "baseline_csi": always_rain_csi(val_records, STANDARD_THRESHOLDS[0]),
    }

"""Ablation harness: one axis at a time, one CSI per intensity class per variant.

Axes and variants mirror the study protocol: channel subset (longwave window
only vs all channels), augmentation on/off, pretraining on/off, training
patch size 32/64/128 with every model scored on a 32x32 center crop, and the
density-reweighting scheme on/off.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

from .benchmark import (
    BenchmarkConfig,
    build_pretrain_records,
    build_train_records,
    build_val_records,
    evaluate_checkpoint,
)
from .checkpoint import Checkpoint
from .training import TrainConfig, train
from .verification import STANDARD_THRESHOLDS

AXES = ("channels", "augmentation", "pretraining", "patch_size", "lds")

_DEFAULT_VARIANTS = {
    "channels": ("longwave_only", "all_channels"),
    "augmentation": ("off", "on"),
    "pretraining": ("off", "on"),
    "patch_size": (32, 64, 128),
    "lds": ("off", "on"),
}

CLASS_NAMES = ("light", "medium", "heavy", "extreme")
EVAL_CROP = 32  # patch-size axis scores everything on this center crop


@dataclass(frozen=True)
class AblationSpec:
    axis: str
    variants: tuple

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"axis must be one of {AXES}")
        if tuple(self.variants) != _DEFAULT_VARIANTS[self.axis]:
            raise ValueError(
                f"variants for {self.axis} must be {_DEFAULT_VARIANTS[self.axis]}"
            )

    @classmethod
    def default(cls, axis: str) -> "AblationSpec":
        return cls(axis=axis, variants=_DEFAULT_VARIANTS[axis])


@dataclass
class AblationRow:
    axis: str
    variant: str
    csi: tuple[float, float, float, float]  # light, medium, heavy, extreme


def _score(ckpt: Checkpoint, val_records, center_crop=None) -> tuple[float, float, float, float]:
    _, report = evaluate_checkpoint(ckpt, val_records, STANDARD_THRESHOLDS, center_crop=center_crop)
    return tuple(float(v) for v in report.csi)


def _train_variant(bench, cfg, records, channel_indices=None, init=None):
    clf_cfg, reg_cfg = bench.model_cfgs(
        len(channel_indices) if channel_indices is not None else bench.channels
    )
    if init is not None:
        return train(cfg, records, init=init)
    return train(
        cfg, records, classifier_cfg=clf_cfg, regressor_cfg=reg_cfg, channel_indices=channel_indices
    )


def run_axis(
    spec: AblationSpec,
    bench: BenchmarkConfig,
    base_cfg: TrainConfig,
    pretrain_steps: int | None = None,
) -> list[AblationRow]:
    """Train and score every variant of one axis on the synthetic task."""
    rows = []
    if spec.axis == "patch_size":
        for patch in spec.variants:
            b = replace(bench, patch=int(patch))
            records = build_train_records(b)
            val = build_val_records(b)
            ckpt = _train_variant(b, base_cfg, records)
            rows.append(AblationRow(spec.axis, str(patch), _score(ckpt, val, center_crop=EVAL_CROP)))
        return rows

    records = build_train_records(bench)
    val = build_val_records(bench)
    for variant in spec.variants:
        if spec.axis == "channels":
            idx = (0,) if variant == "longwave_only" else None
            ckpt = _train_variant(bench, base_cfg, records, channel_indices=idx)
        elif spec.axis == "augmentation":
            ckpt = _train_variant(bench, replace(base_cfg, augment=(variant == "on")), records)
        elif spec.axis == "lds":
            ckpt = _train_variant(bench, replace(base_cfg, lds=(variant == "on")), records)
        elif spec.axis == "pretraining":
            if variant == "on":
                pre_records = build_pretrain_records(bench)
                pre_cfg = replace(
                    base_cfg, stage="pretrain", steps=pretrain_steps or base_cfg.steps
                )
                pre_ckpt = _train_variant(bench, pre_cfg, pre_records)
                ckpt = _train_variant(
                    bench, replace(base_cfg, stage="finetune"), records, init=pre_ckpt
                )
            else:
                ckpt = _train_variant(bench, base_cfg, records)
        else:  # pragma: no cover
            raise AssertionError(spec.axis)
        rows.append(AblationRow(spec.axis, str(variant), _score(ckpt, val)))
    return rows


def run_ablation(
    axes,
    bench: BenchmarkConfig,
    base_cfg: TrainConfig,
    pretrain_steps: int | None = None,
) -> list[AblationRow]:
    rows = []
    for axis in axes:
        rows.extend(run_axis(AblationSpec.default(axis), bench, base_cfg, pretrain_steps))
    return rows


def write_ablation_csv(path, rows: list[AblationRow]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["axis", "variant"] + [f"csi_{c}" for c in CLASS_NAMES])
        for row in rows:
            w.writerow([row.axis, row.variant] + [repr(v) for v in row.csi])

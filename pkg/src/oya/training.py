"""Losses, optimizer, and the pretrain/fine-tune training loop.

Loss semantics: masked sums. Cells without ground truth contribute exactly
zero to both the loss value and its gradient. The detector trains with
class-weighted softmax cross entropy on rain/no-rain labels; the regressor
trains only on raining cells, on log-rate targets, re-weighted by inverse
smoothed label density.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .checkpoint import Checkpoint, models_from_checkpoint, params_from_models
from .data import (
    LDSConfig,
    LDSWeighter,
    RAIN_THRESHOLD,
    apply_augment,
    sample_augment,
)
from .grid import PatchRecord
from .model import UNet, UNetConfig, init_unet

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

STAGES = ("pretrain", "finetune", "scratch")
_STAGE_TAG = {"pretrain": "pretrained", "finetune": "finetuned", "scratch": "scratch"}


class NonFiniteGradientError(RuntimeError):
    """Optimizer step rejected: a gradient contained NaN or inf."""


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    batch_size: int = 8
    steps: int = 2000
    seed: int = 0
    class_weights: tuple[float, float] | None = None  # None = inverse frequency
    decision_threshold: float = 0.5
    stage: str = "scratch"
    augment: bool = True
    lds: bool = True

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.class_weights is not None:
            w0, w1 = self.class_weights
            if w0 <= 0 or w1 <= 0:
                raise ValueError("class_weights must be positive")
        if not 0 < self.decision_threshold < 1:
            raise ValueError("decision_threshold must lie in (0, 1)")
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}")

    def to_file(self, path) -> None:
        cw = "auto" if self.class_weights is None else f"{self.class_weights[0]!r},{self.class_weights[1]!r}"
        lines = [
            f"learning_rate: {self.learning_rate!r}",
            f"weight_decay: {self.weight_decay!r}",
            f"batch_size: {self.batch_size}",
            f"steps: {self.steps}",
            f"seed: {self.seed}",
            f"class_weights: {cw}",
            f"decision_threshold: {self.decision_threshold!r}",
            f"stage: {self.stage}",
            f"augment: {str(self.augment).lower()}",
            f"lds: {str(self.lds).lower()}",
        ]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        kv = {}
        for line in Path(path).read_text().splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition(":")
            kv[key.strip()] = value.strip()
        kwargs = {}
        if "learning_rate" in kv:
            kwargs["learning_rate"] = float(kv["learning_rate"])
        if "weight_decay" in kv:
            kwargs["weight_decay"] = float(kv["weight_decay"])
        if "batch_size" in kv:
            kwargs["batch_size"] = int(kv["batch_size"])
        if "steps" in kv:
            kwargs["steps"] = int(kv["steps"])
        if "seed" in kv:
            kwargs["seed"] = int(kv["seed"])
        if "class_weights" in kv:
            raw = kv["class_weights"]
            kwargs["class_weights"] = None if raw == "auto" else tuple(float(v) for v in raw.split(","))
        if "decision_threshold" in kv:
            kwargs["decision_threshold"] = float(kv["decision_threshold"])
        if "stage" in kv:
            kwargs["stage"] = kv["stage"]
        if "augment" in kv:
            kwargs["augment"] = kv["augment"] == "true"
        if "lds" in kv:
            kwargs["lds"] = kv["lds"] == "true"
        return cls(**kwargs)


@dataclass
class LossReport:
    step: int
    classifier_loss: float
    regression_loss: float
    examples_seen: int


def masked_l2_loss(m: torch.Tensor, y: torch.Tensor, y_pred: torch.Tensor) -> torch.Tensor:
    """Sum of squared errors over valid cells; invalid cells contribute 0."""
    if not (m.shape == y.shape == y_pred.shape):
        raise ValueError("m, y, y_pred shapes must agree")
    return ((y_pred - y) ** 2 * m.to(y_pred.dtype)).sum()


def weighted_ce_loss(
    m: torch.Tensor,
    rain_labels: torch.Tensor,
    logits: torch.Tensor,
    class_weights: tuple[float, float],
) -> torch.Tensor:
    """Class-weighted softmax cross entropy summed over valid cells.

    logits carry the class pair on the last axis: (..., 0) no-rain, (..., 1) rain.
    """
    if logits.shape[-1] != 2 or logits.shape[:-1] != rain_labels.shape or m.shape != rain_labels.shape:
        raise ValueError("shape mismatch between mask, labels, and logits")
    logp = logits - torch.logsumexp(logits, dim=-1, keepdim=True)
    picked = torch.gather(logp, -1, rain_labels.long().unsqueeze(-1)).squeeze(-1)
    w = torch.as_tensor(class_weights, dtype=logits.dtype)[rain_labels.long()]
    return (-picked * w * m.to(logits.dtype)).sum()


def lds_weighted_regression_loss(
    m_rain: torch.Tensor,
    z: torch.Tensor,
    z_pred: torch.Tensor,
    sample_weights: torch.Tensor,
) -> torch.Tensor:
    """Weighted squared error on log-rate targets over raining cells only.

    sample_weights is flat, aligned to the raining cells in row-major order.
    """
    if not (m_rain.shape == z.shape == z_pred.shape):
        raise ValueError("m_rain, z, z_pred shapes must agree")
    n = int(m_rain.sum())
    sample_weights = torch.as_tensor(sample_weights, dtype=z_pred.dtype)
    if sample_weights.ndim != 1 or sample_weights.shape[0] != n:
        raise ValueError(f"expected {n} sample weights aligned to raining cells, got {tuple(sample_weights.shape)}")
    diff2 = (z_pred - z) ** 2
    return (diff2[m_rain] * sample_weights).sum()


def init_optimizer_state(params: dict[str, torch.Tensor]) -> dict:
    return {
        "step": 0,
        "m": {k: torch.zeros_like(v) for k, v in params.items()},
        "v": {k: torch.zeros_like(v) for k, v in params.items()},
    }


def optimizer_step(
    params: dict[str, torch.Tensor],
    grads: dict[str, torch.Tensor],
    state: dict,
    cfg: TrainConfig,
) -> tuple[dict[str, torch.Tensor], dict]:
    """One decoupled-weight-decay adaptive-moment update; pure function.

    theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)
    with bias-corrected moments and a constant learning rate.
    """
    for name, p in params.items():
        g = grads.get(name)
        if g is None or g.shape != p.shape:
            raise ValueError(f"gradient missing or mis-shaped for {name}")
        if not torch.isfinite(g).all():
            raise NonFiniteGradientError(f"non-finite gradient in {name}")
    t = state["step"] + 1
    bc1 = 1.0 - ADAM_BETA1**t
    bc2 = 1.0 - ADAM_BETA2**t
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        m = ADAM_BETA1 * state["m"][name] + (1.0 - ADAM_BETA1) * g
        v = ADAM_BETA2 * state["v"][name] + (1.0 - ADAM_BETA2) * g * g
        new_params[name] = p - cfg.learning_rate * (
            (m / bc1) / ((v / bc2).sqrt() + ADAM_EPS) + cfg.weight_decay * p
        )
        new_m[name] = m
        new_v[name] = v
    return new_params, {"step": t, "m": new_m, "v": new_v}


def compute_channel_stats(records: Sequence[PatchRecord]) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean/std over every cell of the given records."""
    total = None
    total_sq = None
    count = 0
    for rec in records:
        x = rec.x.astype(np.float64)
        s = x.sum(axis=(0, 1))
        s2 = (x * x).sum(axis=(0, 1))
        total = s if total is None else total + s
        total_sq = s2 if total_sq is None else total_sq + s2
        count += x.shape[0] * x.shape[1]
    if count == 0:
        raise ValueError("no records to compute statistics from")
    mean = total / count
    var = np.maximum(total_sq / count - mean**2, 0.0)
    return mean, np.sqrt(var) + 1e-6


def derive_class_weights(
    records: Sequence[PatchRecord], rain_threshold: float = RAIN_THRESHOLD
) -> tuple[float, float]:
    """Inverse class frequency over valid cells, renormalized to mean 1."""
    n_rain = 0
    n_total = 0
    for rec in records:
        valid = rec.y[rec.m]
        n_rain += int((valid >= rain_threshold).sum())
        n_total += valid.size
    n_norain = n_total - n_rain
    if n_rain == 0 or n_norain == 0:
        return (1.0, 1.0)
    inv = np.array([n_total / n_norain, n_total / n_rain])
    inv /= inv.mean()
    return (float(inv[0]), float(inv[1]))


def _select_channels(x: np.ndarray, channel_indices) -> np.ndarray:
    if channel_indices is None:
        return x
    return x[:, :, list(channel_indices)]


def _build_batch(
    records: Sequence[PatchRecord],
    idxs: np.ndarray,
    rng: np.random.Generator,
    do_augment: bool,
    channel_indices,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    xs, ys, ms = [], [], []
    for i in idxs:
        rec = records[int(i)]
        x, y, m = rec.x, rec.y, rec.m
        if do_augment:
            x, y, m = apply_augment(x, y, m, sample_augment(rng))
        xs.append(_select_channels(x, channel_indices))
        ys.append(y)
        ms.append(m)
    return np.stack(xs), np.stack(ys), np.stack(ms)


def _write_loss_log(path, reports: list[LossReport]) -> None:
    path = Path(path)
    new = not path.exists()
    with open(path, "a", newline="") as f:
        w = csv.writer(f)
        if new:
            w.writerow(["step", "classifier_loss", "regression_loss", "examples_seen"])
        for r in reports:
            w.writerow([r.step, repr(r.classifier_loss), repr(r.regression_loss), r.examples_seen])


def make_checkpoint(
    classifier: UNet,
    regressor: UNet,
    stage_tag: str,
    mean: np.ndarray,
    std: np.ndarray,
    channel_indices,
    metadata: dict,
) -> Checkpoint:
    return Checkpoint(
        stage=stage_tag,
        classifier_cfg=classifier.cfg,
        regressor_cfg=regressor.cfg,
        channel_mean=mean,
        channel_std=std,
        channel_indices=tuple(channel_indices) if channel_indices is not None else None,
        params=params_from_models(classifier, regressor),
        metadata=metadata,
    )


def train(
    cfg: TrainConfig,
    records: Sequence[PatchRecord],
    *,
    classifier_cfg: UNetConfig | None = None,
    regressor_cfg: UNetConfig | None = None,
    init: Checkpoint | None = None,
    lds_cfg: LDSConfig | None = None,
    channel_indices: Sequence[int] | None = None,
    rain_threshold: float = RAIN_THRESHOLD,
    loss_log=None,
    eval_every: int = 0,
    eval_fn: Callable[[int, Checkpoint], bool] | None = None,
) -> Checkpoint:
    """Run the two-network loop: sample, augment, losses, backprop, update.

    Fully reproducible for a given config. For stage="finetune" an init
    checkpoint is required; its configs, channel subset, and normalization
    statistics are carried over, so the fine-tune stage touches nothing from
    the pretraining data except the loaded parameters.
    """
    if not records:
        raise ValueError("no training records")
    if cfg.stage == "finetune":
        if init is None:
            raise ValueError("stage=finetune requires an init checkpoint")
        if init.stage != "pretrained":
            raise ValueError(f"fine-tuning expects a pretrained checkpoint, got stage {init.stage!r}")
        if classifier_cfg is not None and classifier_cfg != init.classifier_cfg:
            raise ValueError("classifier config mismatch with init checkpoint")
        if regressor_cfg is not None and regressor_cfg != init.regressor_cfg:
            raise ValueError("regressor config mismatch with init checkpoint")
        if channel_indices is not None and init.channel_indices != tuple(channel_indices):
            raise ValueError("channel subset mismatch with init checkpoint")
        channel_indices = init.channel_indices

    if init is not None:
        classifier, regressor = models_from_checkpoint(init)
    else:
        n_channels = len(channel_indices) if channel_indices is not None else records[0].x.shape[2]
        if classifier_cfg is None:
            classifier_cfg = UNetConfig(in_channels=n_channels, out_channels=2)
        if regressor_cfg is None:
            regressor_cfg = UNetConfig(in_channels=n_channels, out_channels=1)
        if classifier_cfg.in_channels != n_channels or regressor_cfg.in_channels != n_channels:
            raise ValueError(f"model configs must take {n_channels} input channels")
        if classifier_cfg.out_channels != 2 or regressor_cfg.out_channels != 1:
            raise ValueError("classifier needs 2 output channels and regressor 1")
        classifier = init_unet(classifier_cfg, seed=cfg.seed)
        regressor = init_unet(regressor_cfg, seed=cfg.seed + 1)

    if cfg.stage == "finetune":
        mean, std = init.channel_mean, init.channel_std
    else:
        subset = [replace(r, x=_select_channels(r.x, channel_indices)) for r in records]
        mean, std = compute_channel_stats(subset)

    class_weights = cfg.class_weights or derive_class_weights(records, rain_threshold)

    weighter = None
    if cfg.lds:
        rain_rates = np.concatenate(
            [rec.y[rec.m & (rec.y >= rain_threshold)] for rec in records]
        )
        if rain_rates.size:
            weighter = LDSWeighter(np.log(rain_rates.astype(np.float64)), lds_cfg or LDSConfig())

    classifier.train()
    regressor.train()
    params = {f"classifier.{k}": v for k, v in classifier.named_parameters()}
    params.update({f"regressor.{k}": v for k, v in regressor.named_parameters()})
    state = init_optimizer_state(params)

    rng = np.random.default_rng(cfg.seed)
    mean32 = mean.astype(np.float32)
    std32 = std.astype(np.float32)
    reports: list[LossReport] = []
    steps_run = 0

    def snapshot() -> Checkpoint:
        return make_checkpoint(
            classifier,
            regressor,
            _STAGE_TAG[cfg.stage],
            mean,
            std,
            channel_indices,
            metadata={
                "seed": cfg.seed,
                "steps": cfg.steps,
                "steps_run": steps_run,
                "stage": cfg.stage,
                "source": init.stage if init is not None else "fresh",
            },
        )

    if eval_every > 0 and eval_fn is not None and eval_fn(0, snapshot()):
        out = snapshot()
        if loss_log is not None:
            _write_loss_log(loss_log, reports)
        return out

    for step in range(1, cfg.steps + 1):
        idxs = rng.integers(0, len(records), size=cfg.batch_size)
        x_np, y_np, m_np = _build_batch(records, idxs, rng, cfg.augment, channel_indices)
        x_np = (x_np - mean32) / std32

        x = torch.from_numpy(np.ascontiguousarray(x_np.transpose(0, 3, 1, 2)))
        y = torch.from_numpy(y_np)
        m = torch.from_numpy(m_np)
        labels = (y >= rain_threshold).long()
        m_rain = m & (y >= rain_threshold)

        logits = classifier(x).permute(0, 2, 3, 1)
        loss_c = weighted_ce_loss(m, labels, logits, class_weights)

        z_pred = regressor(x).squeeze(1)
        rain_np = m_rain.numpy()
        z_np = np.where(rain_np, np.log(np.maximum(y_np, rain_threshold, dtype=np.float32)), 0.0)
        z = torch.from_numpy(z_np)
        n_rain = int(rain_np.sum())
        if weighter is not None and n_rain:
            w_np = weighter.weights_for(z_np[rain_np].astype(np.float64)).astype(np.float32)
        else:
            w_np = np.ones(n_rain, dtype=np.float32)
        loss_r = lds_weighted_regression_loss(m_rain, z, z_pred, torch.from_numpy(w_np))

        n_valid = int(m_np.sum())
        total = loss_c / max(1, n_valid) + loss_r / max(1, n_rain)
        total.backward()
        grads = {
            k: (p.grad.detach() if p.grad is not None else torch.zeros_like(p))
            for k, p in params.items()
        }
        detached = {k: p.detach() for k, p in params.items()}
        new_params, state = optimizer_step(detached, grads, state, cfg)
        with torch.no_grad():
            for k, p in params.items():
                p.copy_(new_params[k])
                p.grad = None

        steps_run = step
        reports.append(
            LossReport(
                step=step,
                classifier_loss=float(loss_c.detach()) / max(1, n_valid),
                regression_loss=float(loss_r.detach()) / max(1, n_rain),
                examples_seen=step * cfg.batch_size,
            )
        )
        if eval_every > 0 and eval_fn is not None and step % eval_every == 0:
            if eval_fn(step, snapshot()):
                break

    if loss_log is not None:
        _write_loss_log(loss_log, reports)
    return snapshot()

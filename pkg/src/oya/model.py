"""Encoder-decoder networks and the two-stage detection x regression combiner.

The retrieval runs two fully convolutional U-Nets over the same input stack:
a detector producing (no-rain, rain) logits and a regressor producing the
log rain rate. Their outputs are combined multiplicatively: cells the
detector rejects are forced to exactly zero rate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .data import inv_log_transform


@dataclass(frozen=True)
class UNetConfig:
    """Architecture description: width doubles per level down, halves up."""

    in_channels: int
    depth: int = 4
    base_width: int = 32
    out_channels: int = 1

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be positive")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.base_width < 1:
            raise ValueError("base_width must be >= 1")

    def to_dict(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "depth": self.depth,
            "base_width": self.base_width,
            "out_channels": self.out_channels,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "UNetConfig":
        return cls(
            in_channels=int(d["in_channels"]),
            depth=int(d["depth"]),
            base_width=int(d["base_width"]),
            out_channels=int(d["out_channels"]),
        )


def _double_conv(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, kernel_size=3, padding=1),
        nn.ReLU(inplace=True),
        nn.Conv2d(cout, cout, kernel_size=3, padding=1),
        nn.ReLU(inplace=True),
    )


class UNet(nn.Module):
    """Encoder/decoder with concatenation skips and 2x down/up sampling."""

    def __init__(self, cfg: UNetConfig):
        super().__init__()
        self.cfg = cfg
        widths = [cfg.base_width * 2**k for k in range(cfg.depth + 1)]
        self.enc = nn.ModuleList()
        cin = cfg.in_channels
        for w in widths[:-1]:
            self.enc.append(_double_conv(cin, w))
            cin = w
        self.pool = nn.MaxPool2d(2)
        self.bottleneck = _double_conv(widths[-2], widths[-1])
        self.up = nn.ModuleList()
        self.dec = nn.ModuleList()
        for w in reversed(widths[:-1]):
            self.up.append(nn.ConvTranspose2d(w * 2, w, kernel_size=2, stride=2))
            self.dec.append(_double_conv(w * 2, w))
        self.head = nn.Conv2d(widths[0], cfg.out_channels, kernel_size=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        self.check_input(x)
        skips = []
        for block in self.enc:
            x = block(x)
            skips.append(x)
            x = self.pool(x)
        x = self.bottleneck(x)
        for up, block, skip in zip(self.up, self.dec, reversed(skips)):
            x = up(x)
            x = block(torch.cat([skip, x], dim=1))
        return self.head(x)

    def check_input(self, x: torch.Tensor) -> None:
        if x.ndim != 4:
            raise ValueError(f"expected NCHW input, got shape {tuple(x.shape)}")
        n, c, h, w = x.shape
        if c != self.cfg.in_channels:
            raise ValueError(f"expected {self.cfg.in_channels} input channels, got {c}")
        div = 2**self.cfg.depth
        if h % div or w % div:
            raise ValueError(f"spatial size {(h, w)} not divisible by 2^depth = {div}")


def init_unet(cfg: UNetConfig, seed: int, dtype: torch.dtype = torch.float32) -> UNet:
    """Build a UNet with reproducible initialization."""
    torch.manual_seed(seed)
    return UNet(cfg).to(dtype)


def unet_forward(model: UNet, x_hwc: np.ndarray) -> np.ndarray:
    """Inference on one (H, W, C) array; returns (H, W, out_channels)."""
    x = np.asarray(x_hwc)
    if x.ndim != 3:
        raise ValueError(f"expected (H, W, C) input, got {x.shape}")
    dtype = next(model.parameters()).dtype
    t = torch.from_numpy(np.ascontiguousarray(x)).to(dtype).permute(2, 0, 1).unsqueeze(0)
    model.check_input(t)
    was_training = model.training
    model.eval()
    with torch.no_grad():
        out = model(t)
    if was_training:
        model.train()
    out_np = out.squeeze(0).permute(1, 2, 0).numpy().astype(np.float64)
    if not np.isfinite(out_np).all():
        raise FloatingPointError("network produced non-finite output")
    return out_np


def classifier_prob(logits: np.ndarray) -> np.ndarray:
    """Rain probability from (H, W, 2) logits; channel 1 is the rain class.

    Uses the max-subtracted two-term softmax so large logits cannot overflow.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 3 or logits.shape[2] != 2:
        raise ValueError(f"expected (H, W, 2) logits, got {logits.shape}")
    mx = logits.max(axis=2, keepdims=True)
    e = np.exp(logits - mx)
    return e[:, :, 1] / (e[:, :, 0] + e[:, :, 1])


@dataclass(eq=False)
class TwoStageOutput:
    """Both network heads plus the combined estimate for one input."""

    rain_prob: np.ndarray  # (H, W) in [0, 1]
    log_rate: np.ndarray   # (H, W)
    estimate: np.ndarray   # (H, W) mm/h, >= 0


def two_stage_output(
    rain_prob: np.ndarray,
    log_rate: np.ndarray,
    decision_threshold: float = 0.5,
    soft: bool = False,
) -> TwoStageOutput:
    return TwoStageOutput(
        rain_prob=np.asarray(rain_prob, dtype=np.float64),
        log_rate=np.asarray(log_rate, dtype=np.float64),
        estimate=combine(rain_prob, log_rate, decision_threshold=decision_threshold, soft=soft),
    )


def combine(
    rain_prob: np.ndarray,
    log_rate: np.ndarray,
    decision_threshold: float = 0.5,
    soft: bool = False,
) -> np.ndarray:
    """Multiply detection by the back-transformed rate estimate.

    Default is a hard 0/1 detection at `decision_threshold`; `soft=True`
    multiplies by the raw probability instead (study variant; shrinks rates).
    """
    rain_prob = np.asarray(rain_prob, dtype=np.float64)
    log_rate = np.asarray(log_rate, dtype=np.float64)
    if rain_prob.shape != log_rate.shape:
        raise ValueError("rain_prob and log_rate must have the same shape")
    if (rain_prob < 0).any() or (rain_prob > 1).any():
        raise ValueError("rain_prob must lie in [0, 1]")
    if not 0 < decision_threshold < 1:
        raise ValueError("decision_threshold must lie in (0, 1)")
    factor = rain_prob if soft else (rain_prob >= decision_threshold).astype(np.float64)
    return factor * inv_log_transform(log_rate)

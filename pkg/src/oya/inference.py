"""Checkpoint-driven prediction: normalize, run both networks, combine."""

from __future__ import annotations

import numpy as np

from .checkpoint import Checkpoint, models_from_checkpoint
from .model import TwoStageOutput, classifier_prob, combine, two_stage_output, unet_forward


def _prepare_input(ckpt: Checkpoint, x_hwc: np.ndarray) -> np.ndarray:
    x = np.asarray(x_hwc, dtype=np.float32)
    if ckpt.channel_indices is not None:
        x = x[:, :, list(ckpt.channel_indices)]
    if x.shape[2] != ckpt.channel_mean.shape[0]:
        raise ValueError(
            f"input has {x.shape[2]} channels, checkpoint expects {ckpt.channel_mean.shape[0]}"
        )
    return (x - ckpt.channel_mean.astype(np.float32)) / ckpt.channel_std.astype(np.float32)


def predict_fields(ckpt: Checkpoint, x_hwc: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rain probability and log-rate maps for one (H, W, C) input."""
    x = _prepare_input(ckpt, x_hwc)
    classifier, regressor = models_from_checkpoint(ckpt)
    logits = unet_forward(classifier, x)
    log_rate = unet_forward(regressor, x)[:, :, 0]
    return classifier_prob(logits), log_rate


def predict_estimate(
    ckpt: Checkpoint,
    x_hwc: np.ndarray,
    decision_threshold: float = 0.5,
    soft: bool = False,
) -> np.ndarray:
    """Final rate estimate in mm/h for one (H, W, C) input."""
    rain_prob, log_rate = predict_fields(ckpt, x_hwc)
    return combine(rain_prob, log_rate, decision_threshold=decision_threshold, soft=soft)


class TwoStagePredictor:
    """Reusable predictor that keeps the rebuilt networks warm."""

    def __init__(self, ckpt: Checkpoint, decision_threshold: float = 0.5, soft: bool = False):
        self.ckpt = ckpt
        self.decision_threshold = decision_threshold
        self.soft = soft
        self.classifier, self.regressor = models_from_checkpoint(ckpt)

    def fields(self, x_hwc: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x = _prepare_input(self.ckpt, x_hwc)
        logits = unet_forward(self.classifier, x)
        log_rate = unet_forward(self.regressor, x)[:, :, 0]
        return classifier_prob(logits), log_rate

    def estimate(self, x_hwc: np.ndarray) -> np.ndarray:
        rain_prob, log_rate = self.fields(x_hwc)
        return combine(rain_prob, log_rate, decision_threshold=self.decision_threshold, soft=self.soft)

    def predict(self, x_hwc: np.ndarray) -> TwoStageOutput:
        rain_prob, log_rate = self.fields(x_hwc)
        return two_stage_output(
            rain_prob, log_rate, decision_threshold=self.decision_threshold, soft=self.soft
        )

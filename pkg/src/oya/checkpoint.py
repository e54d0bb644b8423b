"""Two-stage model checkpoints: manifest + named float32 arrays, one file.

Layout: 8-byte magic, u64 little-endian manifest length, JSON manifest
(sorted keys), then the raw little-endian float32 array bytes in manifest
order. Serialization is fully deterministic: save -> load -> save is
byte-identical, and metadata carries no wall-clock state.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .model import UNet, UNetConfig, init_unet

MAGIC = b"OYACKPT1"

STAGE_TAGS = ("scratch", "pretrained", "finetuned")


class CheckpointError(ValueError):
    """Checkpoint file malformed or inconsistent with its declared config."""


@dataclass
class Checkpoint:
    """Parameters and data statistics of one detector/regressor pair."""

    stage: str
    classifier_cfg: UNetConfig
    regressor_cfg: UNetConfig
    channel_mean: np.ndarray  # (C,) float64, training-split statistics
    channel_std: np.ndarray   # (C,) float64
    channel_indices: tuple[int, ...] | None  # subset of store channels, None = all
    params: dict[str, np.ndarray]  # "classifier.*" / "regressor.*", float32
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.stage not in STAGE_TAGS:
            raise ValueError(f"stage must be one of {STAGE_TAGS}")
        self.channel_mean = np.asarray(self.channel_mean, dtype=np.float64)
        self.channel_std = np.asarray(self.channel_std, dtype=np.float64)


def _expected_shapes(cfg: UNetConfig, prefix: str) -> dict[str, tuple[int, ...]]:
    ref = UNet(cfg)
    return {f"{prefix}.{k}": tuple(v.shape) for k, v in ref.state_dict().items()}


def _validate_shapes(ckpt: Checkpoint) -> None:
    expected = _expected_shapes(ckpt.classifier_cfg, "classifier")
    expected.update(_expected_shapes(ckpt.regressor_cfg, "regressor"))
    got = {k: tuple(v.shape) for k, v in ckpt.params.items()}
    if got != expected:
        missing = sorted(set(expected) - set(got))
        extra = sorted(set(got) - set(expected))
        bad = sorted(k for k in set(got) & set(expected) if got[k] != expected[k])
        raise CheckpointError(
            f"parameter set inconsistent with configs: missing={missing[:3]} "
            f"extra={extra[:3]} shape-mismatch={bad[:3]}"
        )


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    _validate_shapes(ckpt)
    names = sorted(ckpt.params)
    arrays_meta = []
    blobs = []
    offset = 0
    for name in names:
        arr = np.ascontiguousarray(ckpt.params[name], dtype="<f4")
        blob = arr.tobytes()
        arrays_meta.append(
            {"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(blob)}
        )
        blobs.append(blob)
        offset += len(blob)
    manifest = {
        "format_version": 1,
        "stage": ckpt.stage,
        "classifier": ckpt.classifier_cfg.to_dict(),
        "regressor": ckpt.regressor_cfg.to_dict(),
        "channel_mean": [float(v) for v in ckpt.channel_mean],
        "channel_std": [float(v) for v in ckpt.channel_std],
        "channel_indices": list(ckpt.channel_indices) if ckpt.channel_indices is not None else None,
        "metadata": ckpt.metadata,
        "arrays": arrays_meta,
    }
    head = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(head)))
        f.write(head)
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path) -> Checkpoint:
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    (head_len,) = struct.unpack_from("<Q", buf, 8)
    head = json.loads(buf[16 : 16 + head_len].decode())
    if head.get("format_version") != 1:
        raise CheckpointError(f"{path}: unsupported format_version")
    base = 16 + head_len
    params = {}
    for meta in head["arrays"]:
        start = base + meta["offset"]
        arr = np.frombuffer(buf, dtype="<f4", count=meta["nbytes"] // 4, offset=start)
        params[meta["name"]] = arr.reshape(meta["shape"]).copy()
    idx = head["channel_indices"]
    ckpt = Checkpoint(
        stage=head["stage"],
        classifier_cfg=UNetConfig.from_dict(head["classifier"]),
        regressor_cfg=UNetConfig.from_dict(head["regressor"]),
        channel_mean=np.array(head["channel_mean"], dtype=np.float64),
        channel_std=np.array(head["channel_std"], dtype=np.float64),
        channel_indices=tuple(idx) if idx is not None else None,
        params=params,
        metadata=head["metadata"],
    )
    _validate_shapes(ckpt)
    return ckpt


def params_from_models(classifier: UNet, regressor: UNet) -> dict[str, np.ndarray]:
    out = {}
    for prefix, model in (("classifier", classifier), ("regressor", regressor)):
        for k, v in model.state_dict().items():
            out[f"{prefix}.{k}"] = v.detach().cpu().numpy().astype(np.float32)
    return out


def models_from_checkpoint(ckpt: Checkpoint, dtype: torch.dtype = torch.float32) -> tuple[UNet, UNet]:
    """Rebuild both networks and load the stored parameters."""
    models = []
    for prefix, cfg in (("classifier", ckpt.classifier_cfg), ("regressor", ckpt.regressor_cfg)):
        model = init_unet(cfg, seed=0, dtype=dtype)
        state = {
            k[len(prefix) + 1 :]: torch.from_numpy(v.copy()).to(dtype)
            for k, v in ckpt.params.items()
            if k.startswith(prefix + ".")
        }
        model.load_state_dict(state)
        model.eval()
        models.append(model)
    return models[0], models[1]

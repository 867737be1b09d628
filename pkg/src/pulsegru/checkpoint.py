"""Checkpoint container: a numpy ``.npz`` archive with a JSON header.

Entries::

    __meta__        uint8 bytes of a UTF-8 JSON object (format, config,
                    epoch, best_val_loss, optimizer hyperparameters, extra)
    param/<name>    learnable arrays, little-endian f32
    buffer/<name>   batch-norm running statistics
    adam_m/<name>   Adam first moments (optional)
    adam_v/<name>   Adam second moments (optional)

Zip member timestamps are fixed by numpy, so equal contents give equal bytes.
"""
from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import ModelConfig, ModelParams
from .optim import Adam

FORMAT = "pulsegru-checkpoint"
FORMAT_VERSION = 1
_STORE = "<f4"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: ModelParams
    epoch: int
    best_val_loss: float
    optimizer: Adam | None = None
    extra: dict = field(default_factory=dict)

    @property
    def config(self) -> ModelConfig:
        return self.params.config


def to_bytes(ckpt: Checkpoint) -> bytes:
    meta = {
        "format": FORMAT,
        "version": FORMAT_VERSION,
        "config": ckpt.config.to_json(),
        "epoch": int(ckpt.epoch),
        "best_val_loss": float(ckpt.best_val_loss),
        "optimizer": None if ckpt.optimizer is None
        else {**ckpt.optimizer.hyper(), "t": ckpt.optimizer.t},
        "extra": ckpt.extra,
    }
    arrays = {"__meta__": np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)}
    for k, v in sorted(ckpt.params.weights.items()):
        arrays[f"param/{k}"] = v.astype(_STORE)
    for k, v in sorted(ckpt.params.buffers.items()):
        arrays[f"buffer/{k}"] = v.astype(_STORE)
    if ckpt.optimizer is not None:
        for k in sorted(ckpt.optimizer.m):
            arrays[f"adam_m/{k}"] = ckpt.optimizer.m[k].astype(_STORE)
            arrays[f"adam_v/{k}"] = ckpt.optimizer.v[k].astype(_STORE)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    return buf.getvalue()


def save(ckpt: Checkpoint, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(to_bytes(ckpt))
    return path


def from_bytes(data: bytes, expected: ModelConfig | None = None, dtype=np.float32) -> Checkpoint:
    try:
        z = np.load(io.BytesIO(data), allow_pickle=False)
        meta = json.loads(bytes(z["__meta__"]).decode())
    except Exception as e:  # corrupt zip, missing header, bad JSON
        raise CheckpointError(f"unreadable checkpoint: {e}") from e
    if meta.get("format") != FORMAT or meta.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format {meta.get('format')!r} "
                              f"v{meta.get('version')}")
    cfg = ModelConfig.from_json(meta["config"])
    if expected is not None and cfg != expected:
        raise CheckpointError(f"checkpoint config {cfg} does not match expected {expected}")
    files = set(z.files)
    weights = {k[6:]: z[k].astype(dtype) for k in files if k.startswith("param/")}
    buffers = {k[7:]: z[k].astype(dtype) for k in files if k.startswith("buffer/")}
    params = ModelParams(cfg, weights, buffers)
    try:
        params.check()
    except ValueError as e:
        raise CheckpointError(str(e)) from e
    opt = None
    if meta["optimizer"] is not None:
        o = meta["optimizer"]
        opt = Adam(lr=o["lr"], beta1=o["beta1"], beta2=o["beta2"], eps=o["eps"], t=o["t"])
        for k in weights:
            if f"adam_m/{k}" in files:
                opt.m[k] = z[f"adam_m/{k}"].astype(dtype)
                opt.v[k] = z[f"adam_v/{k}"].astype(dtype)
    return Checkpoint(params=params, epoch=meta["epoch"], best_val_loss=meta["best_val_loss"],
                      optimizer=opt, extra=meta.get("extra", {}))


def load(path: str | Path, expected: ModelConfig | None = None, dtype=np.float32) -> Checkpoint:
    return from_bytes(Path(path).read_bytes(), expected, dtype)

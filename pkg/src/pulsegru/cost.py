"""Closed-form parameter and FLOP accounting for the network."""
from __future__ import annotations

from dataclasses import dataclass

from .model import ModelConfig

FLOPS_PER_MAC = 2
FLOPS_PER_NONLINEARITY = 4
FLOPS_PER_BN_ELEMENT = 4

METHODOLOGY = (
    "2 FLOPs per multiply-accumulate; 4 FLOPs per gate nonlinearity element "
    "(3H per step per direction); 4 FLOPs per batch-norm element; one segment "
    "of L samples, inference only, biases and pooling not counted"
)


def count_params(cfg: ModelConfig) -> int:
    """Learnable parameters (batch-norm running statistics excluded)."""
    d, F, H, C = cfg.d, cfg.conv_filters, cfg.gru_hidden, cfg.features
    conv = cfg.kernel * d * F + F
    gru_dir = 3 * H * (F + H) + 2 * 3 * H
    bn = 2 * C
    dense = cfg.classes * C + cfg.classes
    return conv + 2 * gru_dir + bn + dense


@dataclass(frozen=True)
class FlopEstimate:
    conv: int
    gru: int
    batchnorm: int
    dense: int
    methodology: str = METHODOLOGY

    @property
    def total(self) -> int:
        return self.conv + self.gru + self.batchnorm + self.dense

    @property
    def gru_share(self) -> float:
        return self.gru / self.total


def estimate_flops(cfg: ModelConfig, L: int | None = None) -> FlopEstimate:
    L = cfg.L if L is None else L
    d, F, H, C = cfg.d, cfg.conv_filters, cfg.gru_hidden, cfg.features
    conv_macs = L * F * cfg.kernel * d
    gru_step = FLOPS_PER_MAC * 3 * H * (F + H) + FLOPS_PER_NONLINEARITY * 3 * H
    dense_macs = L * C * cfg.classes
    return FlopEstimate(
        conv=FLOPS_PER_MAC * conv_macs,
        gru=2 * L * gru_step,
        batchnorm=FLOPS_PER_BN_ELEMENT * L * C,
        dense=FLOPS_PER_MAC * dense_macs,
    )

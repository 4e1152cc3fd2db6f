"""Per-GPU memory for MoE training: weights under ZeRO stages, activations under parallel modes.

Weights assume Adam with fp16/bf16 weights and gradients plus fp32 momentum,
variance and master copy, i.e. 16 bytes per parameter before sharding.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .config import ModelSpec, ParallelSpec


class ZeroStage(str, Enum):
    BASELINE = "Baseline"
    O1 = "O1"
    O2 = "O2"
    O3 = "O3"


class ActivationMode(str, Enum):
    NO_PARALLEL = "NoParallel"
    PP_TP_EP = "PpTpEp"
    PP_TP_EP_SP = "PpTpEpSp"
    SELECTIVE_RECOMPUTE = "SelectiveRecompute"
    FULL_RECOMPUTE = "FullRecompute"


@dataclass(frozen=True)
class MemoryBreakdown:
    psi1: float
    psi2: float
    act: float

    @property
    def total(self) -> float:
        return self.psi1 + self.psi2 + self.act

    def as_dict(self) -> dict:
        return {"psi1": self.psi1, "psi2": self.psi2, "act": self.act, "total": self.total}


def _bytes_per_param(stage: ZeroStage, d: int) -> float:
    if stage is ZeroStage.BASELINE:
        return 16.0
    if stage is ZeroStage.O1:
        return 4 + 12 / d
    if stage is ZeroStage.O2:
        return 2 + 14 / d
    return 16 / d


def weight_memory(model: ModelSpec, parallel: ParallelSpec, stage: ZeroStage) -> tuple[float, float]:
    """Non-MoE and MoE weight bytes per GPU.

    Non-MoE weights shard over pipeline and tensor groups; MoE weights also
    shard over the expert group. ZeRO stages divide their sharded share by d.
    """
    coef = _bytes_per_param(ZeroStage(stage), parallel.d)
    pt = parallel.p * parallel.t
    return coef * model.P1 / pt, coef * model.P2 / (pt * parallel.e)


def activation_memory(model: ModelSpec, parallel: ParallelSpec, mode: ActivationMode) -> float:
    b, s, h, a, l, k = model.b, model.s, model.h, model.a, model.l, model.k
    t, e = parallel.t, parallel.e
    bshl = b * s * h * l
    if bshl == 0:
        return 0.0
    attn = 5 * a * s / h
    mode = ActivationMode(mode)
    if mode is ActivationMode.NO_PARALLEL:
        return bshl * (13 + 21 * k + attn)
    if mode is ActivationMode.PP_TP_EP:
        return bshl * (5 + 5 * k / e + (8 + 16 * k / e) / t + attn)
    if mode is ActivationMode.PP_TP_EP_SP:
        return bshl * ((13 + 21 * k / e) / t + attn)
    if mode is ActivationMode.SELECTIVE_RECOMPUTE:
        return bshl * (13 + 21 * k / e) / t
    return 2 * bshl / t


def total_memory(model: ModelSpec, parallel: ParallelSpec, stage: ZeroStage,
                 mode: ActivationMode) -> MemoryBreakdown:
    psi1, psi2 = weight_memory(model, parallel, stage)
    return MemoryBreakdown(psi1, psi2, activation_memory(model, parallel, mode))

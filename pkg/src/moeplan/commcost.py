"""Closed-form times for the AllToAll decompositions.

All volumes are bytes and bandwidths bytes/s in decimal units; times are
seconds. ``volume`` is always the full per-rank AllToAll payload ``I``;
per-call efficiencies are looked up at the volume each call actually moves.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .config import CurveSet, EfficiencyCurve, ModelSpec, lookup_efficiency


class StrategyLevel(str, Enum):
    BASELINE = "Baseline"
    O1 = "O1"
    O2 = "O2"
    O3 = "O3"


@dataclass(frozen=True)
class OverheadModel:
    """Fixed per-call latencies in seconds.

    ``alpha_comm`` is charged once per communication call and ``alpha_copy``
    once per device-local copy. ``alpha_baseline`` is extra fixed latency of
    the unoptimised monolithic AllToAll path only.
    """

    alpha_comm: float = 0.0
    alpha_copy: float = 0.0
    alpha_baseline: float = 0.0

    def __post_init__(self):
        if min(self.alpha_comm, self.alpha_copy, self.alpha_baseline) < 0:
            raise ValueError("overheads must be non-negative")


NO_OVERHEAD = OverheadModel()


@dataclass(frozen=True)
class ChunkTiming:
    """Per-chunk times for one pipelined AllToAll of ``volume`` bytes in ``n`` chunks."""

    aa: float
    ag: float
    d2d: float
    n: int
    volume: float

    def as_dict(self) -> dict:
        return {"aa_ms": self.aa * 1e3, "ag_ms": self.ag * 1e3, "d2d_ms": self.d2d * 1e3,
                "n": self.n, "volume_bytes": self.volume}


def traffic_volume(model: ModelSpec) -> int:
    return model.b * model.s * model.h * model.BPE


def chunk_alltoall_time(volume, n, t, e, bandwidth, curve: EfficiencyCurve,
                        overhead: OverheadModel = NO_OVERHEAD) -> float:
    """Inter-node AllToAll of one chunk after the tensor-parallel drop."""
    per_call = volume / (n * t)
    if e == 1 or per_call == 0:
        return overhead.alpha_comm
    r1 = lookup_efficiency(curve, per_call)
    return overhead.alpha_comm + per_call * (e - 1) / e / (bandwidth * r1)


def chunk_allgather_time(volume, n, t, bandwidth, curve: EfficiencyCurve,
                         overhead: OverheadModel = NO_OVERHEAD) -> float:
    """Intra-node AllGather that undoes the drop for one chunk."""
    per_call = volume / n
    if t == 1 or per_call == 0:
        return overhead.alpha_comm
    r2 = lookup_efficiency(curve, per_call)
    return overhead.alpha_comm + per_call * (t - 1) / t / (bandwidth * r2)


def chunk_d2d_time(volume, n, bandwidth, curve: EfficiencyCurve,
                   overhead: OverheadModel = NO_OVERHEAD) -> float:
    """Device-local copy that moves one gathered chunk to its final offsets."""
    per_call = volume / n
    if per_call == 0:
        return overhead.alpha_copy
    r3 = lookup_efficiency(curve, per_call)
    return overhead.alpha_copy + per_call / (bandwidth * r3)


def baseline_time(volume, e, bandwidth, curve: EfficiencyCurve,
                  overhead: OverheadModel = NO_OVERHEAD) -> float:
    """Unoptimised AllToAll: every tensor-parallel rank sends the full payload."""
    fixed = overhead.alpha_comm + overhead.alpha_baseline
    if e == 1 or volume == 0:
        return fixed
    r1 = lookup_efficiency(curve, volume)
    return fixed + volume * (e - 1) / e / (bandwidth * r1)


def o1_time(volume, t, e, B1, B2, curves: CurveSet, overhead: OverheadModel = NO_OVERHEAD) -> float:
    """Drop + AllToAll + AllGather executed back to back."""
    if t == 1:
        return baseline_time(volume, e, B1, curves.alltoall, overhead)
    return (chunk_alltoall_time(volume, 1, t, e, B1, curves.alltoall, overhead)
            + chunk_allgather_time(volume, 1, t, B2, curves.allgather, overhead))


def chunk_timing(volume, n, t, e, B1, B2, B3, curves: CurveSet,
                 overhead: OverheadModel = NO_OVERHEAD, o3: bool = False) -> ChunkTiming:
    return ChunkTiming(
        aa=chunk_alltoall_time(volume, n, t, e, B1, curves.alltoall, overhead),
        ag=chunk_allgather_time(volume, n, t, B2, curves.gather_curve(o3), overhead),
        d2d=chunk_d2d_time(volume, n, B3, curves.copy_curve(o3), overhead),
        n=n,
        volume=volume,
    )

"""Strategy selection across O1/O2/O3 and the resulting step-level performance report."""
from __future__ import annotations

from dataclasses import dataclass, field

from .chunkopt import DEFAULT_MAX_CHUNKS, o2_search, o3_search
from .commcost import NO_OVERHEAD, OverheadModel, StrategyLevel, baseline_time, o1_time, traffic_volume
from .config import ClusterSpec, CurveSet, ModelSpec, ParallelSpec

# lower rank wins ties: fewer moving parts
_TIE_RANK = {StrategyLevel.BASELINE: 0, StrategyLevel.O1: 1, StrategyLevel.O2: 2, StrategyLevel.O3: 3}


@dataclass(frozen=True)
class StrategyDecision:
    level: StrategyLevel
    n: int
    t_pred: float
    alternatives: tuple[tuple[StrategyLevel, float, int], ...] = field(default=())

    def as_dict(self) -> dict:
        return {
            "level": self.level.value,
            "n": self.n,
            "t_pred_ms": self.t_pred * 1e3,
            "alternatives": [{"level": lv.value, "t_pred_ms": tp * 1e3, "n": n}
                             for lv, tp, n in self.alternatives],
        }


@dataclass(frozen=True)
class PerfReport:
    step_latency: float
    throughput: float
    mfu: float

    def as_dict(self) -> dict:
        return {"step_latency_ms": self.step_latency * 1e3, "throughput_tps": self.throughput,
                "mfu": self.mfu}


def select_strategy(model: ModelSpec, parallel: ParallelSpec, cluster: ClusterSpec, curves: CurveSet,
                    overhead: OverheadModel = NO_OVERHEAD, max_chunks: int = DEFAULT_MAX_CHUNKS,
                    volume: float | None = None) -> StrategyDecision:
    """Pick the fastest applicable AllToAll strategy.

    Without a tensor-parallel group (or with a single expert group) there is
    nothing to drop or pipeline and only the baseline is scored.
    """
    if volume is None:
        volume = traffic_volume(model)
    t, e = parallel.t, parallel.e
    if t == 1 or e == 1:
        tb = baseline_time(volume, e, cluster.B1, curves.alltoall, overhead)
        return StrategyDecision(StrategyLevel.BASELINE, 1, tb, ((StrategyLevel.BASELINE, tb, 1),))

    alts = [(StrategyLevel.O1, o1_time(volume, t, e, cluster.B1, cluster.B2, curves, overhead), 1)]
    r2 = o2_search(model, parallel, cluster, curves, overhead, max_chunks, volume)
    alts.append((StrategyLevel.O2, r2.t_pred, r2.n_opt))
    r3 = o3_search(model, parallel, cluster, curves, overhead, max_chunks, volume)
    alts.append((StrategyLevel.O3, r3.t_pred, r3.n_opt))
    level, t_pred, n = min(alts, key=lambda a: (a[1], _TIE_RANK[a[0]]))
    return StrategyDecision(level, n, t_pred, tuple(alts))


def estimate_performance(decision: StrategyDecision, model: ModelSpec, parallel: ParallelSpec,
                         cluster: ClusterSpec, non_comm_time: float,
                         moe_layer_count: int | None = None) -> PerfReport:
    """Step latency, token throughput and MFU for one training step.

    Each MoE layer runs two AllToAll phases (dispatch and combine).
    ``non_comm_time`` is everything else in the step, supplied by the caller.
    MFU counts 6 FLOPs per activated parameter per token.
    """
    if non_comm_time < 0:
        raise ValueError("non_comm_time must be non-negative")
    layers = model.l if moe_layer_count is None else moe_layer_count
    step = non_comm_time + 2 * layers * decision.t_pred
    if step <= 0:
        raise ValueError("step latency must be positive")
    tokens = model.b * model.s * parallel.d
    throughput = tokens / step
    active_params = model.P1 + model.k * model.P2 / model.experts
    mfu = 6 * active_params * tokens / (step * cluster.peak_flops * cluster.total_gpus)
    if mfu > 1:
        raise ValueError(f"implied MFU {mfu:.3f} exceeds 1; non_comm_time is too small for this model")
    return PerfReport(step, throughput, mfu)

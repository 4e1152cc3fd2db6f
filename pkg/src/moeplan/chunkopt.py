"""Optimal chunk-count search for the pipelined AllToAll strategies."""
from __future__ import annotations

from dataclasses import dataclass

from . import kernels
from .commcost import NO_OVERHEAD, ChunkTiming, OverheadModel, chunk_timing, traffic_volume
from .config import ClusterSpec, CurveSet, ModelSpec, ParallelSpec

DEFAULT_MAX_CHUNKS = 64


class StrategyInapplicable(ValueError):
    pass


@dataclass(frozen=True)
class ChunkSearchResult:
    n_opt: int
    t_pred: float
    per_chunk: ChunkTiming
    feasible: bool
    scores: tuple[tuple[int, float], ...] = ()


def pipeline_time(aa: float, ag: float, d2d: float, n: int, overlap_d2d: bool) -> float:
    """Completion time of ``n`` identical chunks; scalar form of the scoring kernel."""
    return kernels.score_chunks([aa], [ag], [d2d], [n], overlap_d2d)[0]


def candidate_chunks(volume: float, t: int, s: int, curves: CurveSet,
                     max_chunks: int = DEFAULT_MAX_CHUNKS) -> tuple[list[int], bool]:
    """Chunk counts the search may score, and whether N=1 itself passed the gate.

    N grows from 1 until a chunk's AllToAll or AllGather share drops below
    the curve's ``i_minimal``, a chunk would hold no token, or ``max_chunks``.
    N=1 is always returned so callers have at least one candidate.
    """
    gate_aa = curves.alltoall.i_minimal
    gate_ag = curves.allgather.i_minimal

    def passes(n):
        return volume / (n * t) >= gate_aa and volume / n >= gate_ag

    ns = [1]
    feasible = passes(1)
    if feasible:
        n = 2
        while n <= min(max_chunks, max(s, 1)) and passes(n):
            ns.append(n)
            n += 1
    return ns, feasible


def _search(model, parallel, cluster, curves, overhead, o3, max_chunks, volume=None):
    t, e = parallel.t, parallel.e
    if t < 2 or e < 2:
        raise StrategyInapplicable(f"pipelined strategies need t >= 2 and e >= 2 (got t={t}, e={e})")
    if volume is None:
        volume = traffic_volume(model)
    if volume <= 0:
        raise ValueError("traffic volume must be positive")
    tokens = model.s if model is not None else max_chunks
    ns, feasible = candidate_chunks(volume, t, tokens, curves, max_chunks)
    timings = [chunk_timing(volume, n, t, e, cluster.B1, cluster.B2, cluster.B3, curves, overhead, o3)
               for n in ns]
    scores = kernels.score_chunks([x.aa for x in timings], [x.ag for x in timings],
                                  [x.d2d for x in timings], ns, o3)
    best = 0
    for i, score in enumerate(scores):
        if score < scores[best]:
            best = i
    return ChunkSearchResult(ns[best], scores[best], timings[best], feasible,
                             tuple(zip(ns, scores)))


def o2_search(model: ModelSpec, parallel: ParallelSpec, cluster: ClusterSpec, curves: CurveSet,
              overhead: OverheadModel = NO_OVERHEAD, max_chunks: int = DEFAULT_MAX_CHUNKS,
              volume: float | None = None) -> ChunkSearchResult:
    """Best chunk count when AllToAll overlaps AllGather and copies trail each gather.

    ``volume`` overrides the payload derived from ``model``.
    """
    return _search(model, parallel, cluster, curves, overhead, False, max_chunks, volume)


def o3_search(model: ModelSpec, parallel: ParallelSpec, cluster: ClusterSpec, curves: CurveSet,
              overhead: OverheadModel = NO_OVERHEAD, max_chunks: int = DEFAULT_MAX_CHUNKS,
              volume: float | None = None) -> ChunkSearchResult:
    """Like :func:`o2_search` but copies run on their own stream, using the O3 curves."""
    return _search(model, parallel, cluster, curves, overhead, True, max_chunks, volume)


def asymptotic_speedup(t: int, e: int, B1: float, B2: float, r1: float, r2: float) -> float:
    """Limit of T_O3 / T_baseline as the chunk count grows without bound.

    With many chunks the pipeline is bound by the serial AllGathers, so the
    ratio is the AllGather cost over the baseline AllToAll cost.
    """
    if t < 2 or e < 2:
        raise StrategyInapplicable("asymptotic speedup needs t >= 2 and e >= 2")
    return (t - 1) / t * e / (e - 1) * (B1 * r1) / (B2 * r2)

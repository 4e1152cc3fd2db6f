"""Discrete-event model of the multi-stream AllToAll execution.

Streams run in parallel; tasks on one stream run serially in submission
order, and a task also waits for every task it depends on. The simulator is
an independent check on the closed-form chunk formulas.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

from . import kernels
from .commcost import ChunkTiming, StrategyLevel

ALLTOALL, ALLGATHER, D2D, COMPUTE = "alltoall", "allgather", "d2d", "compute"
STREAMS = (ALLTOALL, ALLGATHER, D2D, COMPUTE)


class InvalidGraph(ValueError):
    pass


@dataclass(frozen=True)
class SimTask:
    id: str
    stream: str
    duration: float
    deps: tuple[str, ...] = ()

    def __post_init__(self):
        if self.duration < 0:
            raise ValueError(f"task {self.id}: negative duration")


@dataclass(frozen=True)
class TaskSpan:
    task: str
    stream: str
    start: float
    end: float


@dataclass(frozen=True)
class StreamTrace:
    spans: tuple[TaskSpan, ...]
    makespan: float
    _by_id: dict = field(default=None, repr=False, compare=False)

    def __getitem__(self, task_id: str) -> TaskSpan:
        if self._by_id is None:
            object.__setattr__(self, "_by_id", {s.task: s for s in self.spans})
        return self._by_id[task_id]

    def to_json(self, scale: float = 1e3) -> list[dict]:
        return [{"task": s.task, "stream": s.stream, "start_ms": s.start * scale,
                 "end_ms": s.end * scale} for s in self.spans]

    def to_csv(self, scale: float = 1e3) -> str:
        """Columnar form for Gantt plots: one row per task."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["task", "stream", "start_ms", "end_ms", "duration_ms"])
        for s in self.spans:
            w.writerow([s.task, s.stream, repr(s.start * scale), repr(s.end * scale),
                        repr((s.end - s.start) * scale)])
        return buf.getvalue()


def simulate(tasks: list[SimTask]) -> StreamTrace:
    index = {}
    for i, task in enumerate(tasks):
        if task.id in index:
            raise InvalidGraph(f"duplicate task id {task.id!r}")
        index[task.id] = i
    stream_ids = {}
    streams, dep_ptr, dep_idx = [], [0], []
    for task in tasks:
        streams.append(stream_ids.setdefault(task.stream, len(stream_ids)))
        for d in task.deps:
            if d not in index:
                raise InvalidGraph(f"task {task.id!r} depends on unknown task {d!r}")
            dep_idx.append(index[d])
        dep_ptr.append(len(dep_idx))
    try:
        start, end = kernels.list_schedule([t.duration for t in tasks], streams, dep_ptr, dep_idx)
    except ValueError as exc:
        raise InvalidGraph(str(exc)) from None
    spans = tuple(TaskSpan(t.id, t.stream, s, e) for t, s, e in zip(tasks, start, end))
    return StreamTrace(spans, max(end, default=0.0))


def _phase(level: StrategyLevel, n: int, timing: ChunkTiming, tag: str,
           after: tuple[str, ...]) -> tuple[list[SimTask], tuple[str, ...]]:
    """Tasks of one AllToAll phase and the ids the next stage must wait on."""
    if level is StrategyLevel.BASELINE:
        aa = SimTask(f"{tag}.aa", ALLTOALL, timing.aa, after)
        return [aa], (aa.id,)
    tasks, tails = [], []
    copy_stream = D2D if level is StrategyLevel.O3 else ALLGATHER
    for j in range(1, n + 1):
        aa = SimTask(f"{tag}.aa{j}", ALLTOALL, timing.aa, after)
        ag = SimTask(f"{tag}.ag{j}", ALLGATHER, timing.ag, (aa.id,))
        tasks += [aa, ag]
        if level is StrategyLevel.O1:
            tails.append(ag.id)
        else:
            cp = SimTask(f"{tag}.d2d{j}", copy_stream, timing.d2d, (ag.id,))
            tasks.append(cp)
            tails.append(cp.id)
    return tasks, tuple(tails)


def build_pipeline(level: StrategyLevel, n: int, timing: ChunkTiming, expert_time: float = 0.0,
                   mirrored: bool = True) -> list[SimTask]:
    """Task graph of dispatch, expert compute and combine for one MoE layer.

    ``mirrored=False`` emits the dispatch phase alone, which is what the
    chunk-search formulas score. For the baseline, ``timing.aa`` is the whole
    monolithic AllToAll. O1 carries no copies and always uses one chunk.
    """
    level = StrategyLevel(level)
    if n < 1:
        raise ValueError("chunk count must be >= 1")
    if level in (StrategyLevel.BASELINE, StrategyLevel.O1):
        n = 1
    tasks, tails = _phase(level, n, timing, "dispatch", ())
    if not mirrored:
        return tasks
    compute = SimTask("expert", COMPUTE, expert_time, tails)
    tail_tasks, _ = _phase(level, n, timing, "combine", (compute.id,))
    return tasks + [compute] + tail_tasks

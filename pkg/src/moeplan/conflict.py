"""Inter-node communication conflicts and their priority-based resolution.

Tensor/sequence-parallel traffic stays on intra-node links; EP, PP, CP and DP
all share the inter-node network, which is modelled as a single resource.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from itertools import combinations
from pathlib import Path

GROUPS = ("TP_SP", "EP", "PP", "CP", "DP")
PRIORITY = {"EP": 0, "PP": 1, "CP": 2, "DP": 3}  # lower value wins the link
INTRA, INTER = "intra-node", "inter-node"


@dataclass(frozen=True)
class CommEvent:
    group: str
    resource: str
    phase: str
    start: float
    end: float
    label: str = ""

    def __post_init__(self):
        if self.group not in GROUPS:
            raise ValueError(f"unknown group {self.group!r}")
        expected = INTRA if self.group == "TP_SP" else INTER
        if self.resource != expected:
            raise ValueError(f"{self.group} traffic uses {expected} links, not {self.resource!r}")
        if self.phase not in ("forward", "backward"):
            raise ValueError(f"phase must be forward or backward, not {self.phase!r}")
        if not self.start < self.end:
            raise ValueError(f"event {self.label!r}: start must be before end")

    @property
    def duration(self) -> float:
        return self.end - self.start

    def overlaps(self, other: "CommEvent") -> bool:
        return self.start < other.end and other.start < self.end


@dataclass(frozen=True)
class Conflict:
    winner: CommEvent
    loser: CommEvent
    delay: float  # how far the loser must move to clear the winner


@dataclass(frozen=True)
class ConflictReport:
    conflicts: tuple[Conflict, ...]

    def __len__(self):
        return len(self.conflicts)

    def as_dict(self) -> dict:
        def ev(x):
            return {"group": x.group, "phase": x.phase, "start_ms": x.start, "end_ms": x.end,
                    "label": x.label}
        return {"count": len(self.conflicts),
                "conflicts": [{"winner": ev(c.winner), "loser": ev(c.loser), "delay_ms": c.delay}
                              for c in self.conflicts]}


def _rank(ev: CommEvent, index: int):
    return (PRIORITY[ev.group], ev.start, index)


def detect_conflicts(timeline: list[CommEvent]) -> ConflictReport:
    found = []
    indexed = [(i, ev) for i, ev in enumerate(timeline) if ev.resource == INTER]
    for (i, a), (j, b) in combinations(indexed, 2):
        if a.overlaps(b):
            w, l = (a, b) if _rank(a, i) < _rank(b, j) else (b, a)
            found.append(Conflict(w, l, w.end - l.start))
    return ConflictReport(tuple(found))


def resolve_by_priority(timeline: list[CommEvent]) -> list[CommEvent]:
    """Delay lower-priority inter-node events until none overlap.

    Events are placed in priority order (EP > PP > CP > DP, earlier start
    first within a group); each keeps its duration and moves to the first
    gap at or after its original start. Output order matches the input.
    """
    order = sorted((i for i, ev in enumerate(timeline) if ev.resource == INTER),
                   key=lambda i: _rank(timeline[i], i))
    placed: list[CommEvent] = []
    result = list(timeline)
    for i in order:
        ev = timeline[i]
        start = ev.start
        moved = True
        while moved:
            moved = False
            for other in placed:
                if start < other.end and other.start < start + ev.duration:
                    start = other.end
                    moved = True
        new = ev if start == ev.start else replace(ev, start=start, end=start + ev.duration)
        placed.append(new)
        result[i] = new
    return result


def read_timeline_csv(path: str | Path) -> list[CommEvent]:
    """Timeline CSV with columns group,resource,phase,start_ms,end_ms,label (times kept in ms)."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"group", "resource", "phase", "start_ms", "end_ms"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        return [CommEvent(r["group"], r["resource"], r["phase"], float(r["start_ms"]),
                          float(r["end_ms"]), r.get("label", "") or "") for r in reader]

"""Cluster expansion plans combining expert and context parallelism for long contexts."""
from __future__ import annotations

from dataclasses import asdict, dataclass

HORIZONTAL, VERTICAL = "horizontal", "vertical"


@dataclass(frozen=True)
class ExpansionPlan:
    mode: str
    network_scale: int
    minibatch_per_ep_group: int | None
    rationale: str

    def as_dict(self) -> dict:
        return asdict(self)


def plan_expansion(e: int, cp: int, switch_capacity: int) -> ExpansionPlan:
    """Horizontal (CP orthogonal to EP) or vertical (CP aligned with EP) expansion.

    Horizontal needs a switch fabric of e*cp endpoints and is only chosen
    when cp < e and the fabric is big enough; otherwise CP is aligned with
    EP and the fabric only has to span max(e, cp).
    """
    if e < 1 or cp < 1:
        raise ValueError("e and cp must be >= 1")
    if cp < e and switch_capacity >= e * cp:
        return ExpansionPlan(HORIZONTAL, e * cp, None,
                             f"cp={cp} < e={e} and the switch supports {e * cp} endpoints")
    if cp >= e:
        why = f"cp={cp} >= e={e}"
    else:
        why = f"cp={cp} < e={e} but the switch supports only {switch_capacity} of {e * cp} endpoints"
    return ExpansionPlan(VERTICAL, max(e, cp), 1, why)


def context_capacity(cp: int, tokens_per_ep_group: int) -> int:
    """Longest context handled by ``cp`` context-parallel replicas of an EP group."""
    if cp < 1 or tokens_per_ep_group < 1:
        raise ValueError("inputs must be positive")
    return cp * tokens_per_ep_group

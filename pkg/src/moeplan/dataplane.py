"""Token-level emulation of MoE dispatch and combine on virtual cards.

Layout: node ``i`` hosts one tensor-parallel group of ``t`` cards and one
expert-parallel rank; experts are assigned to nodes in contiguous blocks.
All cards of a node hold the same activations (the tensor-parallel replica),
and a token routed to expert ``x`` must arrive on every card of the node
hosting ``x``.

The monolithic AllToAll is the reference. The chunked path drops the
replicated data across the tensor-parallel group, runs one AllToAll per
chunk inside each expert-parallel group, gathers inside the node, and for
more than one chunk reorders the gathered chunks with offset copies. Payloads
are integers so both paths can be compared bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .commcost import StrategyLevel

Card = tuple[int, int]  # (node, tensor-parallel rank)


class CorruptRouting(ValueError):
    pass


@dataclass(frozen=True)
class VirtualTopology:
    e: int
    t: int
    n_experts: int = 0

    def __post_init__(self):
        if self.e < 1 or self.t < 1:
            raise ValueError("e and t must be >= 1")
        if self.n_experts == 0:
            object.__setattr__(self, "n_experts", self.e)
        if self.n_experts % self.e:
            raise ValueError("expert count must be a multiple of e")

    @property
    def experts_per_node(self) -> int:
        return self.n_experts // self.e

    def host(self, expert):
        return np.asarray(expert) // self.experts_per_node

    @property
    def cards(self) -> list[Card]:
        return [(i, r) for i in range(self.e) for r in range(self.t)]


@dataclass(frozen=True)
class TokenBuffer:
    """Rows of tokens with their origin tags; ``expert`` is set once dispatched."""

    token_id: np.ndarray
    src: np.ndarray
    pos: np.ndarray
    payload: np.ndarray
    expert: np.ndarray | None = None
    seq_len: int = 0

    def __len__(self):
        return len(self.token_id)

    def take(self, idx) -> "TokenBuffer":
        idx = np.asarray(idx, dtype=np.int64)
        return TokenBuffer(self.token_id[idx], self.src[idx], self.pos[idx], self.payload[idx],
                           None if self.expert is None else self.expert[idx], self.seq_len)

    @staticmethod
    def concat(parts: list["TokenBuffer"], like: "TokenBuffer") -> "TokenBuffer":
        if not parts:
            return like.take([])
        has_expert = parts[0].expert is not None
        return TokenBuffer(
            np.concatenate([p.token_id for p in parts]),
            np.concatenate([p.src for p in parts]),
            np.concatenate([p.pos for p in parts]),
            np.concatenate([p.payload for p in parts]),
            np.concatenate([p.expert for p in parts]) if has_expert else None,
            like.seq_len,
        )

    def first_mismatch(self, other: "TokenBuffer") -> int | None:
        """Row index of the first difference, ``len`` if only lengths differ, else None."""
        n = min(len(self), len(other))
        cols = [(self.token_id, other.token_id), (self.src, other.src), (self.pos, other.pos)]
        if self.expert is not None and other.expert is not None:
            cols.append((self.expert, other.expert))
        bad = np.zeros(n, dtype=bool)
        for a, b in cols:
            bad |= a[:n] != b[:n]
        bad |= np.any(self.payload[:n] != other.payload[:n], axis=1)
        hits = np.flatnonzero(bad)
        if hits.size:
            return int(hits[0])
        return None if len(self) == len(other) else n

    def equals(self, other: "TokenBuffer") -> bool:
        return self.first_mismatch(other) is None


def make_tokens(src: int, payload: np.ndarray) -> TokenBuffer:
    """Sequence of ``len(payload)`` tokens originating on expert-parallel rank ``src``."""
    payload = np.asarray(payload)
    s = len(payload)
    pos = np.arange(s, dtype=np.int64)
    return TokenBuffer(src * s + pos, np.full(s, src, dtype=np.int64), pos, payload, None, s)


@dataclass(frozen=True)
class RoutingDecision:
    experts: np.ndarray  # (tokens, k) int
    probs: np.ndarray    # (tokens, k)

    @property
    def k(self) -> int:
        return self.experts.shape[1]


def route_topk(gate_scores, k: int) -> RoutingDecision:
    """Softmax the gate scores and keep the ``k`` best experts per token.

    Ties go to the lower expert index; chosen experts are listed best first.
    """
    scores = np.atleast_2d(np.asarray(gate_scores, dtype=np.float64))
    n_exp = scores.shape[1]
    if not 1 <= k <= n_exp:
        raise ValueError(f"k={k} must be between 1 and the expert count {n_exp}")
    z = np.exp(scores - scores.max(axis=1, keepdims=True))
    probs = z / z.sum(axis=1, keepdims=True)
    order = np.argsort(-probs, axis=1, kind="stable")[:, :k]
    return RoutingDecision(order.astype(np.int64), np.take_along_axis(probs, order, axis=1))


def permute(tokens: TokenBuffer, routing: RoutingDecision) -> tuple[TokenBuffer, np.ndarray]:
    """Group (token, choice) pairs by expert; returns the buffer and its inverse map.

    ``inverse_map[i]`` is the flat pair index ``token * k + choice`` that
    permuted row ``i`` came from.
    """
    k = routing.k
    if routing.experts.shape[0] != len(tokens):
        raise CorruptRouting("routing does not cover every token")
    flat_expert = routing.experts.reshape(-1)
    inverse_map = np.argsort(flat_expert, kind="stable")
    out = tokens.take(inverse_map // k)
    return TokenBuffer(out.token_id, out.src, out.pos, out.payload, flat_expert[inverse_map],
                       tokens.seq_len), inverse_map


def unpermute(buffer: TokenBuffer, inverse_map: np.ndarray, k: int = 1) -> TokenBuffer:
    """Undo :func:`permute` for the first choice of every token."""
    first = np.flatnonzero(inverse_map % k == 0)
    rows = first[np.argsort(inverse_map[first] // k)]
    out = buffer.take(rows)
    return TokenBuffer(out.token_id, out.src, out.pos, out.payload, None, buffer.seq_len)


def _segment(buf: TokenBuffer, topology: VirtualTopology, dest: int) -> np.ndarray:
    return np.flatnonzero(topology.host(buf.expert) == dest)


def dispatch_monolithic(buffers: list[TokenBuffer], topology: VirtualTopology) -> dict[Card, TokenBuffer]:
    """Reference AllToAll: card (j, r) receives each source's segment for node j, source-major."""
    if len(buffers) != topology.e:
        raise ValueError("need one permuted buffer per expert-parallel rank")
    out = {}
    for j in range(topology.e):
        recv = TokenBuffer.concat([b.take(_segment(b, topology, j)) for b in buffers], buffers[0])
        for r in range(topology.t):
            out[(j, r)] = recv
    return out


def drop(segment: TokenBuffer, t: int) -> list[TokenBuffer]:
    """Split a replicated segment into ``t`` contiguous shards, one per tensor-parallel rank."""
    return [segment.take(part) for part in np.array_split(np.arange(len(segment)), t)]


def _chunk_rows(buf: TokenBuffer, c: int, n: int) -> np.ndarray:
    size = buf.seq_len // n
    return np.flatnonzero((buf.pos >= c * size) & (buf.pos < (c + 1) * size))


def gather_chunks(buffers: list[TokenBuffer], topology: VirtualTopology, n: int):
    """Run drop, per-chunk AllToAll and intra-node AllGather.

    Returns ``(pre_copy, counts)``: the gathered buffer of each node with
    chunks stacked one after another, and ``counts[j][c, i, x]`` the rows for
    (chunk, source, local expert), which travel with the AllToAll split sizes.
    """
    e, t, epn = topology.e, topology.t, topology.experts_per_node
    seq = buffers[0].seq_len
    if any(b.seq_len != seq for b in buffers):
        raise ValueError("all sources must share one sequence length")
    if n < 1 or seq % n:
        raise ValueError(f"chunk count {n} does not divide the sequence length {seq}")
    like = buffers[0]
    pre_copy = {j: [] for j in range(e)}
    counts = {j: np.zeros((n, e, epn), dtype=np.int64) for j in range(e)}
    for c in range(n):
        chunks = [b.take(_chunk_rows(b, c, n)) for b in buffers]
        # sent[i][j][r]: rows card (i, r) sends to card (j, r) after the drop
        sent = []
        for i, chunk in enumerate(chunks):
            per_dest = []
            for j in range(e):
                seg = chunk.take(_segment(chunk, topology, j))
                counts[j][c, i] = np.bincount(seg.expert - j * epn, minlength=epn)
                per_dest.append(drop(seg, t))
            sent.append(per_dest)
        for j in range(e):
            # AllToAll inside expert-parallel group r lands sent[i][j][r] on card (j, r)
            received = [[sent[i][j][r] for i in range(e)] for r in range(t)]
            # AllGather concatenates every rank's share, per source, on all cards of node j
            gathered = [TokenBuffer.concat([received[r][i] for r in range(t)], like) for i in range(e)]
            pre_copy[j].append(TokenBuffer.concat(gathered, like))
    return {j: TokenBuffer.concat(pre_copy[j], like) for j in range(e)}, counts


def offset_copy(pre_copy: TokenBuffer, counts: np.ndarray) -> TokenBuffer:
    """Move chunk-major rows to source/expert-major order using only the split counts."""
    n, e, epn = counts.shape
    per_key = counts.sum(axis=0)  # (e, epn)
    base = np.concatenate([[0], np.cumsum(per_key.reshape(-1))[:-1]]).reshape(e, epn)
    before = np.cumsum(counts, axis=0) - counts  # rows of the same key in earlier chunks
    dest = np.empty(len(pre_copy), dtype=np.int64)
    cursor = 0
    for c in range(n):
        for i in range(e):
            for x in range(epn):
                m = counts[c, i, x]
                start = base[i, x] + before[c, i, x]
                dest[cursor:cursor + m] = np.arange(start, start + m)
                cursor += m
    order = np.empty_like(dest)
    order[dest] = np.arange(len(dest))
    return pre_copy.take(order)


def dispatch_chunked(buffers: list[TokenBuffer], topology: VirtualTopology, level: StrategyLevel,
                     n: int) -> dict[Card, TokenBuffer]:
    """Dispatch via drop + chunked AllToAll + AllGather (+ offset copies when n > 1).

    O2 and O3 move identical data and differ only in scheduling.
    """
    level = StrategyLevel(level)
    if level is StrategyLevel.BASELINE:
        raise ValueError("baseline dispatch is dispatch_monolithic")
    if level is StrategyLevel.O1 and n != 1:
        raise ValueError("O1 does not chunk; n must be 1")
    if len(buffers) != topology.e:
        raise ValueError("need one permuted buffer per expert-parallel rank")
    pre_copy, counts = gather_chunks(buffers, topology, n)
    out = {}
    for j in range(topology.e):
        final = pre_copy[j] if n == 1 else offset_copy(pre_copy[j], counts[j])
        for r in range(topology.t):
            out[(j, r)] = final
    return out


def apply_experts(dispatched: dict[Card, TokenBuffer],
                  fn: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> dict[Card, TokenBuffer]:
    """Run ``fn(expert_ids, payload) -> payload`` on every card's received rows."""
    out = {}
    for card, buf in dispatched.items():
        out[card] = TokenBuffer(buf.token_id, buf.src, buf.pos, np.asarray(fn(buf.expert, buf.payload)),
                                buf.expert, buf.seq_len)
    return out


def combine_unpermute(expert_outputs: dict[Card, TokenBuffer], routing: list[RoutingDecision],
                      inverse_maps: list[np.ndarray], topology: VirtualTopology) -> dict[Card, np.ndarray]:
    """Second AllToAll back to the sources, then probability-weighted sum per token.

    Returns the final payloads (original token order) for every source card.
    """
    e, t = topology.e, topology.t
    out = {}
    for i in range(e):
        k = routing[i].k
        inv = inverse_maps[i]
        n_tok = routing[i].experts.shape[0]
        want_expert = routing[i].experts.reshape(-1)[inv]
        want_pos = inv // k
        probs = routing[i].probs.reshape(-1)[inv]
        for r in range(t):
            parts = []
            for j in range(e):
                buf = expert_outputs[(j, r)]
                parts.append(buf.take(np.flatnonzero(buf.src == i)))
            back = TokenBuffer.concat(parts, parts[0])
            if (len(back) != len(inv) or np.any(back.pos != want_pos)
                    or np.any(back.expert != want_expert)):
                raise CorruptRouting(f"card {(i, r)}: expert outputs do not match its routed tokens")
            weighted = back.payload * probs[:, None]
            final = np.zeros((n_tok,) + back.payload.shape[1:], dtype=weighted.dtype)
            np.add.at(final, want_pos, weighted)
            out[(i, r)] = final
    return out


# -- verification driver ---------------------------------------------------

@dataclass(frozen=True)
class Instance:
    topology: VirtualTopology
    tokens: list[TokenBuffer]
    routing: list[RoutingDecision]


def random_instance(rng: np.random.Generator, e: int, t: int, seq_len: int, hidden: int = 4,
                    k: int = 2, experts_per_node: int = 2) -> Instance:
    topo = VirtualTopology(e, t, e * experts_per_node)
    k = min(k, topo.n_experts)
    tokens, routing = [], []
    for i in range(e):
        tokens.append(make_tokens(i, rng.integers(-1000, 1000, size=(seq_len, hidden))))
        routing.append(route_topk(rng.normal(size=(seq_len, topo.n_experts)), k))
    return Instance(topo, tokens, routing)


@dataclass(frozen=True)
class VerifyResult:
    ok: bool
    message: str
    card: Card | None = None
    position: int | None = None


def verify_instance(inst: Instance, level: StrategyLevel, n: int) -> VerifyResult:
    from fractions import Fraction

    topo = inst.topology
    permuted = [permute(tok, rt) for tok, rt in zip(inst.tokens, inst.routing)]
    buffers = [p[0] for p in permuted]
    mono = dispatch_monolithic(buffers, topo)
    chunked = dispatch_chunked(buffers, topo, level, n)
    for card in topo.cards:
        bad = chunked[card].first_mismatch(mono[card])
        if bad is not None:
            return VerifyResult(False, "chunked dispatch differs from monolithic", card, bad)
    # round trip with identity experts and exact normalised probabilities
    exact = []
    for rt in inst.routing:
        k = rt.k
        probs = np.array([[Fraction(1, k)] * k for _ in range(rt.experts.shape[0])], dtype=object)
        exact.append(RoutingDecision(rt.experts, probs))
    outputs = apply_experts(chunked, lambda ex, p: p)
    final = combine_unpermute(outputs, exact, [p[1] for p in permuted], topo)
    for (i, r), payload in final.items():
        ref = inst.tokens[i].payload
        diff = np.flatnonzero(np.any(payload != ref, axis=1))
        if diff.size:
            return VerifyResult(False, "round trip does not restore the input", (i, r), int(diff[0]))
    return VerifyResult(True, "chunked dispatch matches monolithic; round trip exact")

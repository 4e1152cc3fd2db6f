import math
from fractions import Fraction

import numpy as np
import pytest

from moeplan.commcost import StrategyLevel
from moeplan.dataplane import (CorruptRouting, RoutingDecision, TokenBuffer, VirtualTopology, apply_experts,
                               combine_unpermute, dispatch_chunked, dispatch_monolithic, drop, gather_chunks,
                               make_tokens, permute, random_instance, route_topk, unpermute, verify_instance)

O1, O2, O3 = StrategyLevel.O1, StrategyLevel.O2, StrategyLevel.O3


def fixed_routing(experts):
    experts = np.asarray(experts, dtype=np.int64).reshape(len(experts), -1)
    k = experts.shape[1]
    return RoutingDecision(experts, np.full(experts.shape, 1.0 / k))


def payload(src, s, h=2):
    return np.arange(s * h).reshape(s, h) + 100 * src


def test_route_topk_examples():
    r = route_topk([10, 0, 0, 0], 1)
    assert r.experts.tolist() == [[0]]
    assert r.probs[0, 0] == pytest.approx(1 / (1 + 3 * math.exp(-10)), rel=1e-12)
    r = route_topk([1, 1, 1, 1], 2)
    assert r.experts.tolist() == [[0, 1]]
    assert r.probs[0].tolist() == pytest.approx([0.25, 0.25])
    scores = [0.1, 0.9, 0.3, 0.5]
    r = route_topk(scores, 2)
    z = [math.exp(x) for x in scores]
    ranked = sorted(range(4), key=lambda i: (-z[i], i))[:2]
    assert sorted(r.experts[0].tolist()) == [1, 3] == sorted(ranked)
    assert r.probs[0].tolist() == pytest.approx([z[i] / sum(z) for i in ranked], rel=1e-12)


def test_route_topk_rejects_large_k():
    with pytest.raises(ValueError):
        route_topk([1, 2], 3)


def test_permute_examples():
    tok = make_tokens(0, payload(0, 4))
    buf, inv = permute(tok, fixed_routing([1, 0, 1, 0]))
    assert inv.tolist() == [1, 3, 0, 2]
    assert buf.pos.tolist() == [1, 3, 0, 2]
    assert buf.expert.tolist() == [0, 0, 1, 1]
    buf, inv = permute(tok, fixed_routing([0, 0, 1, 1]))
    assert inv.tolist() == [0, 1, 2, 3]


def test_permute_round_trip():
    rng = np.random.default_rng(3)
    for _ in range(20):
        s, k = int(rng.integers(1, 30)), int(rng.integers(1, 4))
        tok = make_tokens(0, rng.integers(0, 50, size=(s, 3)))
        rt = route_topk(rng.normal(size=(s, 6)), k)
        buf, inv = permute(tok, rt)
        assert unpermute(buf, inv, k).equals(tok)


def test_permute_rejects_short_routing():
    with pytest.raises(CorruptRouting):
        permute(make_tokens(0, payload(0, 3)), fixed_routing([0, 1]))


def test_monolithic_single_group_is_identity():
    topo = VirtualTopology(1, 2, 3)
    tok = make_tokens(0, payload(0, 5))
    buf, _ = permute(tok, fixed_routing([2, 0, 1, 1, 0]))
    out = dispatch_monolithic([buf], topo)
    assert out[(0, 0)].equals(buf) and out[(0, 1)].equals(buf)


def test_monolithic_swap():
    topo = VirtualTopology(2, 1)
    bufs = [permute(make_tokens(i, payload(i, 2)), fixed_routing([1 - i, 1 - i]))[0] for i in range(2)]
    out = dispatch_monolithic(bufs, topo)
    assert out[(0, 0)].equals(bufs[1])
    assert out[(1, 0)].equals(bufs[0])


def brute_force_alltoall(buffers, topo):
    """Row-by-row routing written without the vectorised helpers."""
    dest = {j: [] for j in range(topo.e)}
    for buf in buffers:
        for row in range(len(buf)):
            dest[int(buf.expert[row]) // topo.experts_per_node].append((buf, row))
    out = {}
    for j, rows in dest.items():
        keyed = [(b.token_id[r], b.src[r], b.pos[r], tuple(b.payload[r]), b.expert[r]) for b, r in rows]
        for r in range(topo.t):
            out[(j, r)] = keyed
    return out


def as_rows(buf):
    return [(buf.token_id[i], buf.src[i], buf.pos[i], tuple(buf.payload[i]), buf.expert[i]) for i in range(len(buf))]


def test_monolithic_against_brute_force():
    rng = np.random.default_rng(11)
    for _ in range(25):
        inst = random_instance(rng, e=int(rng.choice([2, 3, 4])), t=int(rng.choice([1, 2])),
                               seq_len=int(rng.integers(1, 12)), k=int(rng.integers(1, 3)))
        bufs = [permute(tok, rt)[0] for tok, rt in zip(inst.tokens, inst.routing)]
        mono = dispatch_monolithic(bufs, inst.topology)
        ref = brute_force_alltoall(bufs, inst.topology)
        for card in inst.topology.cards:
            assert as_rows(mono[card]) == ref[card]


def fig7_instance():
    # t=2, e=2, one expert per node, k=1; source 0 sends everything to node 0,
    # source 1 alternates between the nodes. Four tokens per source.
    topo = VirtualTopology(2, 2)
    routes = [[0, 0, 0, 0], [0, 1, 0, 1]]
    bufs = [permute(make_tokens(i, payload(i, 4)), fixed_routing(routes[i]))[0] for i in range(2)]
    return topo, bufs


def test_fig7_hand_trace():
    topo, bufs = fig7_instance()
    pre, counts = gather_chunks(bufs, topo, 2)
    tags = list(zip(pre[0].src.tolist(), pre[0].pos.tolist()))
    # chunk 1 from both sources, then chunk 2 from both sources
    assert tags == [(0, 0), (0, 1), (1, 0), (0, 2), (0, 3), (1, 2)]
    assert counts[0][:, :, 0].tolist() == [[2, 1], [2, 1]]
    out = dispatch_chunked(bufs, topo, O2, 2)
    tags = list(zip(out[(0, 1)].src.tolist(), out[(0, 1)].pos.tolist()))
    assert tags == [(0, 0), (0, 1), (0, 2), (0, 3), (1, 0), (1, 2)]
    mono = dispatch_monolithic(bufs, topo)
    for card in topo.cards:
        assert out[card].equals(mono[card])


def test_single_chunk_without_tp_is_monolithic():
    rng = np.random.default_rng(5)
    inst = random_instance(rng, e=3, t=1, seq_len=6)
    assert verify_instance(inst, O1, 1).ok


def test_chunk_count_must_divide_sequence():
    topo, bufs = fig7_instance()
    with pytest.raises(ValueError):
        dispatch_chunked(bufs, topo, O3, 3)
    with pytest.raises(ValueError):
        dispatch_chunked(bufs, topo, O1, 2)
    with pytest.raises(ValueError):
        dispatch_chunked(bufs, topo, StrategyLevel.BASELINE, 1)


def test_random_equivalence():
    rng = np.random.default_rng(2024)
    for trial in range(200):
        t, e, n = int(rng.choice([2, 4])), int(rng.choice([2, 4])), int(rng.integers(1, 5))
        level = O1 if n == 1 and trial % 3 == 0 else (O2 if trial % 2 else O3)
        inst = random_instance(rng, e, t, seq_len=n * int(rng.integers(1, 6)), k=int(rng.integers(1, 3)))
        res = verify_instance(inst, level, n)
        assert res.ok, (trial, res)


def test_token_conservation():
    rng = np.random.default_rng(8)
    inst = random_instance(rng, 4, 2, seq_len=12, k=2)
    bufs = [permute(tok, rt)[0] for tok, rt in zip(inst.tokens, inst.routing)]
    out = dispatch_chunked(bufs, inst.topology, O3, 3)
    got = sorted((int(b.token_id[i]), int(b.expert[i])) for j in range(4) for b in [out[(j, 0)]]
                 for i in range(len(b)))
    want = sorted((int(b.token_id[i]), int(b.expert[i])) for b in bufs for i in range(len(b)))
    assert got == want


def test_drop_shards_reconstruct_segment():
    rng = np.random.default_rng(1)
    for _ in range(30):
        seg = make_tokens(0, rng.integers(0, 9, size=(int(rng.integers(0, 20)), 2)))
        t = int(rng.integers(1, 6))
        shards = drop(seg, t)
        assert len(shards) == t
        assert TokenBuffer.concat(shards, seg).equals(seg)
        assert max(map(len, shards)) - min(map(len, shards)) <= 1


def test_identity_round_trip():
    rng = np.random.default_rng(9)
    inst = random_instance(rng, 2, 2, seq_len=8, k=2)
    perm = [permute(tok, rt) for tok, rt in zip(inst.tokens, inst.routing)]
    exact = [RoutingDecision(rt.experts, np.full(rt.experts.shape, Fraction(1, 2), dtype=object))
             for rt in inst.routing]
    out = dispatch_chunked([p[0] for p in perm], inst.topology, O2, 2)
    final = combine_unpermute(apply_experts(out, lambda ex, p: p), exact, [p[1] for p in perm], inst.topology)
    for (i, _), pay in final.items():
        assert (pay == inst.tokens[i].payload).all()


def test_double_expert_k1():
    topo = VirtualTopology(2, 2)
    routes = [[1, 0, 1, 0], [0, 0, 1, 1]]
    toks = [make_tokens(i, payload(i, 4)) for i in range(2)]
    rts = [fixed_routing(r) for r in routes]
    perm = [permute(tok, rt) for tok, rt in zip(toks, rts)]
    out = dispatch_chunked([p[0] for p in perm], topo, O3, 2)
    final = combine_unpermute(apply_experts(out, lambda ex, p: 2 * p), rts, [p[1] for p in perm], topo)
    for (i, _), pay in final.items():
        assert (pay == 2 * toks[i].payload).all()


def test_missing_expert_output_is_corrupt():
    topo, bufs = fig7_instance()
    routes = [fixed_routing([0, 0, 0, 0]), fixed_routing([0, 1, 0, 1])]
    inv = [permute(make_tokens(i, payload(i, 4)), routes[i])[1] for i in range(2)]
    out = dispatch_chunked(bufs, topo, O2, 2)
    out[(0, 0)] = out[(0, 0)].take(np.arange(len(out[(0, 0)]) - 1))
    with pytest.raises(CorruptRouting):
        combine_unpermute(out, routes, inv, topo)


def test_verify_reports_first_mismatch(monkeypatch):
    import moeplan.dataplane as dp

    rng = np.random.default_rng(0)
    inst = random_instance(rng, 2, 2, seq_len=4)
    real = dp.offset_copy
    monkeypatch.setattr(dp, "offset_copy", lambda pre, counts: pre if len(pre) > 1 else real(pre, counts))
    res = verify_instance(inst, O2, 2)
    assert not res.ok and res.card is not None and res.position is not None

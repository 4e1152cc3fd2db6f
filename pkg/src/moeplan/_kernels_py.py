"""Pure-Python versions of the hot loops in :mod:`moeplan._kernels`.

Both modules expose the same two functions with the same argument layout, so
callers never need to know which backend is active.
"""
from collections import deque


def list_schedule(durations, streams, dep_ptr, dep_idx):
    """Start/end times of a multi-stream task graph under list scheduling.

    Tasks are numbered 0..n-1 in submission order. ``streams[i]`` is an integer
    stream id; tasks sharing a stream run serially in submission order.
    Dependencies of task ``i`` are ``dep_idx[dep_ptr[i]:dep_ptr[i + 1]]``.
    A task starts at the latest end among its stream predecessor and its
    dependencies. Raises ``ValueError`` when the graph has a cycle.
    """
    n = len(durations)
    succ = [[] for _ in range(n)]
    indeg = [0] * n
    last_on_stream = {}
    stream_pred = [-1] * n
    for i in range(n):
        s = streams[i]
        prev = last_on_stream.get(s, -1)
        if prev >= 0:
            stream_pred[i] = prev
            succ[prev].append(i)
            indeg[i] += 1
        last_on_stream[s] = i
        for p in range(dep_ptr[i], dep_ptr[i + 1]):
            d = dep_idx[p]
            succ[d].append(i)
            indeg[i] += 1

    start = [0.0] * n
    end = [0.0] * n
    ready = deque(i for i in range(n) if indeg[i] == 0)
    done = 0
    while ready:
        i = ready.popleft()
        t0 = 0.0
        sp = stream_pred[i]
        if sp >= 0 and end[sp] > t0:
            t0 = end[sp]
        for p in range(dep_ptr[i], dep_ptr[i + 1]):
            e = end[dep_idx[p]]
            if e > t0:
                t0 = e
        start[i] = t0
        end[i] = t0 + durations[i]
        done += 1
        for j in succ[i]:
            indeg[j] -= 1
            if indeg[j] == 0:
                ready.append(j)
    if done != n:
        raise ValueError("task graph contains a cycle")
    return start, end


def score_chunks(aa, ag, d2d, ns, overlap_d2d):
    """Pipelined completion time for each candidate chunk count.

    ``overlap_d2d=False`` serialises each chunk's copy behind its gather (O2);
    ``True`` runs copies on their own stream (O3).
    """
    out = [0.0] * len(ns)
    for i in range(len(ns)):
        a, g, c, n = aa[i], ag[i], d2d[i], ns[i]
        if overlap_d2d:
            if a < g:
                out[i] = a + g * n + c
            else:
                out[i] = a * n + g + c
        else:
            if a < g + c:
                out[i] = a + (g + c) * n
            else:
                out[i] = a * n + g + c
    return out

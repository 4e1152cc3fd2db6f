# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops; see ``_kernels_py`` for the reference semantics."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def list_schedule(durations, streams, dep_ptr, dep_idx):
    cdef double[::1] dur = np.ascontiguousarray(durations, dtype=np.float64)
    cdef long long[::1] st = np.ascontiguousarray(streams, dtype=np.int64)
    cdef long long[::1] dptr = np.ascontiguousarray(dep_ptr, dtype=np.int64)
    cdef long long[::1] didx = np.ascontiguousarray(dep_idx, dtype=np.int64)
    cdef Py_ssize_t n = dur.shape[0]
    cdef Py_ssize_t i, j, p, head, tail, done
    cdef long long s, prev
    cdef double t0, e

    # stream predecessor per task
    cdef long long[::1] spred = np.full(n, -1, dtype=np.int64)
    last = {}
    for i in range(n):
        s = st[i]
        prev = last.get(s, -1)
        spred[i] = prev
        last[s] = i

    # successor CSR: stream edge plus dependency edges
    cdef long long[::1] indeg = np.zeros(n, dtype=np.int64)
    cdef long long[::1] outdeg = np.zeros(n + 1, dtype=np.int64)
    for i in range(n):
        if spred[i] >= 0:
            outdeg[spred[i] + 1] += 1
            indeg[i] += 1
        for p in range(dptr[i], dptr[i + 1]):
            outdeg[didx[p] + 1] += 1
            indeg[i] += 1
    for i in range(n):
        outdeg[i + 1] += outdeg[i]
    cdef long long[::1] fill = np.array(outdeg[:n], dtype=np.int64)
    cdef long long[::1] succ = np.empty(outdeg[n], dtype=np.int64)
    for i in range(n):
        if spred[i] >= 0:
            succ[fill[spred[i]]] = i
            fill[spred[i]] += 1
        for p in range(dptr[i], dptr[i + 1]):
            succ[fill[didx[p]]] = i
            fill[didx[p]] += 1

    cdef long long[::1] queue = np.empty(n, dtype=np.int64)
    start = np.zeros(n, dtype=np.float64)
    end = np.zeros(n, dtype=np.float64)
    cdef double[::1] sv = start
    cdef double[::1] ev = end
    head = 0
    tail = 0
    for i in range(n):
        if indeg[i] == 0:
            queue[tail] = i
            tail += 1
    done = 0
    while head < tail:
        i = queue[head]
        head += 1
        t0 = 0.0
        if spred[i] >= 0 and ev[spred[i]] > t0:
            t0 = ev[spred[i]]
        for p in range(dptr[i], dptr[i + 1]):
            e = ev[didx[p]]
            if e > t0:
                t0 = e
        sv[i] = t0
        ev[i] = t0 + dur[i]
        done += 1
        for p in range(outdeg[i], outdeg[i + 1]):
            j = succ[p]
            indeg[j] -= 1
            if indeg[j] == 0:
                queue[tail] = j
                tail += 1
    if done != n:
        raise ValueError("task graph contains a cycle")
    return start.tolist(), end.tolist()


def score_chunks(aa, ag, d2d, ns, bint overlap_d2d):
    cdef double[::1] a = np.ascontiguousarray(aa, dtype=np.float64)
    cdef double[::1] g = np.ascontiguousarray(ag, dtype=np.float64)
    cdef double[::1] c = np.ascontiguousarray(d2d, dtype=np.float64)
    cdef long long[::1] nn = np.ascontiguousarray(ns, dtype=np.int64)
    cdef Py_ssize_t i, m = nn.shape[0]
    out = np.empty(m, dtype=np.float64)
    cdef double[::1] o = out
    cdef double n
    for i in range(m):
        n = <double>nn[i]
        if overlap_d2d:
            if a[i] < g[i]:
                o[i] = a[i] + g[i] * n + c[i]
            else:
                o[i] = a[i] * n + g[i] + c[i]
        else:
            if a[i] < g[i] + c[i]:
                o[i] = a[i] + (g[i] + c[i]) * n
            else:
                o[i] = a[i] * n + g[i] + c[i]
    return out.tolist()

"""Compare the compiled and pure-Python kernels.

Usage: python benchmarks/bench_kernels.py [--repeat N]

Times ``list_schedule`` on mirrored O3 task graphs of growing chunk counts
and ``score_chunks`` on 64 and 4096 candidates, for each available backend.
"""
import argparse
import timeit

from moeplan import _kernels_py
from moeplan.commcost import ChunkTiming, StrategyLevel
from moeplan.pipesim import build_pipeline

try:
    from moeplan import _kernels as _compiled
except ImportError:
    _compiled = None


def graph_arrays(n):
    tasks = build_pipeline(StrategyLevel.O3, n, ChunkTiming(1.0, 2.0, 0.5, n, 0.0), expert_time=3.0)
    index = {t.id: i for i, t in enumerate(tasks)}
    streams, ptr, idx = {}, [0], []
    stream_of = []
    for t in tasks:
        stream_of.append(streams.setdefault(t.stream, len(streams)))
        idx += [index[d] for d in t.deps]
        ptr.append(len(idx))
    return [t.duration for t in tasks], stream_of, ptr, idx


def bench(fn, args, repeat):
    loops, _ = timeit.Timer(lambda: fn(*args)).autorange()
    best = min(timeit.repeat(lambda: fn(*args), number=loops, repeat=repeat))
    return best / loops


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = [("python", _kernels_py)] + ([("cython", _compiled)] if _compiled else [])
    if _compiled is None:
        print("compiled extension not built; timing the fallback only")

    cases = [(f"list_schedule n={n} ({6 * n + 1} tasks)", "list_schedule", graph_arrays(n))
             for n in (4, 16, 64, 256)]
    for m in (64, 4096):
        ns = list(range(1, m + 1))
        cases.append((f"score_chunks {m} candidates", "score_chunks",
                      ([1.0 / n for n in ns], [2.0 / n for n in ns], [0.5 / n for n in ns], ns, True)))

    print(f"{'case':<40}" + "".join(f"{name:>14}" for name, _ in backends) + ("     speedup" if _compiled else ""))
    for label, fn_name, fargs in cases:
        times = [bench(getattr(mod, fn_name), fargs, args.repeat) for _, mod in backends]
        row = f"{label:<40}" + "".join(f"{t * 1e6:>12.1f}us" for t in times)
        if _compiled:
            row += f"{times[0] / times[1]:>11.1f}x"
        print(row)


if __name__ == "__main__":
    main()

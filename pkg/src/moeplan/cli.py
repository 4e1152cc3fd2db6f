"""Command-line front end.

Every command writes one JSON document (to ``--output`` or stdout) that
embeds a run manifest. Exit codes: 0 ok, 1 runtime error, 2 parse error,
3 validation error, 4 bad calibration data.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .calibrate import CalibrationDataError, calibrate, read_samples
from .commcost import ChunkTiming, StrategyLevel, baseline_time, chunk_timing, traffic_volume
from .config import ConfigError, load_cluster, load_curves, load_model, validate
from .conflict import detect_conflicts, read_timeline_csv, resolve_by_priority
from .dataplane import random_instance, verify_instance
from .expand import context_capacity, plan_expansion
from .memcost import ActivationMode, ZeroStage, total_memory
from .pipesim import build_pipeline, simulate
from .strategy import estimate_performance, select_strategy

EXIT_OK, EXIT_RUNTIME, EXIT_PARSE, EXIT_VALIDATION, EXIT_CALIBRATION = 0, 1, 2, 3, 4


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _digest(path) -> str:
    p = Path(path)
    h = hashlib.sha256()
    if p.is_dir():
        for child in sorted(p.iterdir()):
            if child.is_file():
                h.update(child.name.encode())
                h.update(child.read_bytes())
    elif p.is_file():
        h.update(p.read_bytes())
    return h.hexdigest()


def manifest(command: str, inputs: dict) -> dict:
    paths = {k: str(v) for k, v in inputs.items() if v is not None}
    return {
        "command": command,
        "inputs": paths,
        "hashes": {k: _digest(v) for k, v in paths.items()},
        "version": __version__,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }


def _emit(doc: dict, args) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)


def _require(args, *names):
    missing = [f"--{n}" for n in names if getattr(args, n) is None]
    if missing:
        raise CliError(f"{args.command} needs {' '.join(missing)}", EXIT_PARSE)


def _load_all(args):
    _require(args, "model", "cluster", "curves")
    model, parallel = load_model(args.model)
    cluster = load_cluster(args.cluster)
    curves, overhead = load_curves(args.curves)
    if getattr(args, "seq_len", None):
        from dataclasses import replace
        model = replace(model, s=args.seq_len)
    problems = validate(model, parallel, cluster)
    if problems:
        raise CliError("invalid configuration:\n  " + "\n  ".join(problems), EXIT_VALIDATION)
    return model, parallel, cluster, curves, overhead


def cmd_plan(args) -> dict:
    model, parallel, cluster, curves, overhead = _load_all(args)
    decision = select_strategy(model, parallel, cluster, curves, overhead, args.max_chunks)
    doc = decision.as_dict()
    doc["volume_bytes"] = traffic_volume(model)
    doc["perf"] = None
    if args.non_comm_ms is not None:
        perf = estimate_performance(decision, model, parallel, cluster, args.non_comm_ms / 1e3,
                                    args.moe_layers)
        doc["perf"] = perf.as_dict()
    return doc


def _layer_timing(args) -> tuple[StrategyLevel, int, ChunkTiming]:
    """Level, chunk count and per-chunk times, from explicit flags or the cost model."""
    if args.aa_ms is not None:
        level = StrategyLevel(args.level or "O2")
        n = args.n or 1
        return level, n, ChunkTiming(args.aa_ms / 1e3, (args.ag_ms or 0.0) / 1e3,
                                     (args.d2d_ms or 0.0) / 1e3, n, 0.0)
    model, parallel, cluster, curves, overhead = _load_all(args)
    volume = traffic_volume(model)
    if args.level is None:
        decision = select_strategy(model, parallel, cluster, curves, overhead, args.max_chunks)
        level, n = decision.level, decision.n
    else:
        level, n = StrategyLevel(args.level), args.n or 1
    t, e = parallel.t, parallel.e
    if level is StrategyLevel.BASELINE:
        aa = baseline_time(volume, e, cluster.B1, curves.alltoall, overhead)
        return level, 1, ChunkTiming(aa, 0.0, 0.0, 1, volume)
    timing = chunk_timing(volume, n, t, e, cluster.B1, cluster.B2, cluster.B3, curves, overhead,
                          o3=level is StrategyLevel.O3)
    return level, n, timing


def cmd_simulate(args) -> dict:
    level, n, timing = _layer_timing(args)
    expert = (args.expert_ms or 0.0) / 1e3
    trace = simulate(build_pipeline(level, n, timing, expert, mirrored=args.phases == 2))
    if args.gantt:
        Path(args.gantt).write_text(trace.to_csv())
    if level in (StrategyLevel.BASELINE, StrategyLevel.O1):
        n = 1
    return {"level": level.value, "n": n, "timing": timing.as_dict(),
            "makespan_ms": trace.makespan * 1e3, "trace": trace.to_json()}


def cmd_memory(args) -> dict:
    _require(args, "model")
    model, parallel = load_model(args.model)
    return total_memory(model, parallel, ZeroStage(args.zero), ActivationMode(args.activation)).as_dict()


def cmd_conflicts(args) -> dict:
    try:
        timeline = read_timeline_csv(args.timeline)
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(f"cannot read timeline: {exc}", EXIT_PARSE) from None
    doc = {"detected": detect_conflicts(timeline).as_dict()}
    resolved = resolve_by_priority(timeline)
    doc["resolved"] = [{"group": ev.group, "phase": ev.phase, "start_ms": ev.start, "end_ms": ev.end,
                        "label": ev.label} for ev in resolved]
    doc["remaining"] = len(detect_conflicts(resolved))
    return doc


def cmd_expand(args) -> dict:
    e, cp, capacity = args.e, args.cp, args.switch_capacity
    if args.model is not None:
        _, parallel = load_model(args.model)
        e = e or parallel.e
        cp = cp or parallel.cp
    if args.cluster is not None and capacity is None:
        capacity = load_cluster(args.cluster).switch_capacity
    if e is None or cp is None:
        raise CliError("expand needs --e and --cp (or a --model with a [parallel] section)", EXIT_PARSE)
    doc = plan_expansion(e, cp, capacity or 0).as_dict()
    if args.tokens_per_ep_group:
        doc["context_capacity"] = context_capacity(cp, args.tokens_per_ep_group)
    return doc


def cmd_calibrate(args) -> dict:
    _require(args, "cluster", "model")
    cluster = load_cluster(args.cluster)
    _, parallel = load_model(args.model)
    try:
        samples = read_samples(args.bench)
        cal = calibrate(samples, cluster, parallel.t, parallel.e, fit_overhead=not args.no_overhead_fit,
                        i_minimal=args.i_minimal, alpha_baseline=args.alpha_baseline_ms / 1e3)
    except OSError as exc:
        raise CliError(f"cannot read benchmark file: {exc}", EXIT_PARSE) from None
    except CalibrationDataError as exc:
        raise CliError(str(exc), EXIT_CALIBRATION) from None
    doc = {
        "curves": {name: [list(p) for p in getattr(cal.curves, name).points]
                   for name in ("alltoall", "allgather", "d2d", "allgather_o3", "d2d_o3")
                   if getattr(cal.curves, name) is not None},
        "overhead_ms": {"alpha_comm": cal.overhead.alpha_comm * 1e3,
                        "alpha_copy": cal.overhead.alpha_copy * 1e3,
                        "alpha_baseline": cal.overhead.alpha_baseline * 1e3},
    }
    if args.curves_out:
        cal.write(args.curves_out)
        doc["written"] = str(args.curves_out)
    return doc


def cmd_verify_dataplane(args) -> int:
    rng = np.random.default_rng(args.seed)
    level = StrategyLevel(args.level)
    n = 1 if level is StrategyLevel.O1 else args.n
    failures = 0
    for trial in range(args.trials):
        inst = random_instance(rng, args.e, args.t, args.seq_len * n, args.hidden, args.k)
        res = verify_instance(inst, level, n)
        if res.ok:
            print(f"PASS trial={trial} t={args.t} e={args.e} n={n} level={level.value}")
        else:
            failures += 1
            print(f"FAIL trial={trial} t={args.t} e={args.e} n={n} level={level.value}: "
                  f"{res.message} at card={res.card} position={res.position}")
    return EXIT_OK if failures == 0 else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", default=argparse.SUPPRESS, help="model config (.cfg)")
    common.add_argument("--cluster", default=argparse.SUPPRESS, help="cluster config (.cfg)")
    common.add_argument("--curves", default=argparse.SUPPRESS, help="directory of efficiency curves")
    common.add_argument("--output", default=argparse.SUPPRESS, help="write JSON here instead of stdout")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="moeplan", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--model")
    parser.add_argument("--cluster")
    parser.add_argument("--curves")
    parser.add_argument("--output")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", parents=[common], help="select the AllToAll strategy")
    p.add_argument("--max-chunks", type=int, default=64)
    p.add_argument("--seq-len", type=int, help="override the model's sequence length")
    p.add_argument("--non-comm-ms", type=float, help="non-AllToAll time per step, for perf output")
    p.add_argument("--moe-layers", type=int, help="MoE layers per step (default: model l)")

    p = sub.add_parser("simulate", parents=[common], help="multi-stream schedule of one MoE layer")
    p.add_argument("--level", choices=[lv.value for lv in StrategyLevel])
    p.add_argument("--n", type=int)
    p.add_argument("--aa-ms", type=float, help="explicit per-chunk AllToAll time")
    p.add_argument("--ag-ms", type=float)
    p.add_argument("--d2d-ms", type=float)
    p.add_argument("--expert-ms", type=float)
    p.add_argument("--phases", type=int, choices=(1, 2), default=2)
    p.add_argument("--gantt", help="also write a CSV trace here")
    p.add_argument("--max-chunks", type=int, default=64)
    p.add_argument("--seq-len", type=int)

    p = sub.add_parser("memory", parents=[common], help="per-GPU memory footprint")
    p.add_argument("--zero", choices=[z.value for z in ZeroStage], default="Baseline")
    p.add_argument("--activation", choices=[m.value for m in ActivationMode], default="NoParallel")

    p = sub.add_parser("conflicts", parents=[common], help="inter-node conflict analysis")
    p.add_argument("timeline", help="CSV: group,resource,phase,start_ms,end_ms,label")

    p = sub.add_parser("expand", parents=[common], help="cluster expansion plan")
    p.add_argument("--e", type=int)
    p.add_argument("--cp", type=int)
    p.add_argument("--switch-capacity", type=int)
    p.add_argument("--tokens-per-ep-group", type=int)

    p = sub.add_parser("verify-dataplane", parents=[common], help="chunked vs monolithic dispatch")
    p.add_argument("--t", type=int, default=2)
    p.add_argument("--e", type=int, default=2)
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--level", choices=["O1", "O2", "O3"], default="O3")
    p.add_argument("--seq-len", type=int, default=8, help="tokens per chunk per source")
    p.add_argument("--hidden", type=int, default=4)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--trials", type=int, default=1)

    p = sub.add_parser("calibrate", parents=[common], help="fit efficiency curves from benchmarks")
    p.add_argument("bench", help="CSV: primitive,volume_bytes,measured_seconds")
    p.add_argument("--curves-out", help="directory to write curve CSVs and calibration.cfg")
    p.add_argument("--no-overhead-fit", action="store_true")
    p.add_argument("--i-minimal", type=float, default=0.0)
    p.add_argument("--alpha-baseline-ms", type=float, default=0.0)
    return parser


COMMANDS = {
    "plan": cmd_plan,
    "simulate": cmd_simulate,
    "memory": cmd_memory,
    "conflicts": cmd_conflicts,
    "expand": cmd_expand,
    "calibrate": cmd_calibrate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "verify-dataplane":
            return cmd_verify_dataplane(args)
        doc = COMMANDS[args.command](args)
        inputs = {k: getattr(args, k, None) for k in ("model", "cluster", "curves", "timeline", "bench")}
        doc["manifest"] = manifest(args.command, inputs)
        _emit(doc, args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

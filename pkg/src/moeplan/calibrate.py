"""Turn benchmark timings into efficiency curves and fixed overheads.

Each sample is one call of a primitive moving ``volume`` bytes per rank. The
ideal time is the bytes on the wire over the link bandwidth; the efficiency
is ideal time over measured time once the fixed per-call overhead is removed.
"""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .commcost import OverheadModel
from .config import CALIBRATION_FILE, ClusterSpec, CurveSet, EfficiencyCurve, write_curve_csv

PRIMITIVES = ("alltoall", "allgather", "d2d", "allgather_o3", "d2d_o3")
_COMM = ("alltoall", "allgather", "allgather_o3")


class CalibrationDataError(ValueError):
    pass


@dataclass(frozen=True)
class Sample:
    primitive: str
    volume: float
    seconds: float


@dataclass(frozen=True)
class CalibrationSet:
    curves: CurveSet
    overhead: OverheadModel
    i_minimal: float = 0.0

    def write(self, directory: str | Path) -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        written = []
        for name in PRIMITIVES:
            curve = getattr(self.curves, name)
            if curve is not None:
                path = directory / f"{name}.csv"
                write_curve_csv(path, curve.points)
                written.append(path)
        cfg = directory / CALIBRATION_FILE
        o = self.overhead
        cfg.write_text(
            "[gate]\n"
            f"i_minimal = {self.i_minimal!r}\n\n"
            "[overhead]\n"
            f"alpha_comm = {o.alpha_comm!r}\n"
            f"alpha_copy = {o.alpha_copy!r}\n"
            f"alpha_baseline = {o.alpha_baseline!r}\n"
        )
        written.append(cfg)
        return written


def read_samples(path: str | Path) -> list[Sample]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = set(reader.fieldnames or ())
        vol_col = "volume_bytes" if "volume_bytes" in cols else "volume"
        if not {"primitive", vol_col, "measured_seconds"} <= cols:
            raise CalibrationDataError(f"{path}: need columns primitive,volume_bytes,measured_seconds")
        samples = []
        for row in reader:
            prim = row["primitive"].strip()
            if prim not in PRIMITIVES:
                raise CalibrationDataError(f"{path}: unknown primitive {prim!r}")
            try:
                samples.append(Sample(prim, float(row[vol_col]), float(row["measured_seconds"])))
            except ValueError as exc:
                raise CalibrationDataError(f"{path}: {exc}") from None
    return samples


def ideal_seconds(primitive: str, volume: float, cluster: ClusterSpec, t: int, e: int) -> float:
    """Transfer time at 100% efficiency for one call."""
    if primitive == "alltoall":
        return volume * (e - 1) / e / cluster.B1
    if primitive.startswith("allgather"):
        return volume * (t - 1) / t / cluster.B2
    return volume / cluster.B3


def fit_intercept(x: np.ndarray, y: np.ndarray, small_fraction: float = 0.5) -> float:
    """Least-squares intercept of y against x over the smallest-x samples, floored at 0."""
    order = np.argsort(x)
    m = max(2, math.ceil(len(x) * small_fraction))
    xs, ys = x[order][:m], y[order][:m]
    if np.ptp(xs) == 0:
        return 0.0
    _, intercept = np.polyfit(xs, ys, 1)
    return max(0.0, float(intercept))


def calibrate(samples: list[Sample], cluster: ClusterSpec, t: int, e: int,
              fit_overhead: bool = True, i_minimal: float = 0.0,
              alpha_baseline: float = 0.0) -> CalibrationSet:
    by_prim: dict[str, list[Sample]] = defaultdict(list)
    for s in samples:
        if s.volume <= 0 or s.seconds <= 0:
            raise CalibrationDataError(f"{s.primitive}: volume and time must be positive")
        by_prim[s.primitive].append(s)
    for name in ("alltoall", "allgather", "d2d"):
        if len(by_prim.get(name, ())) < 2:
            raise CalibrationDataError(f"need at least 2 samples for {name}, got {len(by_prim.get(name, ()))}")
    for name, group in by_prim.items():
        if len(group) < 2:
            raise CalibrationDataError(f"need at least 2 samples for {name}, got {len(group)}")

    def arrays(name):
        g = by_prim[name]
        ideal = np.array([ideal_seconds(name, s.volume, cluster, t, e) for s in g])
        return np.array([s.volume for s in g]), ideal, np.array([s.seconds for s in g])

    alpha_comm = alpha_copy = 0.0
    if fit_overhead:
        comm = [fit_intercept(ideal, meas) for name in _COMM if name in by_prim
                for _, ideal, meas in [arrays(name)]]
        alpha_comm = float(np.mean(comm))
        alpha_copy = fit_intercept(*arrays("d2d")[1:])

    curves = {}
    for name in by_prim:
        vol, ideal, meas = arrays(name)
        alpha = alpha_copy if name.startswith("d2d") else alpha_comm
        busy = meas - alpha
        if np.any(busy <= 0):
            raise CalibrationDataError(f"{name}: fitted overhead exceeds a measured time")
        eff = np.minimum(1.0, ideal / busy)
        pts = defaultdict(list)
        for v, r in zip(vol, eff):
            pts[float(v)].append(float(r))
        points = tuple((v, float(np.mean(rs))) for v, rs in sorted(pts.items()))
        curves[name] = EfficiencyCurve(points, i_minimal)
    return CalibrationSet(CurveSet(**curves), OverheadModel(alpha_comm, alpha_copy, alpha_baseline),
                          i_minimal)

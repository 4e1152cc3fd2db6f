"""Shared domain types: model, parallel layout, cluster, efficiency curves.

Config files are plain key/value text with ``[section]`` headers, read with
:mod:`configparser`. A model file carries ``[model]`` and ``[parallel]``
sections; a cluster file carries ``[cluster]``. Efficiency curves are CSV
files with header ``volume_bytes,efficiency``.
"""
from __future__ import annotations

import bisect
import configparser
import csv
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable


class ConfigError(ValueError):
    """Raised when a config or curve file cannot be parsed into a valid spec."""


@dataclass(frozen=True)
class ModelSpec:
    """Model and batch shape.

    ``b`` microbatch size, ``s`` sequence length, ``h`` hidden size, ``a``
    attention heads, ``l`` transformer layers, ``k`` experts per token,
    ``P1``/``P2`` non-MoE/MoE parameter counts, ``BPE`` bytes per element and
    ``n_experts`` the total number of experts.
    """

    b: int
    s: int
    h: int
    a: int
    l: int
    k: int
    P1: float = 0
    P2: float = 0
    BPE: int = 2
    n_experts: int = 0

    def __post_init__(self):
        for name in ("b", "s", "h", "a", "l", "k", "P1", "P2", "n_experts"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.BPE not in (1, 2, 4, 8):
            raise ValueError(f"BPE must be one of 1, 2, 4, 8 (got {self.BPE})")
        if self.n_experts and self.k > self.n_experts:
            raise ValueError("k cannot exceed the total expert count")

    @property
    def experts(self) -> int:
        """Total expert count; defaults to ``k`` when the file leaves it unset."""
        return self.n_experts or max(self.k, 1)


@dataclass(frozen=True)
class ParallelSpec:
    d: int = 1
    p: int = 1
    t: int = 1
    e: int = 1
    cp: int = 1

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 1:
                raise ValueError(f"parallel degree {f.name} must be >= 1")


@dataclass(frozen=True)
class ClusterSpec:
    """Cluster resources. Bandwidths are unidirectional bytes/s, decimal units."""

    nodes: int
    gpus_per_node: int
    B1: float
    B2: float
    B3: float
    peak_flops: float = 312e12
    switch_capacity: int = 0

    def __post_init__(self):
        if self.nodes < 1 or self.gpus_per_node < 1:
            raise ValueError("nodes and gpus_per_node must be >= 1")
        if not (self.B1 > 0 and self.B3 > 0 and self.peak_flops > 0):
            raise ValueError("bandwidths and peak_flops must be positive")
        if self.B2 < self.B1:
            raise ValueError("intra-node bandwidth B2 must be >= inter-node bandwidth B1")
        if self.switch_capacity < 0:
            raise ValueError("switch_capacity must be non-negative")

    @property
    def total_gpus(self) -> int:
        return self.nodes * self.gpus_per_node


@dataclass(frozen=True)
class EfficiencyCurve:
    """Monotone table of (volume bytes, efficiency) with a chunking floor ``i_minimal``."""

    points: tuple[tuple[float, float], ...]
    i_minimal: float = 0.0
    _logv: tuple[float, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        pts = tuple((float(v), float(r)) for v, r in self.points)
        if not pts:
            raise ValueError("efficiency curve needs at least one point")
        for (v0, _), (v1, _) in zip(pts, pts[1:]):
            if not v1 > v0:
                raise ValueError("curve volumes must be strictly increasing")
        for v, r in pts:
            if v <= 0:
                raise ValueError("curve volumes must be positive")
            if not 0 < r <= 1:
                raise ValueError(f"efficiency {r} outside (0, 1]")
        if self.i_minimal < 0:
            raise ValueError("i_minimal must be >= 0")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "_logv", tuple(math.log(v) for v, _ in pts))

    @classmethod
    def constant(cls, efficiency: float, i_minimal: float = 0.0) -> "EfficiencyCurve":
        return cls(((1.0, efficiency),), i_minimal)


def lookup_efficiency(curve: EfficiencyCurve, volume: float) -> float:
    """Efficiency at ``volume`` bytes, linear in log(volume), clamped at the ends."""
    if not volume > 0:
        raise ValueError(f"volume must be positive (got {volume})")
    pts = curve.points
    x = math.log(volume)
    logv = curve._logv
    if x <= logv[0]:
        return pts[0][1]
    if x >= logv[-1]:
        return pts[-1][1]
    i = bisect.bisect_right(logv, x)
    x0, x1 = logv[i - 1], logv[i]
    r0, r1 = pts[i - 1][1], pts[i][1]
    return r0 + (r1 - r0) * (x - x0) / (x1 - x0)


@dataclass(frozen=True)
class CurveSet:
    """Efficiency curves per primitive.

    O3 runs gather and copy kernels concurrently, which changes their
    efficiency; ``allgather_o3``/``d2d_o3`` default to the O2 curves.
    """

    alltoall: EfficiencyCurve
    allgather: EfficiencyCurve
    d2d: EfficiencyCurve
    allgather_o3: EfficiencyCurve | None = None
    d2d_o3: EfficiencyCurve | None = None

    def gather_curve(self, o3: bool = False) -> EfficiencyCurve:
        return (self.allgather_o3 or self.allgather) if o3 else self.allgather

    def copy_curve(self, o3: bool = False) -> EfficiencyCurve:
        return (self.d2d_o3 or self.d2d) if o3 else self.d2d

    @classmethod
    def constant(cls, r1: float, r2: float, r3: float, i_minimal: float = 0.0) -> "CurveSet":
        return cls(
            EfficiencyCurve.constant(r1, i_minimal),
            EfficiencyCurve.constant(r2, i_minimal),
            EfficiencyCurve.constant(r3, i_minimal),
        )


def validate(model: ModelSpec, parallel: ParallelSpec, cluster: ClusterSpec) -> list[str]:
    """List layout violations; an empty list means the configuration fits the cluster."""
    problems = []
    gpn = cluster.gpus_per_node
    if gpn % parallel.t:
        problems.append(f"tensor-parallel degree t={parallel.t} does not divide gpus_per_node={gpn}")
    else:
        groups = cluster.nodes * (gpn // parallel.t)
        if parallel.e > groups:
            problems.append(
                f"expert-parallel degree e={parallel.e} exceeds the {groups} tensor-parallel groups available"
            )
    used = parallel.d * parallel.p * parallel.t * parallel.cp
    if used > cluster.total_gpus:
        problems.append(f"d*p*t*cp={used} exceeds the cluster's {cluster.total_gpus} GPUs")
    return problems


# -- file loading -----------------------------------------------------------

_INT_FIELDS = {"b", "s", "h", "a", "l", "k", "BPE", "n_experts", "d", "p", "t", "e", "cp",
               "nodes", "gpus_per_node", "switch_capacity"}


def _number(key: str, raw: str):
    try:
        value = float(raw)
    except ValueError:
        raise ConfigError(f"{key}: not a number: {raw!r}") from None
    if key in _INT_FIELDS:
        if value != int(value):
            raise ConfigError(f"{key}: expected an integer, got {raw!r}")
        return int(value)
    return value


def _read_sections(path: str | Path) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keep P1/B1 case
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parser


def _build(cls, parser: configparser.ConfigParser, section: str, path, required: bool = True):
    if not parser.has_section(section):
        if required:
            raise ConfigError(f"{path}: missing [{section}] section")
        return cls()
    names = {f.name for f in fields(cls) if f.init}
    kwargs = {}
    for key, raw in parser.items(section):
        if key not in names:
            raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
        kwargs[key] = _number(key, raw)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: [{section}]: {exc}") from exc


def load_model(path: str | Path) -> tuple[ModelSpec, ParallelSpec]:
    parser = _read_sections(path)
    return _build(ModelSpec, parser, "model", path), _build(ParallelSpec, parser, "parallel", path, False)


def load_cluster(path: str | Path) -> ClusterSpec:
    return _build(ClusterSpec, _read_sections(path), "cluster", path)


def read_curve_csv(path: str | Path, i_minimal: float = 0.0) -> EfficiencyCurve:
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or {"volume_bytes", "efficiency"} - set(reader.fieldnames):
                raise ConfigError(f"{path}: header must be volume_bytes,efficiency")
            rows = [(float(r["volume_bytes"]), float(r["efficiency"])) for r in reader]
        return EfficiencyCurve(tuple(rows), i_minimal)
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: {exc}") from exc


def write_curve_csv(path: str | Path, points: Iterable[tuple[float, float]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["volume_bytes", "efficiency"])
        for v, r in points:
            w.writerow([repr(float(v)), repr(float(r))])


CURVE_FILES = ("alltoall", "allgather", "d2d", "allgather_o3", "d2d_o3")
CALIBRATION_FILE = "calibration.cfg"


def load_curves(directory: str | Path):
    """Load a curves directory: CSVs per primitive plus optional ``calibration.cfg``.

    ``calibration.cfg`` may hold ``[gate] i_minimal`` and an ``[overhead]``
    section (``alpha_comm``, ``alpha_copy``, ``alpha_baseline`` in seconds).
    Returns ``(CurveSet, OverheadModel)``.
    """
    from .commcost import OverheadModel

    directory = Path(directory)
    if not directory.is_dir():
        raise ConfigError(f"{directory}: not a directory")
    i_minimal = 0.0
    overhead = OverheadModel()
    cfg = directory / CALIBRATION_FILE
    if cfg.exists():
        parser = _read_sections(cfg)
        if parser.has_option("gate", "i_minimal"):
            i_minimal = _number("i_minimal", parser.get("gate", "i_minimal"))
        overhead = _build(OverheadModel, parser, "overhead", cfg, required=False)
    curves = {}
    for name in CURVE_FILES:
        path = directory / f"{name}.csv"
        if path.exists():
            curves[name] = read_curve_csv(path, i_minimal)
        elif name in ("alltoall", "allgather", "d2d"):
            raise ConfigError(f"{directory}: missing {name}.csv")
    return CurveSet(**curves), overhead

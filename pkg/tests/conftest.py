from pathlib import Path

import pytest

from moeplan.config import ClusterSpec, CurveSet, EfficiencyCurve, ModelSpec, ParallelSpec

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture
def configs():
    return CONFIGS


@pytest.fixture
def a800():
    """Two-node A800 cluster."""
    return ClusterSpec(nodes=2, gpus_per_node=8, B1=25e9, B2=200e9, B3=1.6e12,
                       peak_flops=312e12, switch_capacity=16)


@pytest.fixture
def ref_layout():
    return ParallelSpec(d=2, p=1, t=8, e=2)


@pytest.fixture
def model_8k():
    return ModelSpec(b=2, s=8192, h=8192, a=64, l=80, k=1, P1=10e9, P2=130e9, BPE=2, n_experts=2)


@pytest.fixture
def ref_curves():
    """Reference efficiency points, interpolated log-linearly."""
    return CurveSet(
        EfficiencyCurve(((8e6, 0.427), (32e6, 0.632), (256e6, 0.741)), 1e6),
        EfficiencyCurve(((64e6, 0.726), (256e6, 0.776)), 1e6),
        EfficiencyCurve(((64e6, 0.8),), 1e6),
    )


@pytest.fixture
def synthetic_curves():
    """Monotone curves shaped like measured IB/NVLink utilisation."""
    return CurveSet(
        EfficiencyCurve(((1e5, 0.05), (1e6, 0.2), (1e7, 0.45), (1e8, 0.7), (1e9, 0.8))),
        EfficiencyCurve(((1e5, 0.1), (1e6, 0.3), (1e7, 0.6), (1e8, 0.75), (1e9, 0.85))),
        EfficiencyCurve(((1e5, 0.3), (1e8, 0.8))),
    )


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

"""Traffic-aware planning and simulation of MoE AllToAll communication."""
__version__ = "0.1.0"

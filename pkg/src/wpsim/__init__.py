"""Trace-driven out-of-order core model with wrong-path (WP) replay."""

from .config import SimConfig, load_config
from .core import Core, SimulationAssertion, simulate
from .metrics import CompareReport, RunStats, compare
from .trace import TraceRecord, load_trace, save_trace, validate_trace
from .tracegen import WorkloadSpec, generate

__all__ = [
    "SimConfig", "load_config", "Core", "SimulationAssertion", "simulate",
    "CompareReport", "RunStats", "compare", "TraceRecord", "load_trace",
    "save_trace", "validate_trace", "WorkloadSpec", "generate",
]
__version__ = "0.1.0"

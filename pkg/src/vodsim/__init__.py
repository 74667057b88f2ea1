"""Discrete-event simulator for prefix caching in a main server / tracker /
proxy video-on-demand hierarchy."""

from .config import SimConfig, parse_config
from .engine import MetricsReport, run, simulate, warmup_split
from .experiment import compare_policies, run_experiment, sweep
from .rppcl import Tier

__all__ = [
    "MetricsReport",
    "SimConfig",
    "Tier",
    "compare_policies",
    "parse_config",
    "run",
    "run_experiment",
    "simulate",
    "sweep",
    "warmup_split",
]

__version__ = "0.1.0"

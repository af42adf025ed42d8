"""Trace-driven CPU oversubscription laboratory.

Simulates a fleet of physical machines receiving per-subscriber VM requests
from a workload trace, exposes the hourly oversubscription-rate decision as
a multi-agent environment with a chance constraint on hot machines, and
ships a primal-dual value-decomposition Q-learner plus reference policies
and an evaluation harness.
"""

__version__ = "0.1.0"

from .cluster import Cluster, ClusterConfig, Placement
from .env import EnvConfig, Observation, OversubEnv, StepResult
from .traces import (GeneratorConfig, SubscriberProfile, TraceSet, UsageSeries,
                     VmRecord, generate_synthetic, load_traces,
                     resample_for_eval, scenario_preset, write_traces)

__all__ = [
    "Cluster", "ClusterConfig", "Placement",
    "EnvConfig", "Observation", "OversubEnv", "StepResult",
    "GeneratorConfig", "SubscriberProfile", "TraceSet", "UsageSeries",
    "VmRecord", "generate_synthetic", "load_traces", "resample_for_eval",
    "scenario_preset", "write_traces",
    "__version__",
]

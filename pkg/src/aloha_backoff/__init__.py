"""Throughput, delay and starvation analysis of slotted Aloha with exponential backoff."""

__version__ = "0.1.0"

from .params import (  # noqa: E402
    INFINITE,
    AlohaError,
    ConfigError,
    DomainError,
    FixedPointError,
    InfeasibleLoadError,
    InsufficientReplicationsError,
    ModelViolationError,
    SystemParams,
    UnstableQueueError,
    parse_node_count,
)
from .analytic import (  # noqa: E402
    bbmd,
    critical_node_count,
    optimal_backoff_asymptotic,
    saturation,
    sbmd,
    solve_operating_point,
    throughput_at,
)
from .queueing import Unbounded, mean_delay, service_moments, service_pgf, TransformContext  # noqa: E402
from .simulator import SimConfig, SimStats, replicate, run, run_proxy, run_real  # noqa: E402

__all__ = [
    "__version__", "INFINITE", "AlohaError", "ConfigError", "DomainError", "FixedPointError",
    "InfeasibleLoadError", "InsufficientReplicationsError", "ModelViolationError", "SystemParams",
    "UnstableQueueError", "parse_node_count", "bbmd", "critical_node_count",
    "optimal_backoff_asymptotic", "saturation", "sbmd", "solve_operating_point", "throughput_at",
    "Unbounded", "mean_delay", "service_moments", "service_pgf", "TransformContext", "SimConfig",
    "SimStats", "replicate", "run", "run_proxy", "run_real",
]

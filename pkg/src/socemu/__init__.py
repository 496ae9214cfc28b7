"""socemu: user-space emulation of heterogeneous SoCs.

DAG applications run over a configurable pool of emulated processing
elements under pluggable dynamic schedulers, in real time (one worker
thread per PE) or on a deterministic virtual clock.  Includes a
trace-based tool that converts monolithic block traces into DAG
applications with recognition-based kernel substitution.
"""

from .appmodel import (
    ApplicationError,
    ApplicationSpec,
    emit_application,
    emit_json,
    instantiate,
    parse_application,
    validate_dag,
)
from .engine import EmulationResult, run
from .kernels import KernelRegistry, builtin_suite, fingerprint
from .metrics import compute_report, export_csv, read_trace, write_trace
from .platform import PlatformConfig, build_platform, platform_from_arg, transfer_time
from .schedulers import available_policies, lookup_policy, register_policy
from .workload import build_queue, generate_performance, generate_validation

__version__ = "0.1.0"

__all__ = [
    "ApplicationError",
    "ApplicationSpec",
    "EmulationResult",
    "KernelRegistry",
    "PlatformConfig",
    "available_policies",
    "build_platform",
    "build_queue",
    "builtin_suite",
    "compute_report",
    "emit_application",
    "emit_json",
    "export_csv",
    "fingerprint",
    "generate_performance",
    "generate_validation",
    "instantiate",
    "lookup_policy",
    "parse_application",
    "platform_from_arg",
    "read_trace",
    "register_policy",
    "run",
    "transfer_time",
    "validate_dag",
    "write_trace",
]

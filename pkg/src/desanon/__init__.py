"""Simulator and verification harness for mutex-based desanonymization of
an anonymous read/write memory."""

from desanon.anonmem import (
    BOTTOM, Config, ConfigError, Permutation, ProcessId, ProtocolError,
    control_bits, draw_permutations, is_in_M, next_in_M,
)
from desanon.sched import RandomScheduler, RoundRobin, explore, replay, run
from desanon.verify import check_equivariance, run_checks

__version__ = "0.1.0"

__all__ = [
    "BOTTOM", "Config", "ConfigError", "Permutation", "ProcessId", "ProtocolError",
    "control_bits", "draw_permutations", "is_in_M", "next_in_M",
    "RandomScheduler", "RoundRobin", "explore", "replay", "run",
    "check_equivariance", "run_checks",
]

"""Autonomous membership service for enclave applications, in simulation."""
from .types import (
    OWNER, Add, ClusterCensus, ConfigError, ContractViolation, Dominance, Expel, LogEntry, PeerList,
    PreShutdown, ProcessId, ReplicatedLog, TimeoutConfig, fold_peers, is_anarchy, log_dominates,
    majority_quorum,
)
from .engine import EngineParams, Process, ProcessState, Role, bootstrap_first, draw_timeout

__all__ = [
    "OWNER", "Add", "ClusterCensus", "ConfigError", "ContractViolation", "Dominance", "Expel", "LogEntry",
    "PeerList", "PreShutdown", "ProcessId", "ReplicatedLog", "TimeoutConfig", "fold_peers", "is_anarchy",
    "log_dominates", "majority_quorum", "EngineParams", "Process", "ProcessState", "Role", "bootstrap_first",
    "draw_timeout",
]

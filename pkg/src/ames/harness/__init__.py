"""Scenario runner, trace observers and latency experiments."""
from .observers import Violation, check_convergence, check_safety
from .scenario import RunResult, Scenario, ScenarioError, parse_scenario, render_scenario, run_scenario, validate

__all__ = [
    "RunResult", "Scenario", "ScenarioError", "Violation", "check_convergence", "check_safety",
    "parse_scenario", "render_scenario", "run_scenario", "validate",
]

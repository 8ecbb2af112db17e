"""Deterministic simulator of multi-domain ledgers run by Contract Service Provider communities."""

from __future__ import annotations

from .report import build_report, verify_report
from .scenario import gen_scenario, load_scenario
from .world import World, run_world

__version__ = "0.1.0"

__all__ = ["World", "build_report", "gen_scenario", "load_scenario", "run_world", "verify_report"]

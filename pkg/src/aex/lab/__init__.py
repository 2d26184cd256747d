"""Loopback testbed: gateway (verifier), two trusted proxies and a provider simulator."""

from .common import Fault, Flow, LabConfig
from .scenarios import BENCH_SCENARIOS, SCENARIOS, Scenario, get_scenario, run_scenario, summarize
from .topology import LabTopology
from .trace import RunTrace, load_trace, replay_trace

__all__ = [
    "BENCH_SCENARIOS",
    "Fault",
    "Flow",
    "LabConfig",
    "LabTopology",
    "RunTrace",
    "SCENARIOS",
    "Scenario",
    "get_scenario",
    "load_trace",
    "replay_trace",
    "run_scenario",
    "summarize",
]

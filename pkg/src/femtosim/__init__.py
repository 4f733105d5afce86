"""Discrete-event simulator for two-tier femtocell/macrocell networks."""

from .config import ScenarioConfig, load_scenario, parse_scenario
from .engine import Simulation, run_replicates, run_scenario
from .report import MetricsReport

__all__ = ["ScenarioConfig", "load_scenario", "parse_scenario", "Simulation", "run_scenario",
           "run_replicates", "MetricsReport"]
__version__ = "0.1.0"

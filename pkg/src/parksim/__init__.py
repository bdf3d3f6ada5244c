"""Discrete-event simulator for parking-sensor networks under duty-cycled MAC protocols."""
from .scenario import ScenarioConfig, build_topology, resolve, validate
from .simulation import RunResult, run_scenario
from .traffic import PARKING_TIME, VACANT_TIME, WeibullParams, fit_sum_weibull

__version__ = "0.1.0"

__all__ = [
    "PARKING_TIME",
    "VACANT_TIME",
    "RunResult",
    "ScenarioConfig",
    "WeibullParams",
    "build_topology",
    "fit_sum_weibull",
    "resolve",
    "run_scenario",
    "validate",
]

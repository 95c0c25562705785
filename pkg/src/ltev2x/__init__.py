"""System-level simulator for V2X messaging over the LTE-Uu interface."""

from .config import ConfigError, RunConfig, parse_config
from .kpi import KpiSummary, cdf_points, merge, summarize
from .pipelines import DeliveryRecord, Simulation, run_simulation

__all__ = [
    "ConfigError",
    "DeliveryRecord",
    "KpiSummary",
    "RunConfig",
    "Simulation",
    "cdf_points",
    "merge",
    "parse_config",
    "run_simulation",
    "summarize",
]

__version__ = "0.1.0"

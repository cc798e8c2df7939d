"""C-V2X sidelink mode-4 simulation, two-distance reception model and
gradient-based mobility updates (GBMU)."""

from .config import ConfigError, ScenarioConfig
from .engine import SampleLog, Simulation, run_realization
from .gbmu import GbmuConfig, ReceiverView, Snapshot, run_batch, run_gbmu, utility, utility_gain
from .regression import CoefficientTable, fit, load_table, reference_table, save_table

__all__ = [
    "CoefficientTable",
    "ConfigError",
    "GbmuConfig",
    "ReceiverView",
    "SampleLog",
    "ScenarioConfig",
    "Simulation",
    "Snapshot",
    "fit",
    "load_table",
    "reference_table",
    "run_batch",
    "run_gbmu",
    "run_realization",
    "save_table",
    "utility",
    "utility_gain",
]

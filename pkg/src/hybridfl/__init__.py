"""Simulation of hybrid federated learning over an edge-cloud hierarchy."""

from .runner import ExperimentSpec, compare_protocols, preset_config, run_experiment
from .sklearn_api import FederatedMLPClassifier, FederatedMLPRegressor
from .topology import ConfigError, SimConfig

__all__ = ["ConfigError", "ExperimentSpec", "FederatedMLPClassifier", "FederatedMLPRegressor",
           "SimConfig", "compare_protocols", "preset_config", "run_experiment"]
__version__ = "0.1.0"

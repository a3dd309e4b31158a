"""Multi-model federated learning over multi-group multicast downlinks."""

from .config import ExperimentConfig, load_config
from .experiment import MetricRecord, run_baseline_singlemodel, run_experiment

__all__ = ["ExperimentConfig", "MetricRecord", "load_config", "run_baseline_singlemodel",
           "run_experiment"]
__version__ = "0.1.0"

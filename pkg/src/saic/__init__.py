"""Task-based observation compression for a two-agent rendezvous grid world."""
from .gridworld import GridSpec, Move
from .qcore import TrainConfig, RunRecord
from .aggregation import Partition
from .schemes import SCHEMES, SchemeResult, run_scheme
from .harness import ExperimentConfig, load_config, run_sweep

__all__ = ["GridSpec", "Move", "TrainConfig", "RunRecord", "Partition", "SCHEMES",
           "SchemeResult", "run_scheme", "ExperimentConfig", "load_config", "run_sweep"]
__version__ = "0.1.0"

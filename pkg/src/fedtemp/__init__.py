"""Federated learning simulator for studying temperature-scaling calibration attacks."""

from .config import ExperimentConfig, load_config, parse_config
from .data import Dataset, dirichlet_partition, load_idx, synth_blobs
from .engine import ClientUpdate, LocalTrainSpec, fedavg, local_train
from .estimator import FederatedClassifier
from .exceptions import (
    ConfigParseError,
    ConfigurationError,
    DomainError,
    EmptyShardError,
    FormatError,
    ProtocolError,
)
from .harness import ResultsArchive, run, sweep
from .nn import ModelParams, backward, forward, init_params, softmax
from .simulation import Experiment, run_experiment

__version__ = "0.1.0"

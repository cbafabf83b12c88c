"""Gossip stochastic gradient descent with EASGD and no-exchange baselines."""

from .baselines import CenterState, EasgdConfig, plain_sgd
from .errors import (
    ConfigError,
    DeadlockError,
    DimensionError,
    DivergenceError,
    DomainError,
    GossipError,
    IngestionError,
)
from .harness import RunRecord, ScheduleMode, consensus_decay_experiment, figure1_protocol, run_experiment
from .numeric_core import RandomSource
from .objectives import Dataset, LogisticObjective, MLPObjective, QuadraticObjective, load_csv_dataset
from .protocol import GossipConfig, GossipMessage, WorkerState, init_workers

__version__ = "0.1.0"

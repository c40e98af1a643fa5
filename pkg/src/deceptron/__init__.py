"""Deceptron: learned bidirectional surrogates with Jacobian composition
penalties, a safeguarded inverse solver (D-IPG), classical baselines,
desk-scale PDE inverse problems, numeric theory checks, and a benchmark
harness.
"""

from .core import (Deceptron, ProbeConfig, jcp_loss, load_deceptron, rjcp,
                   rjcp_batch_mean, sample_probes, save_deceptron, seeded_rng)
from .dipg import DipgConfig, SolveTrace, solve, warm_start
from .estimator import DeceptronEstimator
from .nets import DenseNet, init_dense, load_net, save_net
from .problems import Dataset, Problem, make_dataset, make_problem
from .training import TrainConfig, default_train_config, train_three_stage

__version__ = "0.1.0"

__all__ = [
    "Deceptron", "DeceptronEstimator", "DenseNet", "Dataset", "DipgConfig",
    "Problem", "ProbeConfig", "SolveTrace", "TrainConfig",
    "default_train_config", "init_dense", "jcp_loss", "load_deceptron",
    "load_net", "make_dataset", "make_problem", "rjcp", "rjcp_batch_mean",
    "sample_probes", "save_deceptron", "save_net", "seeded_rng", "solve",
    "train_three_stage", "warm_start", "__version__",
]

"""Input-convex neural network surrogates for distribution-grid voltage regulation."""

__version__ = "0.1.0"

# the submodules train and regulate keep their names; their main functions
# are reached as icnnvolt.train.train and icnnvolt.regulate.regulate

from .distributed import CommGraph, DistributedConfig, run_distributed
from .grid import Dataset, LoadProfileConfig, Network, generate_dataset, make_test_feeder, solve_power_flow
from .icnn import Activation, IcnnModel, forward, init_model
from .maxaffine import MaxAffine, enumerate_pieces, fit_max_affine, icnn_from_max_affine
from .regulate import RegulateConfig, regulate_batch
from .train import TrainConfig, fit_icnn

__all__ = [
    "Activation", "CommGraph", "Dataset", "DistributedConfig", "IcnnModel", "LoadProfileConfig",
    "MaxAffine", "Network", "RegulateConfig", "TrainConfig", "enumerate_pieces", "fit_icnn",
    "fit_max_affine", "forward", "generate_dataset", "icnn_from_max_affine", "init_model",
    "make_test_feeder", "regulate_batch", "run_distributed", "solve_power_flow",
]

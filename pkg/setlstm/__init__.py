"""
SET-LSTM - Sparse Evolutionary Training for LSTM text classifiers

Truly sparse weight storage, Erdos-Renyi initialization, prune-and-regrow
rewiring, sparse LSTM cells and embeddings trained by backpropagation through
time, and the experiment runners built on them.
"""

__version__ = "1.0.0"

from .config import InitMode, ModelVariant, TrainConfig
from .errors import SetLstmError
from .neural import ModelDims, SetLstmModel, param_count
from .sparse import ConnectionSet, SparseMatrix
from .trainer import TrainingState, evaluate, train

__all__ = [
    "ConnectionSet",
    "InitMode",
    "ModelDims",
    "ModelVariant",
    "SetLstmError",
    "SetLstmModel",
    "SparseMatrix",
    "TrainConfig",
    "TrainingState",
    "evaluate",
    "param_count",
    "train",
]

"""Relation-aware image captioning on numpy: gated GCN over a semantic
region graph, Region-BERT encoder and a mixture-attention LSTM decoder."""
from .config import Config
from .errors import ContractError, DatasetError, DimensionError, NonFiniteError, TrainingError
from .numcore import ParamStore, Tape

__all__ = ["Config", "ContractError", "DatasetError", "DimensionError", "NonFiniteError",
           "ParamStore", "Tape", "TrainingError"]
__version__ = "0.1.0"

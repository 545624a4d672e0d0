"""Multimodal fusion adapters in a small encoder-decoder, from scratch.

The package builds up from a tiny autodiff tensor core to a trainable
dialogue-to-explanation model whose encoder fuses audio/video context
through gated adapters, plus the dataset, metric, and experiment tooling
needed to measure what the fusion pathway contributes.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    ContractError,
    MafError,
    ParseError,
    ShapeError,
    TrainingDivergedError,
    ValidationError,
)
from .tensor import Tensor

__all__ = [
    "__version__",
    "Tensor",
    "MafError",
    "ShapeError",
    "ContractError",
    "ParseError",
    "ValidationError",
    "ConfigError",
    "TrainingDivergedError",
]

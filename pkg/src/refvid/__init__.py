"""Referential grounded video dialogue toolkit."""

__version__ = "0.1.0"

from .aggregator import AggregatorConfig, STCAggregator, VideoFeatures
from .model import GroundedVideoModel, ModelConfig, TrainConfig
from .tokenizer import Tokenizer

__all__ = [
    "AggregatorConfig",
    "GroundedVideoModel",
    "ModelConfig",
    "STCAggregator",
    "Tokenizer",
    "TrainConfig",
    "VideoFeatures",
    "__version__",
]

"""Local patch detector: network, training loop and checkpoints."""

from .checkpoint import load_checkpoint, save_checkpoint
from .dct import dct2d, idct2d
from .layers import SELU_ALPHA, SELU_LAMBDA, ChannelAttention, SpatialAttention, selu
from .network import (LayerSpec, PatchDetector, architecture_violations, check_architecture, default_layers,
                      forward, predict_proba)
from .training import EarlyStopping, TrainConfig, TrainResult, learning_rate, train

__all__ = [
    "ChannelAttention", "EarlyStopping", "LayerSpec", "PatchDetector", "SELU_ALPHA", "SELU_LAMBDA",
    "SpatialAttention", "TrainConfig", "TrainResult", "architecture_violations", "check_architecture",
    "dct2d", "default_layers", "forward", "idct2d", "learning_rate", "load_checkpoint", "predict_proba",
    "save_checkpoint", "selu", "train",
]

"""Minimal convolutional encoder-decoder regressor with explicit reverse-mode
differentiation, trained with Adam on an L1 objective."""

from .data import BatchGenerator, DataGenConfig, make_training_pair, reference_envelope_mean
from .network import (
    LayerSpec,
    NetworkWeights,
    build_network,
    forward_network,
    backward_network,
    load_weights,
    loss_l1,
    new_network,
    parameter_count,
    predict_raw,
    save_weights,
)
from .optim import AdamState, TrainConfig, adam_step
from .training import train, train_from_config

__all__ = [
    "AdamState",
    "BatchGenerator",
    "DataGenConfig",
    "LayerSpec",
    "NetworkWeights",
    "TrainConfig",
    "adam_step",
    "backward_network",
    "build_network",
    "forward_network",
    "load_weights",
    "loss_l1",
    "make_training_pair",
    "new_network",
    "parameter_count",
    "predict_raw",
    "reference_envelope_mean",
    "save_weights",
    "train",
    "train_from_config",
]

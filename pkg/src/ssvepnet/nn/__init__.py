"""From-scratch differentiable layers for the SCU networks and recurrent baselines."""
from .layers import BatchNorm1d, Conv1d, Dense, Dropout, Flatten, Layer, MaxPool1d, ReLU, relu
from .losses import cce_loss, l2_penalty, one_hot, softmax, softmax_cce_grad
from .network import (Network, grad_check, load_checkpoint, network_from_descriptor,
                      save_checkpoint)
from .optim import AdamState, adam_step
from .recurrent import Recurrent

__all__ = [
    "AdamState", "BatchNorm1d", "Conv1d", "Dense", "Dropout", "Flatten", "Layer", "MaxPool1d",
    "Network", "ReLU", "Recurrent", "adam_step", "cce_loss", "grad_check", "l2_penalty",
    "load_checkpoint", "network_from_descriptor", "one_hot", "relu", "save_checkpoint", "softmax",
    "softmax_cce_grad",
]

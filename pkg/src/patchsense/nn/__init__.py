"""Minimal differentiable kernel: sequence layers, BCE loss and plain SGD."""
from ._backend import available_backends, backend_name, set_backend, use_backend
from .checkpoint import dumps_checkpoint, graph_from_dict, load_checkpoint, save_checkpoint
from .layers import (
    GRU,
    LSTM,
    Conv1D,
    Dense,
    Dropout,
    Flatten,
    Layer,
    LayerGraph,
    MaxPooling1D,
    ShapeError,
    bce_grad,
    bce_loss,
    param_count,
    sgd_step,
    sigmoid,
)

__all__ = [
    "GRU",
    "LSTM",
    "Conv1D",
    "Dense",
    "Dropout",
    "Flatten",
    "Layer",
    "LayerGraph",
    "MaxPooling1D",
    "ShapeError",
    "available_backends",
    "backend_name",
    "bce_grad",
    "bce_loss",
    "dumps_checkpoint",
    "graph_from_dict",
    "load_checkpoint",
    "param_count",
    "save_checkpoint",
    "set_backend",
    "sgd_step",
    "sigmoid",
    "use_backend",
]

"""The three sequence classifiers, parameterized by input length."""
from __future__ import annotations

from typing import Callable, Optional

from .domain import FEATURE_DIM
from .nn import GRU, LSTM, Conv1D, Dense, Dropout, Flatten, LayerGraph, MaxPooling1D, ShapeError

DEFAULT_DROPOUT = 0.5
RECURRENT_UNITS = (100, 50, 25, 12)


def build_conv1d(
    length: int, features: int = FEATURE_DIM, *, dropout: float = DEFAULT_DROPOUT, seed: Optional[int] = 0
) -> LayerGraph:
    if length < 4:
        raise ShapeError(f"Conv1D model needs input length >= 4, got {length}")
    layers = [
        Conv1D(64, kernel_size=2),
        MaxPooling1D(2),
        Flatten(),
        Dense(256, "relu"),
        Dropout(dropout),
        Dense(64, "relu"),
        Dropout(dropout),
        Dense(64, "relu"),
        Dropout(dropout),
        Dense(1, "sigmoid"),
    ]
    return _finish(LayerGraph(layers, (length, features), name="conv1d"), seed)


def _recurrent(cell, name, length, features, seed):
    if length < 1:
        raise ShapeError(f"{name} model needs input length >= 1")
    *seq_units, last = RECURRENT_UNITS
    layers = [cell(u, return_sequences=True) for u in seq_units]
    layers += [cell(last, return_sequences=False), Dense(1, "sigmoid")]
    return _finish(LayerGraph(layers, (length, features), name=name), seed)


def build_lstm(length: int, features: int = FEATURE_DIM, *, seed: Optional[int] = 0, **_) -> LayerGraph:
    return _recurrent(LSTM, "lstm", length, features, seed)


def build_gru(length: int, features: int = FEATURE_DIM, *, seed: Optional[int] = 0, **_) -> LayerGraph:
    return _recurrent(GRU, "gru", length, features, seed)


def _finish(graph: LayerGraph, seed: Optional[int]) -> LayerGraph:
    # seed=None leaves every parameter at zero.
    if seed is not None:
        graph.initialize(seed)
    return graph


BUILDERS: dict[str, Callable[..., LayerGraph]] = {
    "conv1d": build_conv1d,
    "lstm": build_lstm,
    "gru": build_gru,
}


def build_model(name: str, length: int, features: int = FEATURE_DIM, **kwargs) -> LayerGraph:
    try:
        builder = BUILDERS[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(BUILDERS)}") from None
    return builder(length, features, **kwargs)

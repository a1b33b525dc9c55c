"""Layers, the sequential graph, loss and optimizer.

Shapes passed to ``build`` exclude the batch axis; arrays at run time are
batch-first. Training runs in float64.
"""
from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np

from . import _backend

ACTIVATIONS = ("relu", "sigmoid", "none")
BCE_EPS = 1e-7


class ShapeError(ValueError):
    pass


def sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    kind = "Layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.input_shape: Optional[tuple] = None
        self.output_shape: Optional[tuple] = None

    def build(self, input_shape: tuple) -> tuple:
        self.input_shape = tuple(input_shape)
        self.output_shape = self._infer(self.input_shape)
        self._allocate()
        return self.output_shape

    def _infer(self, input_shape: tuple) -> tuple:
        return input_shape

    def _allocate(self) -> None:
        pass

    def init_params(self, rng: np.random.Generator) -> None:
        pass

    def zero_grads(self) -> None:
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def param_count(self) -> int:
        if self.input_shape is None:
            raise ShapeError(f"{self.kind} layer has unresolved shapes")
        return int(sum(p.size for p in self.params.values()))

    def config(self) -> dict:
        return {}

    def forward(self, x, training=False, rng=None):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError


class Conv1D(Layer):
    """Valid 1-D convolution, stride 1, followed by ReLU."""

    kind = "Conv1D"

    def __init__(self, filters: int, kernel_size: int = 2, activation: str = "relu"):
        super().__init__()
        if activation not in ("relu", "none"):
            raise ValueError("Conv1D activation must be relu or none")
        self.filters, self.kernel_size, self.activation = filters, kernel_size, activation

    def _infer(self, input_shape):
        if len(input_shape) != 2:
            raise ShapeError(f"Conv1D expects (length, features), got {input_shape}")
        length, _ = input_shape
        if length < self.kernel_size:
            raise ShapeError(f"Conv1D input length {length} shorter than kernel {self.kernel_size}")
        return (length - self.kernel_size + 1, self.filters)

    def _allocate(self):
        f = self.input_shape[1]
        self.params = {
            "kernel": np.zeros((self.kernel_size, f, self.filters)),
            "bias": np.zeros(self.filters),
        }

    def init_params(self, rng):
        k, f, m = self.params["kernel"].shape
        self.params["kernel"][...] = _glorot(rng, (k, f, m), k * f, k * m)
        self.params["bias"][...] = 0.0

    def config(self):
        return {"filters": self.filters, "kernel_size": self.kernel_size, "activation": self.activation}

    def forward(self, x, training=False, rng=None):
        self._x = np.ascontiguousarray(x)
        z = _backend.kernels.conv1d_forward(self._x, self.params["kernel"], self.params["bias"])
        if self.activation == "relu":
            self._mask = z > 0
            return z * self._mask
        return z

    def backward(self, dy):
        dz = dy * self._mask if self.activation == "relu" else dy
        dx, dw, db = _backend.kernels.conv1d_backward(self._x, self.params["kernel"], np.ascontiguousarray(dz))
        self.grads["kernel"] += dw
        self.grads["bias"] += db
        return dx


class MaxPooling1D(Layer):
    kind = "MaxPooling1D"

    def __init__(self, pool_size: int = 2):
        super().__init__()
        self.pool_size = pool_size

    def _infer(self, input_shape):
        if len(input_shape) != 2:
            raise ShapeError(f"MaxPooling1D expects (length, features), got {input_shape}")
        length, f = input_shape
        if length < self.pool_size:
            raise ShapeError(f"MaxPooling1D input length {length} shorter than pool {self.pool_size}")
        return (length // self.pool_size, f)

    def config(self):
        return {"pool_size": self.pool_size, "strides": self.pool_size}

    def forward(self, x, training=False, rng=None):
        self._length = x.shape[1]
        y, self._idx = _backend.kernels.maxpool1d_forward(np.ascontiguousarray(x), self.pool_size)
        return y

    def backward(self, dy):
        return _backend.kernels.maxpool1d_backward(np.ascontiguousarray(dy), self._idx, self._length, self.pool_size)


class Flatten(Layer):
    kind = "Flatten"

    def _infer(self, input_shape):
        return (int(np.prod(input_shape)),)

    def forward(self, x, training=False, rng=None):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._shape)


class Dense(Layer):
    kind = "Dense"

    def __init__(self, units: int, activation: str = "relu"):
        super().__init__()
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.units, self.activation = units, activation

    def _infer(self, input_shape):
        if len(input_shape) != 1:
            raise ShapeError(f"Dense expects a flat input, got {input_shape}")
        return (self.units,)

    def _allocate(self):
        n = self.input_shape[0]
        self.params = {"kernel": np.zeros((n, self.units)), "bias": np.zeros(self.units)}

    def init_params(self, rng):
        n, m = self.params["kernel"].shape
        self.params["kernel"][...] = _glorot(rng, (n, m), n, m)
        self.params["bias"][...] = 0.0

    def config(self):
        return {"units": self.units, "activation": self.activation}

    def forward(self, x, training=False, rng=None):
        self._x = x
        z = x @ self.params["kernel"] + self.params["bias"]
        if self.activation == "relu":
            self._mask = z > 0
            return z * self._mask
        if self.activation == "sigmoid":
            self._out = sigmoid(z)
            return self._out
        return z

    def backward(self, dy, *, wrt_logits: bool = False):
        """Backpropagate ``dy``; with ``wrt_logits`` it is already d(loss)/d(pre-activation)."""
        if wrt_logits or self.activation == "none":
            dz = dy
        elif self.activation == "relu":
            dz = dy * self._mask
        else:
            dz = dy * self._out * (1.0 - self._out)
        self.grads["kernel"] += self._x.T @ dz
        self.grads["bias"] += dz.sum(axis=0)
        return dz @ self.params["kernel"].T


class Dropout(Layer):
    """Inverted dropout: identity at inference, scaled survivors in training."""

    kind = "Dropout"

    def __init__(self, rate: float = 0.5):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")
        self.rate = rate

    def config(self):
        return {"rate": self.rate}

    def forward(self, x, training=False, rng=None):
        if not training or self.rate == 0.0:
            self._mask = None
            return x
        if rng is None:
            raise ValueError("training-mode dropout needs a random generator")
        self._mask = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * self._mask

    def backward(self, dy):
        return dy if self._mask is None else dy * self._mask


class _Recurrent(Layer):
    gates = 0

    def __init__(self, units: int, return_sequences: bool = False):
        super().__init__()
        self.units, self.return_sequences = units, return_sequences

    def _infer(self, input_shape):
        if len(input_shape) != 2:
            raise ShapeError(f"{self.kind} expects (length, features), got {input_shape}")
        length, _ = input_shape
        return (length, self.units) if self.return_sequences else (self.units,)

    def config(self):
        return {"units": self.units, "return_sequences": self.return_sequences}

    def init_params(self, rng):
        f, h, g = self.input_shape[1], self.units, self.gates
        self.params["kernel"][...] = _glorot(rng, (f, g * h), f, g * h)
        self.params["recurrent_kernel"][...] = _glorot(rng, (h, g * h), h, g * h)
        for name, p in self.params.items():
            if name.endswith("bias"):
                p[...] = 0.0

    def _seq_grad(self, dy):
        if self.return_sequences:
            return np.ascontiguousarray(dy)
        b, length = self._x.shape[:2]
        dhs = np.zeros((b, length, self.units))
        dhs[:, -1] = dy
        return dhs


class LSTM(_Recurrent):
    kind = "LSTM"
    gates = 4

    def _allocate(self):
        f, h = self.input_shape[1], self.units
        self.params = {
            "kernel": np.zeros((f, 4 * h)),
            "recurrent_kernel": np.zeros((h, 4 * h)),
            "bias": np.zeros(4 * h),
        }

    def forward(self, x, training=False, rng=None):
        self._x = np.ascontiguousarray(x)
        p = self.params
        self._hs, self._cs, self._gates = _backend.kernels.lstm_forward(
            self._x, p["kernel"], p["recurrent_kernel"], p["bias"]
        )
        return self._hs if self.return_sequences else self._hs[:, -1].copy()

    def backward(self, dy):
        p = self.params
        dx, dwx, dwh, db = _backend.kernels.lstm_backward(
            self._x, p["kernel"], p["recurrent_kernel"], self._hs, self._cs, self._gates, self._seq_grad(dy)
        )
        self.grads["kernel"] += dwx
        self.grads["recurrent_kernel"] += dwh
        self.grads["bias"] += db
        return dx


class GRU(_Recurrent):
    """Reset-after GRU with separate input and recurrent biases."""

    kind = "GRU"
    gates = 3

    def _allocate(self):
        f, h = self.input_shape[1], self.units
        self.params = {
            "kernel": np.zeros((f, 3 * h)),
            "recurrent_kernel": np.zeros((h, 3 * h)),
            "input_bias": np.zeros(3 * h),
            "recurrent_bias": np.zeros(3 * h),
        }

    def forward(self, x, training=False, rng=None):
        self._x = np.ascontiguousarray(x)
        p = self.params
        self._hs, self._gates, self._hn = _backend.kernels.gru_forward(
            self._x, p["kernel"], p["recurrent_kernel"], p["input_bias"], p["recurrent_bias"]
        )
        return self._hs if self.return_sequences else self._hs[:, -1].copy()

    def backward(self, dy):
        p = self.params
        dx, dwx, dwh, db_in, db_rec = _backend.kernels.gru_backward(
            self._x, p["kernel"], p["recurrent_kernel"], self._hs, self._gates, self._hn, self._seq_grad(dy)
        )
        self.grads["kernel"] += dwx
        self.grads["recurrent_kernel"] += dwh
        self.grads["input_bias"] += db_in
        self.grads["recurrent_bias"] += db_rec
        return dx


LAYER_TYPES = {cls.kind: cls for cls in (Conv1D, MaxPooling1D, Flatten, Dense, Dropout, LSTM, GRU)}


def layer_from_config(kind: str, config: dict) -> Layer:
    try:
        cls = LAYER_TYPES[kind]
    except KeyError:
        raise ValueError(f"unknown layer kind {kind!r}") from None
    config = dict(config)
    if kind == "MaxPooling1D":
        strides = config.pop("strides", config.get("pool_size", 2))
        if strides != config.get("pool_size", 2):
            raise ValueError("only stride == pool size is supported")
    return cls(**config)


def bce_loss(p, y, eps: float = BCE_EPS):
    """Binary cross-entropy, elementwise; p is clamped to [eps, 1 - eps]."""
    p = np.clip(p, eps, 1.0 - eps)
    return -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))


def bce_grad(p, y, eps: float = BCE_EPS):
    p = np.clip(p, eps, 1.0 - eps)
    return (p - y) / (p * (1.0 - p))


def sgd_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], learning_rate: float):
    """In-place plain SGD: p <- p - lr * g. Returns ``params``."""
    if learning_rate < 0:
        raise ValueError("learning rate must be nonnegative")
    for p, g in zip(params, grads):
        p -= learning_rate * g
    return params


class LayerGraph:
    """An ordered stack of layers with fixed (length, features) input."""

    def __init__(self, layers: Sequence[Layer], input_shape: tuple, name: str = "custom"):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.name = name
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.build(shape)
        self.output_shape = shape
        for layer in self.layers:
            layer.zero_grads()

    def initialize(self, seed: int) -> "LayerGraph":
        rng = np.random.default_rng(seed)
        for layer in self.layers:
            layer.init_params(rng)
        return self

    def zero_params(self) -> "LayerGraph":
        for p in self.parameters():
            p[...] = 0.0
        return self

    def parameters(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params.values()]

    def gradients(self) -> list[np.ndarray]:
        return [layer.grads[k] for layer in self.layers for k in layer.params]

    def zero_grads(self) -> None:
        for layer in self.layers:
            for g in layer.grads.values():
                g[...] = 0.0

    def param_count(self) -> int:
        return sum(layer.param_count() for layer in self.layers)

    def summary(self) -> list[tuple[str, tuple, int]]:
        return [(layer.kind, layer.output_shape, layer.param_count()) for layer in self.layers]

    def check_input(self, x: np.ndarray) -> None:
        if x.ndim != len(self.input_shape) + 1 or tuple(x.shape[1:]) != self.input_shape:
            raise ShapeError(f"input shape {tuple(x.shape[1:])} does not match graph input {self.input_shape}")

    def forward(self, x, training: bool = False, rng: Optional[np.random.Generator] = None):
        self.check_input(x)
        out = np.asarray(x, dtype=np.float64)
        for layer in self.layers:
            out = layer.forward(out, training=training, rng=rng)
        return out

    def backward(self, dy, *, wrt_logits: bool = False):
        layers = self.layers
        last = layers[-1]
        if wrt_logits:
            if not (isinstance(last, Dense) and last.activation == "sigmoid"):
                raise ValueError("logit gradients need a sigmoid Dense output layer")
            dy = last.backward(dy, wrt_logits=True)
            layers = layers[:-1]
        for layer in reversed(layers):
            dy = layer.backward(dy)
        return dy

    def loss_and_grad(self, x, y, rng=None, training: bool = True) -> float:
        """Mean BCE over the batch; accumulates parameter gradients (zeroed first)."""
        self.zero_grads()
        p = self.forward(x, training=training, rng=rng)
        y = np.asarray(y, dtype=np.float64).reshape(p.shape)
        n = p.shape[0]
        loss = float(bce_loss(p, y).mean())
        last = self.layers[-1]
        if isinstance(last, Dense) and last.activation == "sigmoid":
            self.backward((p - y) / n, wrt_logits=True)
        else:
            self.backward(bce_grad(p, y) / n)
        return loss

    def predict(self, x, batch_size: int = 256) -> np.ndarray:
        """Scores in (0, 1), one per input row."""
        self.check_input(x)
        out = [self.forward(x[i : i + batch_size]).reshape(-1) for i in range(0, x.shape[0], batch_size)]
        return np.concatenate(out) if out else np.zeros(0)


def param_count(graph: LayerGraph) -> int:
    return graph.param_count()

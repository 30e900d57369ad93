"""Classifiers over flat parameter vectors, with hand-written backprop.

Parameters always travel as one float64 vector; ``layout`` gives the shape of
each block in order, so OTA transmission can treat the model as a plain
length-``d`` signal.
"""
from __future__ import annotations

import numpy as np

from .errors import DomainError


def _log_softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


class _FlatModel:
    layout: list

    @property
    def size(self) -> int:
        return int(sum(np.prod(shape) for _, shape in self.layout))

    def unpack(self, params):
        params = np.asarray(params)
        if params.shape != (self.size,):
            raise DomainError(f"expected {self.size} parameters, got shape {params.shape}")
        out, k = {}, 0
        for name, shape in self.layout:
            n = int(np.prod(shape))
            out[name] = params[k:k + n].reshape(shape)
            k += n
        return out

    def pack(self, blocks) -> np.ndarray:
        return np.concatenate([np.asarray(blocks[name], dtype=float).ravel() for name, _ in self.layout])

    def loss_and_grad(self, params, X, y):
        raise NotImplementedError

    def grad(self, params, X, y):
        return self.loss_and_grad(params, X, y)[1]

    def loss(self, params, X, y):
        logp = _log_softmax(self.logits(params, X))
        return float(-logp[np.arange(len(y)), y].mean())

    def predict(self, params, X):
        return np.argmax(self.logits(params, X), axis=1)


class SoftmaxRegression(_FlatModel):
    name = "softmax"

    def __init__(self, n_features: int, n_classes: int):
        self.n_features, self.n_classes = n_features, n_classes
        self.layout = [("W", (n_features, n_classes)), ("b", (n_classes,))]

    def init(self, rng=None):
        return np.zeros(self.size)

    def logits(self, params, X):
        p = self.unpack(params)
        return X @ p["W"] + p["b"]

    def loss_and_grad(self, params, X, y):
        p = self.unpack(params)
        z = X @ p["W"] + p["b"]
        logp = _log_softmax(z)
        n = len(y)
        loss = -logp[np.arange(n), y].mean()
        dz = np.exp(logp)
        dz[np.arange(n), y] -= 1.0
        dz /= n
        return float(loss), self.pack({"W": X.T @ dz, "b": dz.sum(axis=0)})


class MLP(_FlatModel):
    """One hidden layer, ReLU or tanh."""

    name = "mlp"

    def __init__(self, n_features: int, n_hidden: int, n_classes: int, activation: str = "relu"):
        if activation not in ("relu", "tanh"):
            raise DomainError(f"unknown activation {activation!r}")
        self.n_features, self.n_hidden, self.n_classes = n_features, n_hidden, n_classes
        self.activation = activation
        self.layout = [
            ("W1", (n_features, n_hidden)), ("b1", (n_hidden,)),
            ("W2", (n_hidden, n_classes)), ("b2", (n_classes,)),
        ]

    def init(self, rng):
        # Glorot-uniform weights, zero biases.
        def glorot(fan_in, fan_out):
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-lim, lim, size=(fan_in, fan_out))
        return self.pack({
            "W1": glorot(self.n_features, self.n_hidden), "b1": np.zeros(self.n_hidden),
            "W2": glorot(self.n_hidden, self.n_classes), "b2": np.zeros(self.n_classes),
        })

    def _act(self, a):
        return np.maximum(a, 0.0) if self.activation == "relu" else np.tanh(a)

    def logits(self, params, X):
        p = self.unpack(params)
        return self._act(X @ p["W1"] + p["b1"]) @ p["W2"] + p["b2"]

    def loss_and_grad(self, params, X, y):
        p = self.unpack(params)
        a = X @ p["W1"] + p["b1"]
        h = self._act(a)
        logp = _log_softmax(h @ p["W2"] + p["b2"])
        n = len(y)
        loss = -logp[np.arange(n), y].mean()
        dz = np.exp(logp)
        dz[np.arange(n), y] -= 1.0
        dz /= n
        dh = dz @ p["W2"].T
        da = dh * (a > 0) if self.activation == "relu" else dh * (1.0 - h**2)
        return float(loss), self.pack({
            "W1": X.T @ da, "b1": da.sum(axis=0),
            "W2": h.T @ dz, "b2": dz.sum(axis=0),
        })


def build_model(architecture: str, n_features: int, n_classes: int, hidden: int = 64, activation: str = "relu"):
    if architecture == "softmax":
        return SoftmaxRegression(n_features, n_classes)
    if architecture == "mlp":
        return MLP(n_features, hidden, n_classes, activation)
    raise DomainError(f"unknown architecture {architecture!r}")


def grad(model, params, X, y):
    """Gradient of the mean cross-entropy on a batch."""
    if len(y) == 0:
        raise DomainError("batch must be non-empty")
    return model.grad(params, X, y)


def evaluate(model, params, X, y):
    """Mean cross-entropy and top-1 accuracy."""
    if len(y) == 0:
        raise DomainError("dataset must be non-empty")
    logp = _log_softmax(model.logits(params, X))
    loss = float(-logp[np.arange(len(y)), y].mean())
    acc = float(np.mean(np.argmax(logp, axis=1) == y))
    return loss, acc

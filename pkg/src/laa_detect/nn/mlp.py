"""Feedforward baseline: the whole 24-hour feature matrix flattened into one vector."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NumericError, ShapeError
from .lstm import EPS, bce, sigmoid


@dataclass
class MlpParams:
    W1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float

    @property
    def input_size(self) -> int:
        return self.W1.shape[1]

    @classmethod
    def zeros(cls, input_size: int, hidden_size: int) -> "MlpParams":
        return cls(np.zeros((hidden_size, input_size)), np.zeros(hidden_size), np.zeros(hidden_size), 0.0)

    @classmethod
    def initialize(cls, input_size: int, hidden_size: int, rng: np.random.Generator,
                   scale: float = 0.1) -> "MlpParams":
        W1 = rng.uniform(-scale, scale, size=(hidden_size, input_size))
        w2 = rng.uniform(-scale, scale, size=hidden_size)
        return cls(W1, np.zeros(hidden_size), w2, 0.0)


def _flatten(seq, p: MlpParams) -> tuple[np.ndarray, bool]:
    x = np.asarray(seq, dtype=float)
    single = x.ndim == 2
    x = x.reshape(1, -1) if single else x.reshape(x.shape[0], -1)
    if x.shape[1] != p.input_size:
        raise ShapeError(f"expected {p.input_size} inputs after flattening, got {x.shape[1]}")
    return x, single


def mlp_forward(seq, p: MlpParams):
    x, single = _flatten(seq, p)
    prob = sigmoid(sigmoid(x @ p.W1.T + p.b1) @ p.w2 + p.b2)
    return prob[0] if single else prob


def mlp_backprop(seq, label, p: MlpParams) -> tuple[float, MlpParams]:
    x, _ = _flatten(seq, p)
    y = np.atleast_1d(np.asarray(label, dtype=float))
    if y.shape != (x.shape[0],):
        raise ShapeError("one label per sequence is required")
    hidden = sigmoid(x @ p.W1.T + p.b1)
    logit = hidden @ p.w2 + p.b2
    if not np.all(np.isfinite(logit)):
        raise NumericError("logit")
    prob = sigmoid(logit)
    loss = bce(prob, y)
    dlogit = (prob - y) / x.shape[0]
    da = np.outer(dlogit, p.w2) * hidden * (1.0 - hidden)
    return loss, MlpParams(da.T @ x, da.sum(axis=0), hidden.T @ dlogit, float(dlogit.sum()))


def mlp_predict(seq, p: MlpParams, threshold: float = 0.5):
    prob = np.clip(mlp_forward(seq, p), EPS, 1.0 - EPS)
    return (np.asarray(prob) >= threshold).astype(int) if np.ndim(prob) else int(prob >= threshold)

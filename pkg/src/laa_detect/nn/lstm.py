"""Many-to-one LSTM classifier with hand-written backpropagation through time.

Each gate sees the concatenation ``[x(t), h(t-1)]``::

    f = sigmoid(W_f z + b_f)       i = sigmoid(W_i z + b_i)
    g = tanh(W_c z + b_c)          o = sigmoid(W_o z + b_o)
    c = f * c_prev + i * g         h = o * tanh(c)

and the head reads the last hidden state: ``p = sigmoid(w_out . h(T) + b_out)``.
Everything is vectorised over a leading batch axis.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NumericError, ShapeError

EPS = 1e-12


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def bce(prob, label):
    """Mean binary cross-entropy with the probability clamped away from 0 and 1."""
    p = np.clip(prob, EPS, 1.0 - EPS)
    y = np.asarray(label, dtype=float)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


@dataclass
class LstmParams:
    W_f: np.ndarray
    W_i: np.ndarray
    W_c: np.ndarray
    W_o: np.ndarray
    b_f: np.ndarray
    b_i: np.ndarray
    b_c: np.ndarray
    b_o: np.ndarray
    w_out: np.ndarray
    b_out: float

    @property
    def hidden_size(self) -> int:
        return self.W_f.shape[0]

    @property
    def input_size(self) -> int:
        return self.W_f.shape[1] - self.W_f.shape[0]

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        """Gate weights as one (4H, F+H) matrix in f, i, c, o order."""
        return (np.concatenate([self.W_f, self.W_i, self.W_c, self.W_o]),
                np.concatenate([self.b_f, self.b_i, self.b_c, self.b_o]))

    @classmethod
    def zeros(cls, input_size: int, hidden_size: int) -> "LstmParams":
        w = lambda: np.zeros((hidden_size, input_size + hidden_size))
        b = lambda: np.zeros(hidden_size)
        return cls(w(), w(), w(), w(), b(), b(), b(), b(), b(), 0.0)

    @classmethod
    def initialize(cls, input_size: int, hidden_size: int, rng: np.random.Generator,
                   scale: float = 0.1, forget_bias: float = 1.0) -> "LstmParams":
        shape = (hidden_size, input_size + hidden_size)
        W_f, W_i, W_c, W_o = (rng.uniform(-scale, scale, size=shape) for _ in range(4))
        w_out = rng.uniform(-scale, scale, size=hidden_size)
        b = lambda: np.zeros(hidden_size)
        return cls(W_f, W_i, W_c, W_o, np.full(hidden_size, forget_bias), b(), b(), b(), w_out, 0.0)


@dataclass
class CellState:
    h: np.ndarray
    c: np.ndarray


def _check_input(x: np.ndarray, p: LstmParams):
    if x.shape[-1] != p.input_size:
        raise ShapeError(f"expected {p.input_size} features, got {x.shape[-1]}")


def lstm_cell_forward(x, prev: CellState, p: LstmParams) -> CellState:
    """Advance one time step. ``x`` may be (F,) or (N, F) with matching state."""
    x = np.asarray(x, dtype=float)
    _check_input(x, p)
    H = p.hidden_size
    if prev.h.shape[-1] != H or prev.c.shape[-1] != H:
        raise ShapeError(f"state must have {H} units")
    W, b = p.stacked()
    z = np.concatenate([x, prev.h], axis=-1)
    a = z @ W.T + b
    f = sigmoid(a[..., :H])
    i = sigmoid(a[..., H:2 * H])
    g = np.tanh(a[..., 2 * H:3 * H])
    o = sigmoid(a[..., 3 * H:])
    c = f * prev.c + i * g
    return CellState(o * np.tanh(c), c)


def _as_batch(seq) -> tuple[np.ndarray, bool]:
    x = np.asarray(seq, dtype=float)
    if x.ndim == 2:
        return x[None], True
    if x.ndim != 3:
        raise ShapeError(f"sequences must be (T, F) or (N, T, F), got {x.shape}")
    return x, False


def _forward(x: np.ndarray, p: LstmParams, keep: bool):
    N, T, _ = x.shape
    H = p.hidden_size
    W, b = p.stacked()
    h = np.zeros((N, H))
    c = np.zeros((N, H))
    cache = []
    for t in range(T):
        z = np.concatenate([x[:, t], h], axis=1)
        a = z @ W.T + b
        f = sigmoid(a[:, :H])
        i = sigmoid(a[:, H:2 * H])
        g = np.tanh(a[:, 2 * H:3 * H])
        o = sigmoid(a[:, 3 * H:])
        c_prev = c
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        if keep:
            cache.append((z, f, i, g, o, c_prev, tc))
    logit = h @ p.w_out + p.b_out
    return logit, h, c, cache


def sequence_logit(seq, p: LstmParams):
    x, single = _as_batch(seq)
    _check_input(x, p)
    logit = _forward(x, p, keep=False)[0]
    return logit[0] if single else logit


def sequence_forward(seq, p: LstmParams):
    """Attack probability for one (T, F) sequence or a batch (N, T, F)."""
    return sigmoid(sequence_logit(seq, p))


def bptt(seq, label, p: LstmParams) -> tuple[float, LstmParams]:
    """Mean BCE loss and its exact gradient for one sequence or a batch.

    The gradient is of the unclamped cross-entropy, so the head bias gets
    ``mean(prob - label)``.
    """
    x, single = _as_batch(seq)
    _check_input(x, p)
    y = np.atleast_1d(np.asarray(label, dtype=float))
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    if y.shape != (x.shape[0],):
        raise ShapeError("one label per sequence is required")
    N = x.shape[0]
    H = p.hidden_size
    W, _ = p.stacked()
    W_h = W[:, -H:]

    logit, h_last, _, cache = _forward(x, p, keep=True)
    if not np.all(np.isfinite(logit)):
        raise NumericError("logit")
    prob = sigmoid(logit)
    loss = bce(prob, y)

    dlogit = (prob - y) / N
    g_w_out = h_last.T @ dlogit
    g_b_out = float(np.sum(dlogit))
    dW = np.zeros_like(W)
    db = np.zeros(4 * H)
    dh = np.outer(dlogit, p.w_out)
    dc = np.zeros((N, H))
    for z, f, i, g, o, c_prev, tc in reversed(cache):
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc * tc)
        da = np.concatenate([
            dc * c_prev * f * (1.0 - f),
            dc * g * i * (1.0 - i),
            dc * i * (1.0 - g * g),
            do * o * (1.0 - o),
        ], axis=1)
        dW += da.T @ z
        db += da.sum(axis=0)
        dh = da @ W_h
        dc = dc * f
    if not np.all(np.isfinite(dW)):
        raise NumericError("gate weight gradient")

    grads = LstmParams(
        dW[:H], dW[H:2 * H], dW[2 * H:3 * H], dW[3 * H:],
        db[:H], db[H:2 * H], db[2 * H:3 * H], db[3 * H:],
        g_w_out, g_b_out,
    )
    return loss, grads


def predict(seq, p: LstmParams, threshold: float = 0.5):
    """1 (attacked) when the clamped probability reaches ``threshold``."""
    prob = np.clip(sequence_forward(seq, p), EPS, 1.0 - EPS)
    return (np.asarray(prob) >= threshold).astype(int) if np.ndim(prob) else int(prob >= threshold)

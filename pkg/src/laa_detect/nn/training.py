"""Mini-batch training loop shared by the LSTM and the MLP baseline."""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from ..errors import ConfigError, InputError, NumericError, TrainingError
from .lstm import LstmParams, bptt, predict
from .mlp import MlpParams, mlp_backprop, mlp_predict
from .params import all_finite, global_norm, map_params, zeros_like


@dataclass(frozen=True)
class TrainConfig:
    """Optimiser settings. ``momentum`` doubles as Adam's first-moment decay."""

    hidden_size: int = 32
    learning_rate: float = 0.003
    epochs: int = 400
    batch_size: int = 32
    seed: int = 0
    init_scale: float = 0.1
    optimizer: str = "adam"
    momentum: float = 0.9
    beta2: float = 0.999
    decision_threshold: float = 0.5
    forget_bias: float = 1.0
    clip_norm: float | None = None

    def __post_init__(self):
        if self.hidden_size < 1 or self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("hidden_size and batch_size must be positive, epochs non-negative")
        if self.learning_rate < 0 or self.init_scale <= 0:
            raise ConfigError("learning_rate must be >= 0 and init_scale > 0")
        if self.optimizer not in ("sgd", "momentum", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")
        if not 0 <= self.beta2 < 1:
            raise ConfigError("beta2 must lie in [0, 1)")
        if not 0 < self.decision_threshold <= 1:
            raise ConfigError("decision_threshold must lie in (0, 1]")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ConfigError("clip_norm must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


MLP_DEFAULTS = TrainConfig(hidden_size=64, learning_rate=0.001)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_acc: float


def _as_set(data) -> tuple[np.ndarray, np.ndarray]:
    x, y = data
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=int)
    if x.ndim != 3 or len(x) == 0 or len(y) != len(x):
        raise InputError("a data set is a non-empty (N, T, F) array with N labels")
    return x, y


def fit(
    train_set,
    val_set,
    cfg: TrainConfig,
    init: Callable[[np.random.Generator], object],
    grad: Callable,
    classify: Callable,
):
    """Run mini-batch descent and keep the parameters with the best validation accuracy.

    Batches are drawn from a per-epoch permutation of one seeded generator,
    so a given config always replays the same updates.
    """
    x, y = _as_set(train_set)
    vx, vy = _as_set(val_set)
    rng = np.random.default_rng(cfg.seed)
    params = init(rng)
    velocity = zeros_like(params)
    second = zeros_like(params)
    step = 0
    best = copy.deepcopy(params)
    best_acc = -1.0
    history: list[EpochRecord] = []
    mu = cfg.momentum if cfg.optimizer == "momentum" else 0.0

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(x))
        total = 0.0
        for start in range(0, len(x), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            try:
                loss, g = grad(x[idx], y[idx], params)
            except NumericError as exc:
                raise TrainingError(f"non-finite {exc.tensor}", epoch) from exc
            if not np.isfinite(loss):
                raise TrainingError("loss is not finite", epoch)
            total += loss * len(idx)
            if cfg.clip_norm is not None:
                norm = global_norm(g)
                if norm > cfg.clip_norm:
                    g = map_params(lambda t: t * (cfg.clip_norm / norm), g)
            if cfg.optimizer == "adam":
                step += 1
                b1, b2 = cfg.momentum, cfg.beta2
                velocity = map_params(lambda m, d: b1 * m + (1 - b1) * d, velocity, g)
                second = map_params(lambda v, d: b2 * v + (1 - b2) * d * d, second, g)
                lr = cfg.learning_rate * np.sqrt(1 - b2**step) / (1 - b1**step)
                params = map_params(lambda w, m, v: w - lr * m / (np.sqrt(v) + 1e-8), params, velocity, second)
            else:
                velocity = map_params(lambda v, d: mu * v - cfg.learning_rate * d, velocity, g)
                params = map_params(lambda w, v: w + v, params, velocity)
        if not all_finite(params):
            raise TrainingError("parameters diverged", epoch)
        val_acc = float(np.mean(classify(vx, params, cfg.decision_threshold) == vy))
        history.append(EpochRecord(epoch, total / len(x), val_acc))
        if val_acc > best_acc:
            best_acc = val_acc
            best = copy.deepcopy(params)
    return best, history


def train(train_set, val_set, cfg: TrainConfig = TrainConfig()) -> tuple[LstmParams, list[EpochRecord]]:
    """Train the LSTM detector on ``(X, y)`` pairs of shape (N, 24, F) and (N,)."""
    features = np.asarray(train_set[0]).shape[-1]
    init = lambda rng: LstmParams.initialize(features, cfg.hidden_size, rng, cfg.init_scale, cfg.forget_bias)
    return fit(train_set, val_set, cfg, init, bptt, predict)


def mlp_train(train_set, val_set, cfg: TrainConfig = MLP_DEFAULTS) -> tuple[MlpParams, list[EpochRecord]]:
    """Train the flattened-input baseline with the same loop and conventions."""
    inputs = int(np.prod(np.asarray(train_set[0]).shape[1:]))
    init = lambda rng: MlpParams.initialize(inputs, cfg.hidden_size, rng, cfg.init_scale)
    return fit(train_set, val_set, cfg, init, mlp_backprop, mlp_predict)

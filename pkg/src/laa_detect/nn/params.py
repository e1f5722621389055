"""Parameter containers and the arithmetic the optimizer needs on them."""
from __future__ import annotations

import dataclasses
from typing import Callable, TypeVar

import numpy as np

P = TypeVar("P")


def tensors(params) -> dict[str, np.ndarray]:
    return {f.name: np.asarray(getattr(params, f.name)) for f in dataclasses.fields(params)}


def map_params(fn: Callable, *params: P) -> P:
    """Apply ``fn`` field by field across parameter objects of one type."""
    first = params[0]
    out = {}
    for f in dataclasses.fields(first):
        value = fn(*(getattr(p, f.name) for p in params))
        if np.ndim(value) == 0:
            value = float(value)
        out[f.name] = value
    return type(first)(**out)


def zeros_like(params: P) -> P:
    return map_params(lambda x: np.zeros_like(np.asarray(x, dtype=float)), params)


def global_norm(params) -> float:
    return float(np.sqrt(sum(np.sum(np.square(v)) for v in tensors(params).values())))


def all_finite(params) -> bool:
    return all(np.all(np.isfinite(v)) for v in tensors(params).values())

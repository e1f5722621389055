"""Versioned JSON model files and CSV training histories."""
from __future__ import annotations

import csv
import dataclasses
import json
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import ParseError
from .lstm import LstmParams
from .mlp import MlpParams
from .params import tensors

MODEL_SCHEMA = 1
KINDS = {"lstm": LstmParams, "mlp": MlpParams}


def model_to_dict(kind: str, params, threshold: float, extra: dict | None = None) -> dict:
    body = {}
    for name, value in tensors(params).items():
        body[name] = {"shape": list(value.shape), "values": value.ravel().tolist()}
    doc = {"schema": MODEL_SCHEMA, "kind": kind, "threshold": threshold, "params": body}
    doc.update(extra or {})
    return doc


def model_from_dict(doc: dict):
    """Return ``(kind, params, doc)``; ``doc`` carries any extra metadata."""
    if not isinstance(doc, dict) or doc.get("schema") != MODEL_SCHEMA:
        raise ParseError(f"model file must be a schema {MODEL_SCHEMA} object")
    kind = doc.get("kind")
    if kind not in KINDS:
        raise ParseError(f"unknown model kind {kind!r}")
    cls = KINDS[kind]
    values = {}
    try:
        for f in dataclasses.fields(cls):
            entry = doc["params"][f.name]
            arr = np.array(entry["values"], dtype=float).reshape(entry["shape"])
            values[f.name] = float(arr) if arr.ndim == 0 else arr
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed model parameters: {exc}") from None
    return kind, cls(**values), doc


def save_model(path: Path, kind: str, params, threshold: float, extra: dict | None = None):
    Path(path).write_text(json.dumps(model_to_dict(kind, params, threshold, extra)) + "\n", encoding="utf-8")


def load_model(path: Path):
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc.msg}", exc.lineno) from None
    return model_from_dict(doc)


def write_history(path: Path, history: Sequence):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "val_acc"])
        for rec in history:
            writer.writerow([rec.epoch, repr(rec.train_loss), repr(rec.val_acc)])

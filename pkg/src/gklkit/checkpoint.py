"""Model checkpoints and result files (JSON, plus a CSV of per-epoch metrics)."""
from __future__ import annotations

import csv
import json
import math

import numpy as np

from .classstats import ClassWeightTable
from .model import MlpModel

__all__ = ["CheckpointError", "load_checkpoint", "read_metrics", "read_result", "save_checkpoint",
           "write_metrics", "write_result"]

FORMAT = "gklkit-checkpoint"
FORMAT_VERSION = 1
METRIC_COLUMNS = ["epoch", "train_loss", "divergence", "clean_acc", "robust_acc", "many_acc", "medium_acc", "few_acc"]


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model, table=None, config=None):
    """Write parameters as nested decimal arrays.

    ``json`` emits the shortest repr that round-trips each double, so loading
    reproduces the parameters bit for bit.
    """
    data = {
        "format": FORMAT,
        "format_version": FORMAT_VERSION,
        "layers": model.sizes,
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "class_table": None if table is None else table.to_dict(),
        "config": config,
    }
    with open(path, "w") as f:
        json.dump(data, f)


def load_checkpoint(path):
    """Return ``(model, table or None, config or None)``."""
    try:
        with open(path) as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{path}: not a checkpoint (line {e.lineno}, column {e.colno}: {e.msg})") from None
    if not isinstance(data, dict) or data.get("format") != FORMAT:
        raise CheckpointError(f"{path}: not a {FORMAT} file")
    if data.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format_version {data.get('format_version')!r}")
    try:
        model = MlpModel(data["layers"], data["weights"], data["biases"])
        table = None if data.get("class_table") is None else ClassWeightTable.from_dict(data["class_table"])
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"{path}: malformed checkpoint ({e})") from None
    if not all(np.all(np.isfinite(p)) for p in model.weights + model.biases):
        raise CheckpointError(f"{path}: non-finite parameters")
    return model, table, data.get("config")


def _clean(obj):
    # NaN (empty class) is not valid JSON
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def write_result(path, result, extra=None):
    """Result JSON; wall-clock time is left out so reruns give identical files."""
    data = _clean(result.to_dict())
    data.pop("seconds", None)
    if extra:
        data.update(_clean(extra))
    with open(path, "w") as f:
        json.dump(data, f, indent=1, allow_nan=False)


def read_result(path):
    with open(path) as f:
        return json.load(f)


def write_metrics(path, result):
    """One row per epoch, then a ``final`` row with the end-of-run evaluation."""
    groups = result.group_acc or {}
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(METRIC_COLUMNS)
        for i, (loss, div, acc) in enumerate(zip(result.train_loss, result.divergence, result.epoch_acc)):
            w.writerow([i + 1, repr(loss), repr(div), repr(acc), "", "", "", ""])
        w.writerow(["final", repr(result.train_loss[-1]) if result.train_loss else "",
                    repr(result.divergence[-1]) if result.divergence else "",
                    repr(result.clean_acc),
                    "" if result.robust_acc is None else repr(result.robust_acc),
                    *(repr(groups[k]) if k in groups else "" for k in ("many", "medium", "few"))])


def read_metrics(path):
    """Rows as dicts with floats (``None`` for blank cells); ``epoch`` stays a string for the final row."""
    rows = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            if list(row) != METRIC_COLUMNS:
                raise ValueError(f"{path}: unexpected columns {list(row)}")
            rows.append({k: (v if k == "epoch" else (float(v) if v != "" else None)) for k, v in row.items()})
    return rows

"""Python bindings for the carbongrid emission-estimation library."""

import json

from ._carbongrid import (
    ConfigError,
    ContractError,
    Dataset,
    DimensionError,
    FormatError,
    IncompatibleError,
    Model,
    NonFiniteError,
    aggregate,
    calibrate,
    calibration_stats,
    load_checkpoint,
    read_dataset,
    softmax,
    spearman,
)
from . import _carbongrid as _core

__all__ = [
    "ConfigError", "ContractError", "Dataset", "DimensionError", "FormatError",
    "IncompatibleError", "Model", "NonFiniteError", "aggregate", "calibrate",
    "calibration_stats", "evaluate", "export_attention", "load_checkpoint", "metrics",
    "new_model", "ntxent", "read_dataset", "softmax", "spearman", "synth", "train", "transfer",
]


def metrics(y_true, y_pred, space="log"):
    """MAE, RMSE, R² and Spearman as a dict; R² is None for constant y_true."""
    return json.loads(_core.metrics_json(list(y_true), list(y_pred), space))


def ntxent(image, poi, temperature=0.5, denominator="paper"):
    return _core.ntxent([list(r) for r in image], [list(r) for r in poi], temperature, denominator)


def synth(**spec):
    """Synthetic region; keyword arguments follow the synth spec JSON keys."""
    return _core.synth_json(json.dumps(spec))


def new_model(seed=0, **config):
    return _core.new_model_json(json.dumps(config), seed)


def train(dataset, model_config=None, train_config=None):
    """Returns (best_model, history dict, dataset with the splits used)."""
    best, history, used = _core.train_json(
        dataset, json.dumps(model_config or {}), json.dumps(train_config or {}))
    return best, json.loads(history), used


def evaluate(model, dataset, split="test", space="log"):
    return json.loads(_core.evaluate_json(model, dataset, split, space))


def transfer(model, target, calibrate=True, source_tag="source"):
    return json.loads(_core.transfer_json(model, target, calibrate, source_tag))


def export_attention(model, dataset):
    """Rows of per-cell modality weights and emission deciles."""
    lines = _core.export_attention_csv(model, dataset).strip().split("\n")
    header = lines[0].split(",")
    rows = []
    for line in lines[1:]:
        values = line.split(",")
        row = {k: float(v) for k, v in zip(header, values)}
        for k in ("row", "col", "emission_decile"):
            row[k] = int(row[k])
        rows.append(row)
    return rows

"""JSON schemas for the per-command run configurations. Unknown keys are rejected."""

from __future__ import annotations

import json
from pathlib import Path

import jsonschema

from .errors import ConfigError

_num = {"type": "number"}
_int = {"type": "integer", "minimum": 0}
_pair = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}
_mix = {"type": "object", "additionalProperties": {"type": "number", "minimum": 0}}

RENDER = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "image_size": {"type": "integer", "minimum": 8},
        "bins": {"type": "integer", "minimum": 2},
        "distance": _pair,
        "elevation_deg": _pair,
        "crop_padding": _pair,
        "center_jitter": _num,
        "occlusion_range": _pair,
        "max_attempts": {"type": "integer", "minimum": 1},
        "light_strength": _pair,
    },
}

GEN = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "count": _int,
        "seed": _int,
        "category_mix": _mix,
        "class_mix": _mix,
        "split": {"enum": ["train", "val"]},
        "render": RENDER,
    },
}

NETWORK = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "conv_layers": {"type": "integer", "minimum": 1},
        "downsample_at": {"type": "array", "items": {"type": "integer"}},
        "channel_plan": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "image_size": {"type": "integer", "minimum": 1},
        "in_channels": {"type": "integer", "minimum": 1},
        "bins": {"type": "integer", "minimum": 1},
        "keypoints": {"type": "integer", "minimum": 1},
        "hidden": {"type": "integer", "minimum": 1},
        "dropout": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "dropout_after": {"type": "array", "items": {"type": "integer"}},
        "paper_faithful": {"type": "boolean"},
        "heads": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["concept", "depth"],
                "properties": {
                    "concept": {"enum": ["pose", "visibility", "kp3d", "kp2d"]},
                    "depth": {"type": "integer", "minimum": 1},
                    "weight": {"type": ["number", "null"]},
                },
            },
        },
    },
}

TRAIN_OPTIONS = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "lr": _num,
        "momentum": _num,
        "weight_decay": _num,
        "batch": {"type": "integer", "minimum": 1},
        "batch_mix": {"oneOf": [_mix, {"type": "null"}]},
        "plateau_patience": {"type": "integer", "minimum": 1},
        "plateau_threshold": _num,
        "lr_factor": _num,
        "max_reductions": _int,
        "max_epochs": _int,
        "max_steps": {"type": ["integer", "null"], "minimum": 0},
        "time_limit": {"type": ["number", "null"]},
        "eval_every": {"type": "integer", "minimum": 1},
        "seed": _int,
        "prefetch": _int,
    },
}

TRAIN = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "variant": {"type": "string"},
        "seed": _int,
        "network": NETWORK,
        "train": TRAIN_OPTIONS,
        "val_limit": {"type": ["integer", "null"], "minimum": 1},
    },
}

EVAL = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "alpha": {"type": "number", "exclusiveMinimum": 0},
        "alphas": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
        "image_size": _pair,
    },
}

GRADCHECK = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "sizes": {"type": "array", "items": {"enum": ["1-layer", "3-layer", "desk"]}},
        "num_checks": {"type": "integer", "minimum": 1},
        "batch": {"type": "integer", "minimum": 2},
        "seed": _int,
    },
}

ABLATE = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "variants": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "seed": _int,
        "network": NETWORK,
        "train": TRAIN_OPTIONS,
        "alpha": {"type": "number", "exclusiveMinimum": 0},
        "val_limit": {"type": ["integer", "null"], "minimum": 1},
    },
}

PLOT = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "title": {"type": "string"},
        "columns": {"type": "array", "items": {"type": "string"}},
        "x": {"type": "string"},
        "kind": {"enum": ["line", "bar"]},
    },
}

SCHEMAS = {"gen": GEN, "train": TRAIN, "eval": EVAL, "gradcheck": GRADCHECK, "ablate": ABLATE, "plot": PLOT}


def validate(command, doc):
    try:
        jsonschema.validate(doc, SCHEMAS[command])
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{command} config invalid at {where}: {exc.message}") from None
    return doc


def load(command, path=None):
    """Read and validate a JSON run configuration; no path gives an empty document."""
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    return validate(command, doc)

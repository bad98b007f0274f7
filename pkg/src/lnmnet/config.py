"""Run configuration: JSON schema validation and object construction.

A run config is one JSON document holding the network, the dataset source,
and (optionally) training, energy, and checkpoint settings.  Unknown keys
are rejected everywhere so typos fail loudly instead of silently falling
back to defaults.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import jsonschema

from lnmnet import analysis, datasets, network, training
from lnmnet.errors import ConfigError
from lnmnet.tensor import Rng, derive_seed

__all__ = [
    "SCHEMA",
    "load_config",
    "effective_config",
    "make_network_spec",
    "make_dataset",
    "make_train_config",
    "make_energy_model",
    "RunContext",
    "build_run",
]

# rng stream tags so every consumer gets an independent deterministic stream
TAG_INIT = 1
TAG_DATASET = 2
TAG_SHUFFLE = 3
TAG_PROBE = 4

_LAYER_SCHEMAS = [
    {
        "type": "object",
        "properties": {
            "kind": {"const": "dense"},
            "out_features": {"type": "integer", "minimum": 1},
            "bias": {"type": "boolean"},
        },
        "required": ["kind", "out_features"],
        "additionalProperties": False,
    },
    {
        "type": "object",
        "properties": {
            "kind": {"const": "conv2d"},
            "out_channels": {"type": "integer", "minimum": 1},
            "kernel_size": {"type": "integer", "minimum": 1},
            "stride": {"type": "integer", "minimum": 1},
            "padding": {"type": "integer", "minimum": 0},
            "bias": {"type": "boolean"},
        },
        "required": ["kind", "out_channels", "kernel_size"],
        "additionalProperties": False,
    },
    {
        "type": "object",
        "properties": {
            "kind": {"const": "spiking"},
            "degree": {"type": "integer", "minimum": 1},
            "threshold": {"type": "number"},
            "surrogate": {"enum": ["rectangle", "triangle"]},
            "surrogate_width": {"type": "number", "exclusiveMinimum": 0},
            "init_decay": {"type": "number"},
        },
        "required": ["kind"],
        "additionalProperties": False,
    },
    {
        "type": "object",
        "properties": {
            "kind": {"const": "avgpool"},
            "size": {"type": "integer", "minimum": 1},
        },
        "required": ["kind", "size"],
        "additionalProperties": False,
    },
    {
        "type": "object",
        "properties": {"kind": {"const": "flatten"}},
        "required": ["kind"],
        "additionalProperties": False,
    },
    {
        "type": "object",
        "properties": {
            "kind": {"const": "decoder"},
            "num_classes": {"type": "integer", "minimum": 2},
        },
        "required": ["kind", "num_classes"],
        "additionalProperties": False,
    },
]

SCHEMA = {
    "type": "object",
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "network": {
            "type": "object",
            "properties": {
                "input_shape": {
                    "type": "array",
                    "items": {"type": "integer", "minimum": 1},
                    "minItems": 1,
                    "maxItems": 3,
                },
                "timesteps": {"type": "integer", "minimum": 1},
                "layers": {
                    "type": "array",
                    "items": {"oneOf": _LAYER_SCHEMAS},
                    "minItems": 2,
                },
            },
            "required": ["input_shape", "timesteps", "layers"],
            "additionalProperties": False,
        },
        "dataset": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["synthetic", "idx", "framed"]},
                "classes": {"type": "integer", "minimum": 2},
                "channels": {"type": "integer", "minimum": 1},
                "train_samples": {"type": "integer", "minimum": 1},
                "val_samples": {"type": "integer", "minimum": 1},
                "noise": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "images": {"type": "string"},
                "labels": {"type": "string"},
                "path": {"type": "string"},
                "val_fraction": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
            },
            "required": ["kind"],
            "additionalProperties": False,
        },
        "training": {
            "type": "object",
            "properties": {
                "epochs": {"type": "integer", "minimum": 1},
                "batch_size": {"type": "integer", "minimum": 1},
                "lr_weights": {"type": "number", "minimum": 0},
                "lr_lnm": {"type": "number", "minimum": 0},
                "momentum": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "weight_decay": {"type": "number", "minimum": 0},
                "label_smoothing": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "warmup_epochs": {"type": "integer", "minimum": 0},
                "grad_clip_norm": {"type": "number", "minimum": 0},
            },
            "required": ["epochs", "batch_size", "lr_weights"],
            "additionalProperties": False,
        },
        "energy": {
            "type": "object",
            "properties": {
                "e_mac_pj": {"type": "number", "exclusiveMinimum": 0},
                "e_ac_pj": {"type": "number", "exclusiveMinimum": 0},
                "lif_decay_free": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
        "checkpoint": {"type": "string"},
    },
    "required": ["network", "dataset"],
    "additionalProperties": False,
}

_DATASET_KIND_KEYS = {
    "synthetic": {"kind", "classes", "channels", "train_samples", "val_samples",
                  "noise", "seed"},
    "idx": {"kind", "images", "labels", "val_fraction"},
    "framed": {"kind", "path", "val_fraction"},
}
_DATASET_REQUIRED = {
    "synthetic": {"classes", "train_samples", "val_samples"},
    "idx": {"images", "labels"},
    "framed": {"path"},
}


def load_config(path) -> dict:
    """Parse and schema-validate a run config file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path} is not valid JSON: {err}") from err
    validate_config(raw, path)
    return raw


def validate_config(raw: dict, path: str = "<config>") -> None:
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as err:
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"{path}: at {where}: {err.message}") from err
    ds = raw["dataset"]
    kind = ds["kind"]
    allowed = _DATASET_KIND_KEYS[kind]
    stray = sorted(set(ds) - allowed)
    if stray:
        raise ConfigError(f"{path}: dataset keys {stray} not valid for kind {kind!r}")
    missing = sorted(_DATASET_REQUIRED[kind] - set(ds))
    if missing:
        raise ConfigError(f"{path}: dataset kind {kind!r} requires keys {missing}")


def apply_overrides(raw: dict, seed=None, timesteps=None, degree=None) -> dict:
    """Return a deep-copied config with CLI overrides applied."""
    cfg = json.loads(json.dumps(raw))
    if seed is not None:
        cfg["seed"] = seed
    if timesteps is not None:
        cfg["network"]["timesteps"] = timesteps
    if degree is not None:
        for layer in cfg["network"]["layers"]:
            if layer["kind"] == "spiking":
                layer["degree"] = degree
    return cfg


def effective_config(raw: dict) -> str:
    """Canonical serialization of the post-override config."""
    return json.dumps(raw, sort_keys=True, indent=2) + "\n"


def make_network_spec(raw: dict) -> network.NetworkSpec:
    net = raw["network"]
    layers = []
    for entry in net["layers"]:
        kind = entry["kind"]
        fields = {k: v for k, v in entry.items() if k != "kind"}
        if kind == "dense":
            layers.append(network.DenseSpec(**fields))
        elif kind == "conv2d":
            layers.append(network.Conv2dSpec(**fields))
        elif kind == "spiking":
            layers.append(network.SpikingSpec(**fields))
        elif kind == "avgpool":
            layers.append(network.AvgPoolSpec(**fields))
        elif kind == "flatten":
            layers.append(network.FlattenSpec())
        else:
            layers.append(network.DecoderSpec(**fields))
    spec = network.NetworkSpec(
        input_shape=tuple(net["input_shape"]),
        timesteps=net["timesteps"],
        layers=layers,
    )
    spec.validate()
    return spec


def make_dataset(raw: dict, run_seed: int) -> datasets.Dataset:
    ds = raw["dataset"]
    kind = ds["kind"]
    if kind == "synthetic":
        return datasets.make_synthetic_temporal(
            classes=ds["classes"],
            timesteps=raw["network"]["timesteps"],
            train_samples=ds["train_samples"],
            val_samples=ds["val_samples"],
            channels=ds.get("channels", 0),
            noise=ds.get("noise", 0.0),
            seed=ds.get("seed", derive_seed(run_seed, TAG_DATASET)),
        )
    if kind == "idx":
        return datasets.load_idx_dataset(
            ds["images"], ds["labels"], ds.get("val_fraction", 0.1)
        )
    return datasets.load_framed_events(ds["path"], ds.get("val_fraction", 0.1))


def make_train_config(raw: dict) -> training.TrainConfig:
    if "training" not in raw:
        raise ConfigError("config has no 'training' section")
    return training.TrainConfig(**raw["training"])


def make_energy_model(raw: dict):
    energy = raw.get("energy", {})
    model = analysis.EnergyModel(
        e_mac_pj=energy.get("e_mac_pj", 4.6),
        e_ac_pj=energy.get("e_ac_pj", 0.9),
    )
    return model, energy.get("lif_decay_free", False)


@dataclass
class RunContext:
    """Everything a command needs, built deterministically from one config."""

    raw: dict
    seed: int
    spec: network.NetworkSpec
    net: network.Network
    dataset: datasets.Dataset


def build_run(raw: dict, need_dataset: bool = True) -> RunContext:
    seed = raw.get("seed", 0)
    spec = make_network_spec(raw)
    net = network.build(spec, Rng(derive_seed(seed, TAG_INIT)))
    dataset = make_dataset(raw, seed) if need_dataset else None
    if dataset is not None:
        dataset.check_compatible(net)
    return RunContext(raw=raw, seed=seed, spec=spec, net=net, dataset=dataset)

"""Flat, typed run configuration.

A run config is a single JSON object of scalar/list values covering every
tunable: topology, block layout, attention sizes, schedule, seeds, paths.
Unknown keys are rejected. Resolution order is defaults, then file values,
then command-line overrides; every command embeds its fully resolved
config in its outputs.
"""

from __future__ import annotations

import json

from .errors import ConfigError
from .graph import build_topology
from .network import ModelConfig, default_blocks
from .synth import SYNTH_CENTER, SYNTH_EDGES, SYNTH_JOINTS

# key -> (type tag, default)
SCHEMA: dict[str, tuple[str, object]] = {
    # data / topology
    "topology": ("str", "ntu25"),            # ntu25 | kinetics18 | custom
    "edges": ("pair_list", []),              # custom topology bones
    "center_joint": ("int", -1),             # -1 = preset default
    "coord_dims": ("int", 3),                # 2 for image-plane data (skips center/align)
    "align_joints": ("int_list", [4, 8, 20, 1]),  # right shoulder, left shoulder, spine base, spine
    "in_channels": ("int", 3),
    "num_classes": ("int", 60),
    "max_frames": ("int", 300),
    "bodies": ("int", 2),
    # model
    "block_channels": ("int_list", [64, 64, 64, 128, 128, 128, 256, 256, 256]),
    "block_strides": ("int_list", [1, 1, 1, 2, 1, 1, 2, 1, 1]),
    "adaptive": ("bool", True),
    "attention": ("bool", True),
    "graph_strategy": ("str", "warmstart"),  # warmstart | anchored
    "attention_order": ("str", "sequential"),  # sequential | parallel
    "kernel_t": ("int", 9),
    "kernel_s": ("int", 0),                  # 0 = auto (largest odd <= min(9, V))
    "kernel_t_att": ("int", 9),
    "attention_reduction": ("int", 2),
    "embed_divisor": ("int", 4),
    "mask_enabled": ("bool", False),
    # training
    "freeze_epochs": ("int", 5),
    "total_epochs": ("int", 50),
    "milestones": ("int_list", [30, 40]),
    "lr": ("float", 0.1),
    "lr_decay": ("float", 0.1),
    "momentum": ("float", 0.9),
    "nesterov": ("bool", True),
    "weight_decay": ("float", 1e-4),
    "batch_size": ("int", 8),
    "seed": ("int", 0),
    "modality": ("str", "joint"),
    "fusion_weights": ("float_list", []),    # empty = all ones
    "deterministic": ("bool", False),
    "dtype": ("str", "float32"),
    # augmentation
    "augment": ("bool", False),
    "crop_frames": ("int", 150),
    "max_rotation_deg": ("float", 17.0),
    "max_translation": ("float", 0.1),
    # synthetic data
    "synth": ("bool", False),
    "synth_per_class": ("int", 8),
    "synth_frames": ("int", 32),
    "synth_joints": ("int", SYNTH_JOINTS),
    # paths
    "in_path": ("str", ""),
    "data_dir": ("str", ""),
    "val_dir": ("str", ""),
    "out": ("str", ""),
    "checkpoint": ("str", ""),
    "resume": ("str", ""),
}

MODALITY_CHOICES = ("joint", "bone", "joint_motion", "bone_motion")


def _coerce(key: str, tag: str, value):
    try:
        if tag == "int":
            if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
                raise ValueError
            return int(value)
        if tag == "float":
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ValueError
            return float(value)
        if tag == "bool":
            if not isinstance(value, bool):
                raise ValueError
            return value
        if tag == "str":
            if not isinstance(value, str):
                raise ValueError
            return value
        if tag == "int_list":
            return [int(x) for x in value]
        if tag == "float_list":
            return [float(x) for x in value]
        if tag == "pair_list":
            return [[int(a), int(b)] for a, b in value]
    except (TypeError, ValueError):
        raise ConfigError(f"config key {key!r} expects {tag}, got {value!r}") from None
    raise ConfigError(f"unhandled schema tag {tag}")


def default_config() -> dict:
    return {k: (list(v) if isinstance(v, list) else v) for k, (_, v) in SCHEMA.items()}


def resolve_config(file_path: str | None = None, overrides: dict | None = None) -> dict:
    """Defaults, then file values, then overrides; unknown keys rejected."""
    cfg = default_config()
    if file_path:
        with open(file_path, "r", encoding="utf-8") as fh:
            try:
                file_vals = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{file_path}: invalid JSON: {exc}") from exc
        if not isinstance(file_vals, dict):
            raise ConfigError(f"{file_path}: config must be a JSON object")
        _apply(cfg, file_vals, source=file_path)
    if overrides:
        _apply(cfg, overrides, source="command line")
    _validate(cfg)
    return cfg


def _apply(cfg: dict, values: dict, source: str) -> None:
    unknown = set(values) - set(SCHEMA)
    if unknown:
        raise ConfigError(f"{source}: unknown config keys {sorted(unknown)}")
    for k, v in values.items():
        cfg[k] = _coerce(k, SCHEMA[k][0], v)


def _validate(cfg: dict) -> None:
    if cfg["modality"] not in MODALITY_CHOICES:
        raise ConfigError(f"modality must be one of {MODALITY_CHOICES}, got {cfg['modality']!r}")
    if cfg["topology"] not in ("ntu25", "kinetics18", "custom"):
        raise ConfigError(f"unknown topology {cfg['topology']!r}")
    if cfg["dtype"] not in ("float32", "float64"):
        raise ConfigError(f"dtype must be float32 or float64, got {cfg['dtype']!r}")
    if len(cfg["block_channels"]) != len(cfg["block_strides"]):
        raise ConfigError("block_channels and block_strides must have equal length")
    if len(cfg["align_joints"]) != 4:
        raise ConfigError("align_joints needs exactly 4 joint indices")
    if cfg["deterministic"]:
        cfg["dtype"] = "float64"
    if cfg["synth"]:
        # one synth config drives preprocess, train, and eval consistently
        apply_synth_topology(cfg)


def apply_synth_topology(cfg: dict) -> None:
    """Synthetic data uses the built-in stick figure; pin the topology and
    alignment joints so downstream commands agree with the generator."""
    cfg["topology"] = "custom"
    cfg["edges"] = [list(e) for e in SYNTH_EDGES]
    cfg["center_joint"] = SYNTH_CENTER
    cfg["align_joints"] = [4, 3, 0, 1]  # right hand, left hand, pelvis, chest
    cfg["num_classes"] = 4
    cfg["bodies"] = 1
    cfg["in_channels"] = 3
    cfg["max_frames"] = cfg["synth_frames"]


def build_model_config(cfg: dict) -> ModelConfig:
    center = None if cfg["center_joint"] < 0 else cfg["center_joint"]
    if cfg["topology"] == "custom":
        topo = build_topology("custom", custom_edges=[tuple(e) for e in cfg["edges"]],
                              center_joint=cfg["center_joint"])
    else:
        topo = build_topology(cfg["topology"], center_joint=center)
    blocks = default_blocks(cfg["in_channels"], channels=cfg["block_channels"],
                            strides=cfg["block_strides"], adaptive=cfg["adaptive"],
                            attention=cfg["attention"])
    return ModelConfig(topology=topo, blocks=blocks, num_classes=cfg["num_classes"],
                       in_channels=cfg["in_channels"], max_frames=cfg["max_frames"],
                       bodies=cfg["bodies"], kernel_t=cfg["kernel_t"], kernel_s=cfg["kernel_s"],
                       kernel_t_att=cfg["kernel_t_att"], reduction=cfg["attention_reduction"],
                       embed_divisor=cfg["embed_divisor"], strategy=cfg["graph_strategy"],
                       arrangement=cfg["attention_order"], mask_enabled=cfg["mask_enabled"],
                       dtype=cfg["dtype"])

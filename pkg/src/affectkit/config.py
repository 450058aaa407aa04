"""Plain-text key=value configuration with [arch]/[train]/[data]/[postproc]
sections. Every key has a documented default; unknown sections or keys are
rejected. Command-line flags override file values, and the effective merged
config is echoed into every output directory.
"""

from __future__ import annotations

import configparser
from pathlib import Path

from . import postproc
from .models import ArchitectureSpec
from .objective import Aggregator
from .trainer import TrainConfig


class ConfigError(ValueError):
    """Raised on unknown keys/sections or unparseable values."""


DEFAULTS = {
    "arch": {
        "backbone": "vgg",
        "variant": "basic",
        "conv_tap": "last",
        "fusion_fc": "false",
        "scale": "1.0",
        "input_side": "96",
        "rnn_width": "128",
        "fusion_fc_width": "64",
    },
    "train": {
        "learning_rate": "0.001",
        "optimizer": "adam",
        "batch_size": "4",
        "seq_len": "80",
        "epochs": "10",
        "seed": "0",
        "aggregator": "mean",
        "init_mode": "fresh",
        "init_checkpoint": "",
        "init_checkpoint_b": "",
        "clip_norm": "5.0",
        "target_train_ccc": "",
    },
    "data": {
        "valence_min": "-1.0",
        "valence_max": "1.0",
        "arousal_min": "0.0",
        "arousal_max": "1.0",
    },
    "postproc": {
        "window_valence": str(postproc.DEFAULT_WINDOW_VALENCE),
        "window_arousal": str(postproc.DEFAULT_WINDOW_AROUSAL),
        "min_frames": str(postproc.DEFAULT_MIN_FRAMES),
        "alpha": str(postproc.DEFAULT_ALPHA),
        "aggregator": "median",
    },
}


def load_config(path=None, overrides=None):
    """Read a config file, apply overrides, and return the merged string map.

    `overrides` is {(section, key): value}. Returns {section: {key: str}}.
    """
    merged = {s: dict(kv) for s, kv in DEFAULTS.items()}
    if path is not None:
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise ConfigError(f"config file not found: {path}")
        for section in parser.sections():
            if section not in merged:
                raise ConfigError(f"unknown config section [{section}]")
            for key, value in parser.items(section):
                if key not in merged[section]:
                    raise ConfigError(f"unknown key {key!r} in section [{section}]")
                merged[section][key] = value
    for (section, key), value in (overrides or {}).items():
        if value is None:
            continue
        if section not in merged or key not in merged[section]:
            raise ConfigError(f"unknown override {section}.{key}")
        merged[section][key] = str(value)
    return merged


def _get(cfg, section, key, conv):
    raw = cfg[section][key]
    try:
        if conv is bool:
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        return conv(raw)
    except ValueError:
        raise ConfigError(f"bad value for {section}.{key}: {raw!r}")


def arch_spec(cfg):
    try:
        return ArchitectureSpec(
            backbone=cfg["arch"]["backbone"],
            variant=cfg["arch"]["variant"],
            conv_tap=cfg["arch"]["conv_tap"],
            fusion_fc=_get(cfg, "arch", "fusion_fc", bool),
            scale=_get(cfg, "arch", "scale", float),
            input_side=_get(cfg, "arch", "input_side", int),
            rnn_width=_get(cfg, "arch", "rnn_width", int),
            fusion_fc_width=_get(cfg, "arch", "fusion_fc_width", int),
        )
    except ValueError as e:
        raise ConfigError(f"arch: {e}")


def train_config(cfg, checkpoint_dir="."):
    target = cfg["train"]["target_train_ccc"]
    try:
        return TrainConfig(
            arch=arch_spec(cfg),
            aggregator=Aggregator(cfg["train"]["aggregator"]),
            learning_rate=_get(cfg, "train", "learning_rate", float),
            optimizer=cfg["train"]["optimizer"],
            batch_size=_get(cfg, "train", "batch_size", int),
            seq_len=_get(cfg, "train", "seq_len", int),
            epochs=_get(cfg, "train", "epochs", int),
            seed=_get(cfg, "train", "seed", int),
            checkpoint_dir=checkpoint_dir,
            init_mode=cfg["train"]["init_mode"],
            init_checkpoint=cfg["train"]["init_checkpoint"],
            init_checkpoint_b=cfg["train"]["init_checkpoint_b"],
            clip_norm=_get(cfg, "train", "clip_norm", float),
            target_train_ccc=float(target) if target else None,
        )
    except ValueError as e:
        raise ConfigError(f"train: {e}")


def clamp_ranges(cfg):
    return {
        "valence": (_get(cfg, "data", "valence_min", float),
                    _get(cfg, "data", "valence_max", float)),
        "arousal": (_get(cfg, "data", "arousal_min", float),
                    _get(cfg, "data", "arousal_max", float)),
    }


def write_effective(cfg, out_dir):
    """Echo the merged config into an output directory."""
    path = Path(out_dir) / "config.effective"
    with open(path, "w", encoding="utf-8") as f:
        for section in sorted(cfg):
            f.write(f"[{section}]\n")
            for key in sorted(cfg[section]):
                f.write(f"{key}={cfg[section][key]}\n")
            f.write("\n")
    return path

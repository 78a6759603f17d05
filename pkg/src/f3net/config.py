"""Presets and plain-text configuration files.

Config files are INI-style key/value sections mirroring the config
dataclasses::

    [network]
    num_stages = 3
    base_channels = 8

    [train]
    patch_shape = 32,32,32
    initial_lr = 0.01
    lambda1 = 1.0

    [predict]
    window_overlap = 0.5

Precedence: preset < config file < explicit overrides (CLI flags).
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .errors import LayoutError, ShapeError
from .inference import PredictConfig
from .losses import LossWeights
from .network import NetworkSpec
from .training import TrainConfig

PRESETS = ("desk", "paper")


@dataclass(frozen=True)
class RunConfig:
    network: NetworkSpec
    train: TrainConfig
    predict: PredictConfig


def preset(name: str) -> RunConfig:
    """Named configuration bundles.

    ``desk``: CPU-sized (32^3 patches, 3 stages, 8 base channels, 2 epochs
    of 100 steps). ``paper``: full-scale training shape (80, 112, 80) with
    5 stages at base width 32 and 1000 epochs of 250 steps.
    """
    if name == "desk":
        network = NetworkSpec(num_stages=3, base_channels=8)
        train = TrainConfig(patch_shape=(32, 32, 32), max_epochs=2, steps_per_epoch=100)
        predict = PredictConfig(patch_shape=(32, 32, 32))
        return RunConfig(network, train, predict)
    if name == "paper":
        # 6 stages would need patches divisible by 32; (80, 112, 80) caps
        # the pyramid at 5 stages.
        network = NetworkSpec(num_stages=5, base_channels=32)
        train = TrainConfig()
        predict = PredictConfig()
        return RunConfig(network, train, predict)
    raise ShapeError(f"unknown preset {name!r}; choose from {PRESETS}")


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ShapeError(f"cannot parse boolean from {text!r}")


def _coerce_like(current, text: str):
    text = text.strip()
    if isinstance(current, bool):
        return _parse_bool(text)
    if isinstance(current, int):
        return int(text)
    if isinstance(current, float):
        return float(text)
    if isinstance(current, tuple):
        parts = [p for p in text.replace(",", " ").split() if p]
        elem = current[0] if current else 0
        values = tuple(int(p) if isinstance(elem, int) else float(p) for p in parts)
        if len(values) == 1 and len(current) > 1:
            values = values * len(current)
        return values
    return text


def _apply_section(cfg, values: dict[str, str]):
    """Replace dataclass fields from string values, coercing by field type."""
    names = {f.name for f in fields(cfg)}
    updates = {}
    weights = {}
    for key, text in values.items():
        if key in ("lambda1", "lambda2"):
            weights[key] = float(text)
        elif key in names:
            updates[key] = _coerce_like(getattr(cfg, key), text)
        else:
            raise ShapeError(f"unknown config key {key!r} for {type(cfg).__name__}")
    if weights:
        lw = cfg.loss_weights
        updates["loss_weights"] = LossWeights(
            lambda1=weights.get("lambda1", lw.lambda1),
            lambda2=weights.get("lambda2", lw.lambda2),
        )
    if isinstance(cfg, NetworkSpec) and "channels_per_stage" not in updates:
        if updates.keys() & {"num_stages", "base_channels", "max_channels"}:
            updates["channels_per_stage"] = None  # rederive the ladder
    return replace(cfg, **updates) if updates else cfg


def read_config_file(path) -> dict[str, dict[str, str]]:
    path = Path(path)
    if not path.is_file():
        raise LayoutError(f"config file {path} not found")
    parser = configparser.ConfigParser()
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise LayoutError(f"config file {path} is malformed: {exc}") from exc
    return {section: dict(parser[section]) for section in parser.sections()}


def apply_overrides(run: RunConfig, sections: dict[str, dict[str, str]]) -> RunConfig:
    """Apply string-valued overrides grouped by section name."""
    network, train, predict = run.network, run.train, run.predict
    for section, values in sections.items():
        if section == "network":
            network = _apply_section(network, values)
        elif section == "train":
            train = _apply_section(train, values)
        elif section == "predict":
            predict = _apply_section(predict, values)
        else:
            raise ShapeError(f"unknown config section {section!r}")
    return RunConfig(network, train, predict)


def build_run_config(preset_name: str = "paper", config_path=None,
                     overrides: dict[str, dict[str, str]] | None = None) -> RunConfig:
    run = preset(preset_name)
    if config_path is not None:
        run = apply_overrides(run, read_config_file(config_path))
    if overrides:
        run = apply_overrides(run, overrides)
    # keep the network's masking scope in sync with the trainer switch
    if run.train.mask_scope != run.network.mask_scope:
        run = RunConfig(
            replace(run.network, mask_scope=run.train.mask_scope), run.train, run.predict
        )
    return run

"""Run configuration: key-value config files, CLI overrides, ablation switches.

A config file holds flat dotted keys, one per line::

    # smoke-scale training run
    model.base_channels = 64
    train.epochs = 40
    data.manifest = corpus/manifest.jsonl

Sections map onto the dataclasses of the owning modules.  Unknown keys are
rejected by name; precedence is CLI override > file > dataclass default.
"""

from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .dsp import StftConfig
from .errors import ConfigError
from .losses import LossWeights
from .network import ModelConfig
from .trainer import TrainConfig


@dataclass
class PathsConfig:
    manifest: str | None = None
    out_dir: str = "runs/run"


_SECTIONS = {
    "model": ModelConfig,
    "stft": StftConfig,
    "train": TrainConfig,
    "loss": LossWeights,
    "data": PathsConfig,
}


def _section_types(cls) -> dict[str, type]:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls)}


KNOWN_KEYS: dict[str, type] = {}
for _prefix, _cls in _SECTIONS.items():
    for _name, _type in _section_types(_cls).items():
        KNOWN_KEYS[f"{_prefix}.{_name}"] = _type


@dataclass
class RunConfig:
    """Fully resolved configuration for one CLI run."""

    model: ModelConfig = field(default_factory=ModelConfig)
    stft: StftConfig = field(default_factory=StftConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    data: PathsConfig = field(default_factory=PathsConfig)


def _coerce(key: str, raw: str, target: type):
    text = raw.strip()
    if target is bool or target == bool:
        lowered = text.lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"key {key}: expected a boolean, got {raw!r}")
    if target is int:
        try:
            return int(text)
        except ValueError as exc:
            raise ConfigError(f"key {key}: expected an integer, got {raw!r}") from exc
    if target is float:
        try:
            return float(text)
        except ValueError as exc:
            raise ConfigError(f"key {key}: expected a number, got {raw!r}") from exc
    if target is str:
        return text
    # optional fields such as `str | None`
    if typing.get_origin(target) in (typing.Union, types.UnionType):
        if text.lower() == "none":
            return None
        for arg in typing.get_args(target):
            if arg is not type(None):
                return _coerce(key, raw, arg)
    raise ConfigError(f"key {key}: unsupported value type {target}")


def parse_config_file(path) -> dict[str, str]:
    """Read ``key = value`` lines; ``#`` and ``;`` lines are comments."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            stripped = line.strip()
            if not stripped or stripped.startswith(("#", ";")):
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {stripped!r}")
            key, _, value = stripped.partition("=")
            values[key.strip()] = value.strip()
    return values


def build_run_config(
    file_values: dict[str, str] | None = None,
    overrides: dict[str, str] | None = None,
) -> RunConfig:
    """Merge defaults, file values, and overrides into a validated RunConfig."""
    merged: dict[str, str] = {}
    merged.update(file_values or {})
    merged.update(overrides or {})
    per_section: dict[str, dict] = {name: {} for name in _SECTIONS}
    for key, raw in merged.items():
        if key not in KNOWN_KEYS:
            raise ConfigError(f"unknown configuration key: {key}")
        section, _, name = key.partition(".")
        per_section[section][name] = _coerce(key, raw, KNOWN_KEYS[key])
    try:
        return RunConfig(
            **{section: cls(**per_section[section]) for section, cls in _SECTIONS.items()}
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


# Ablation switches, named after the configuration they remove.
ABLATIONS = {
    "w/o-mag-comp": "disable magnitude compression (compression exponent forced to 1)",
    "w/o-lsigmoid": "replace the learnable sigmoid mask activation with PReLU",
    "w/o-phase-decoder": "bypass the phase decoder; enhanced output keeps the noisy phase",
    "w/o-phase-loss": "drop the anti-wrapping phase objective (gamma5 = 0)",
    "w/o-complex-loss": "drop the complex-spectrum objective (gamma3 = 0)",
    "w/o-metric-disc": "freeze and ignore the metric discriminator (gamma4 = 0)",
}


def apply_ablation(cfg: RunConfig, name: str) -> None:
    """Toggle the configuration switches behind one named ablation."""
    if name == "w/o-mag-comp":
        cfg.model.disable_mag_compression = True
    elif name == "w/o-lsigmoid":
        cfg.model.replace_lsigmoid_with_prelu = True
    elif name == "w/o-phase-decoder":
        cfg.model.disable_phase_decoder = True
    elif name == "w/o-phase-loss":
        cfg.loss.gamma5 = 0.0
    elif name == "w/o-complex-loss":
        cfg.loss.gamma3 = 0.0
    elif name == "w/o-metric-disc":
        cfg.loss.gamma4 = 0.0
        cfg.train.disable_discriminator = True
    else:
        known = ", ".join(sorted(ABLATIONS))
        raise ConfigError(f"unknown ablation {name!r}; known: {known}")


def echo_config(cfg: RunConfig) -> str:
    """Serialize the fully resolved configuration back to config-file syntax."""
    lines = []
    for section, obj in (
        ("model", cfg.model),
        ("stft", cfg.stft),
        ("train", cfg.train),
        ("loss", cfg.loss),
        ("data", cfg.data),
    ):
        for f in dataclasses.fields(obj):
            value = getattr(obj, f.name)
            lines.append(f"{section}.{f.name} = {value}")
    return "\n".join(lines) + "\n"

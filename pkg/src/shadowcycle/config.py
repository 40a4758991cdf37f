"""Flat ``key = value`` run configuration files.

A config file carries the same keys as :class:`TrainConfig` plus the
loss weights and the dataset location; command-line flags override
file values, which override defaults.
"""

from __future__ import annotations

from dataclasses import fields as dataclass_fields
from pathlib import Path
from typing import Optional

from .engine import TrainConfig
from .errors import UsageError
from .losses import LossWeights

# Keys that locate data rather than shape training.
DATA_KEYS: dict[str, type] = {
    "data_root": str,
    "layout": str,
    "split": str,
    "tag": str,
}


def _field_types() -> dict[str, type]:
    types: dict[str, type] = {}
    probe_config = TrainConfig()
    for f in dataclass_fields(TrainConfig):
        if f.name == "weights":
            continue
        types[f.name] = type(getattr(probe_config, f.name))
    probe_weights = LossWeights()
    for f in dataclass_fields(LossWeights):
        types[f.name] = type(getattr(probe_weights, f.name))
    types.update(DATA_KEYS)
    return types


VALID_KEYS: dict[str, type] = _field_types()


def coerce(key: str, raw: str) -> object:
    """Convert a raw string to the declared type of ``key``."""
    if key not in VALID_KEYS:
        raise UsageError(
            f"unknown config key {key!r}; valid keys: {', '.join(sorted(VALID_KEYS))}"
        )
    target = VALID_KEYS[key]
    raw = raw.strip()
    try:
        if target is bool:
            lowered = raw.lower()
            if lowered in ("true", "1", "yes", "on"):
                return True
            if lowered in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if target is int:
            return int(raw)
        if target is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise UsageError(f"config key {key!r} expects {target.__name__}, got {raw!r}") from exc


def parse_config(path: Path | str) -> dict:
    """Read one ``key = value`` file into a typed mapping."""
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    values: dict = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise UsageError(f"{path}:{lineno}: expected 'key = value', got {stripped!r}")
        key, _, raw = stripped.partition("=")
        values[key.strip()] = coerce(key.strip(), raw)
    return values


def merge_config(
    file_path: Optional[Path | str] = None,
    overrides: Optional[dict] = None,
) -> dict:
    """Layer defaults, then the config file, then explicit overrides."""
    merged: dict = {}
    if file_path is not None:
        merged.update(parse_config(file_path))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in VALID_KEYS:
            raise UsageError(
                f"unknown config key {key!r}; valid keys: {', '.join(sorted(VALID_KEYS))}"
            )
        merged[key] = value
    return merged


def train_config_from(mapping: dict) -> TrainConfig:
    """Build a :class:`TrainConfig` from a merged mapping."""
    training = {k: v for k, v in mapping.items() if k not in DATA_KEYS}
    return TrainConfig.from_dict(training)


def write_config(path: Path | str, mapping: dict) -> Path:
    path = Path(path)
    lines = [f"{key} = {mapping[key]}" for key in sorted(mapping)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path

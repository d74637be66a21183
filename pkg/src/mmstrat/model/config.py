"""TOML configuration loading and canonical hashing."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from ..errors import ConfigError


def load_config(path) -> dict:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def canonical_json(config: dict) -> str:
    return json.dumps(config, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(config: dict) -> str:
    """SHA-256 of the canonical JSON form; stable under re-serialisation."""
    return hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest()

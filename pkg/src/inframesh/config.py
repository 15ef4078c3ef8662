"""Deployment configuration: one JSON (or TOML) document with MESH_*
environment overrides."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping

from .errors import ConfigurationError


@dataclass
class MeshConfig:
    data_dir: str = "./mesh-data"
    port: int = 8765
    tau: float = 0.30
    delta: float = 0.50
    geo_precision: int = 5
    token_file: str | None = None
    max_turns: int = 8
    fixtures_dir: str | None = None
    mc3_path: str | None = None
    llm_url: str | None = None
    tls_cert: str | None = None
    tls_key: str | None = None

    @property
    def data_path(self) -> Path:
        return Path(self.data_dir)

    def tokens(self) -> set[str]:
        if not self.token_file:
            return set()
        path = Path(self.token_file)
        if not path.exists():
            raise ConfigurationError(f"token file missing: {path}")
        return {line.strip() for line in path.read_text(encoding="utf-8").splitlines()
                if line.strip()}


_ENV_PREFIX = "MESH_"


def load_config(path: str | Path | None = None,
                env: Mapping[str, str] | None = None) -> MeshConfig:
    env = os.environ if env is None else env
    values: dict[str, Any] = {}
    if path is not None:
        values.update(_read_file(Path(path)))
    for spec in fields(MeshConfig):
        env_key = _ENV_PREFIX + spec.name.upper()
        if env_key in env:
            values[spec.name] = env[env_key]
    known = {spec.name: spec.type for spec in fields(MeshConfig)}
    unknown = set(values) - set(known)
    if unknown:
        raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
    coerced = {name: _coerce(name, value) for name, value in values.items()}
    return MeshConfig(**coerced)


def _read_file(path: Path) -> dict[str, Any]:
    if not path.exists():
        raise ConfigurationError(f"config file missing: {path}")
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".toml":
        try:
            import tomllib  # python >= 3.11
        except ImportError:
            try:
                import tomli as tomllib  # type: ignore[no-redef]
            except ImportError:
                raise ConfigurationError(
                    "TOML config needs python >= 3.11 or the tomli package; "
                    "use the JSON-equivalent form instead") from None
        return dict(tomllib.loads(text))
    try:
        return dict(json.loads(text))
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config is not valid JSON: {exc}") from exc


_INT_KEYS = ("port", "geo_precision", "max_turns")
_FLOAT_KEYS = ("tau", "delta")


def _coerce(name: str, value: Any) -> Any:
    if value is None:
        return None
    if name in _INT_KEYS:
        return int(value)
    if name in _FLOAT_KEYS:
        return float(value)
    return str(value)

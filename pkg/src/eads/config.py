"""Operator configuration: TOML file, overridden by ``EADS_*`` environment variables."""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


class ConfigError(Exception):
    pass


@dataclass
class Config:
    listen: str = "127.0.0.1:8080"
    data_dir: str = "eads-data"
    journal: str = ""
    token: str = ""
    checkpoint_every_n_edits: int = 1
    key_file: str = ""
    mode: str = "log"
    ledger: str = "main"
    allow_admin: bool = False
    url: str = ""

    @property
    def host(self) -> str:
        return self.listen.rsplit(":", 1)[0]

    @property
    def port(self) -> int:
        return int(self.listen.rsplit(":", 1)[1])

    @property
    def journal_path(self) -> Path:
        return Path(self.journal) if self.journal else Path(self.data_dir) / "journal.jsonl"

    @property
    def key_path(self) -> Path:
        return Path(self.key_file) if self.key_file else Path(self.data_dir) / "server.key"

    @property
    def server_url(self) -> str:
        return self.url or f"http://{self.listen}"

    def validate(self) -> None:
        if ":" not in self.listen:
            raise ConfigError(f"listen must be host:port, got {self.listen!r}")
        try:
            port = self.port
        except ValueError:
            raise ConfigError(f"invalid port in listen {self.listen!r}") from None
        if not 0 <= port <= 65535:
            raise ConfigError(f"port {port} out of range")
        if self.checkpoint_every_n_edits < 1:
            raise ConfigError("checkpoint_every_n_edits must be >= 1")
        if self.mode not in ("log", "map"):
            raise ConfigError(f"mode must be 'log' or 'map', got {self.mode!r}")


def _coerce(name: str, kind, value):
    if kind is bool or kind == "bool":
        if isinstance(value, bool):
            return value
        if str(value).lower() in ("1", "true", "yes", "on"):
            return True
        if str(value).lower() in ("0", "false", "no", "off", ""):
            return False
    elif kind is int or kind == "int":
        if isinstance(value, bool):
            raise ConfigError(f"{name}: expected integer")
        try:
            return int(value)
        except (TypeError, ValueError):
            pass
    elif isinstance(value, str):
        return value
    raise ConfigError(f"{name}: invalid value {value!r}")


def load_config(path: str | os.PathLike | None = None, environ: dict | None = None) -> Config:
    environ = os.environ if environ is None else environ
    values: dict = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                values = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    known = {f.name: f.type for f in fields(Config)}
    unknown = set(values) - set(known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    for name in known:
        env = environ.get("EADS_" + name.upper())
        if env is not None:
            values[name] = env
    cfg = Config(**{k: _coerce(k, known[k], v) for k, v in values.items()})
    cfg.validate()
    return cfg

"""Backend configuration: ``key=value`` files naming ``memory`` or ``file``."""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

from ..errors import BadConfig
from .base import StorageBackend
from .filesystem import FileBackend
from .memory import MemoryBackend


def parse_key_values(text: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise BadConfig(f"line {lineno}: expected key=value, got {raw!r}")
        values[key.strip()] = value.strip()
    return values


@dataclass(frozen=True)
class BackendConfig:
    backend: str = "memory"
    root: str | None = None

    @classmethod
    def from_mapping(cls, values: dict[str, str]) -> BackendConfig:
        backend = values.get("backend", "memory")
        root = values.get("root") or None
        config = cls(backend, root)
        config.check()
        return config

    @classmethod
    def from_file(cls, path: str | os.PathLike[str]) -> BackendConfig:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise BadConfig(f"cannot read config file {path}: {exc}") from exc
        return cls.from_mapping(parse_key_values(text))

    def check(self) -> None:
        if self.backend not in ("memory", "file"):
            raise BadConfig(f"unknown backend {self.backend!r}; expected memory or file")
        if self.backend == "file" and not self.root:
            raise BadConfig("file backend requires root=<dir>")


def open_backend(config: BackendConfig) -> StorageBackend:
    config.check()
    if config.backend == "memory":
        return MemoryBackend()
    return FileBackend(config.root)  # type: ignore[arg-type]


def close(handle: StorageBackend) -> None:
    handle.close()

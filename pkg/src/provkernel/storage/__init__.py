"""Pluggable cluster storage (memory and file-directory backends)."""

from .base import (
    CONTENT_TYPES,
    ClusterKind,
    StorageBackend,
    StoragePath,
    StorageRecord,
    copy_records,
    seg,
    store_digest,
)
from .config import BackendConfig, close, open_backend, parse_key_values
from .filesystem import FileBackend
from .memory import MemoryBackend

__all__ = [
    "CONTENT_TYPES",
    "BackendConfig",
    "ClusterKind",
    "FileBackend",
    "MemoryBackend",
    "StorageBackend",
    "StoragePath",
    "StorageRecord",
    "close",
    "copy_records",
    "open_backend",
    "parse_key_values",
    "seg",
    "store_digest",
]

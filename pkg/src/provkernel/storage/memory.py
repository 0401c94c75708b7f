"""In-process backend: nested dicts guarded by one lock."""

from __future__ import annotations

import threading
from collections.abc import Sequence

from ..errors import BackendUnavailable, BadPath, ImmutableOverwrite, NotFound
from .base import ClusterKind, StorageBackend, StoragePath, StorageRecord


class MemoryBackend(StorageBackend):
    name = "memory"

    def __init__(self) -> None:
        self._lock = threading.RLock()
        self._clusters: dict[tuple[str, ClusterKind], dict[tuple[str, ...], StorageRecord]] = {}
        # interior prefixes per cluster, so a record path can never also be a directory
        self._interior: dict[tuple[str, ClusterKind], set[tuple[str, ...]]] = {}
        self.closed = False

    def _check_open(self) -> None:
        if self.closed:
            raise BackendUnavailable("memory backend is closed")

    def put(self, record: StorageRecord) -> None:
        path = record.path
        key = (path.item_id, path.kind)
        with self._lock:
            self._check_open()
            cluster = self._clusters.setdefault(key, {})
            interior = self._interior.setdefault(key, set())
            sub = path.subpath
            if sub in interior or any(sub[:i] in cluster for i in range(1, len(sub))):
                raise BadPath(f"{path} conflicts with an existing record prefix")
            if path.kind is ClusterKind.EVENT and sub in cluster:
                raise ImmutableOverwrite(f"event record {path} already exists")
            cluster[sub] = record
            interior.update(sub[:i] for i in range(1, len(sub)))

    def get(self, path: StoragePath) -> StorageRecord:
        with self._lock:
            self._check_open()
            try:
                return self._clusters[(path.item_id, path.kind)][path.subpath]
            except KeyError:
                raise NotFound(str(path)) from None

    def list(self, item_id: str, kind: ClusterKind, subpath_prefix: Sequence[str] = ()) -> list[StoragePath]:
        prefix = tuple(subpath_prefix)
        with self._lock:
            self._check_open()
            cluster = self._clusters.get((item_id, ClusterKind(kind)), {})
            hits = [rec.path for sub, rec in cluster.items() if sub[: len(prefix)] == prefix]
        return sorted(hits, key=str)

    def list_items(self) -> list[str]:
        with self._lock:
            self._check_open()
            return sorted({item for (item, _), cluster in self._clusters.items() if cluster})

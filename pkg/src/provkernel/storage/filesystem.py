"""Directory-tree backend: one payload file per path plus a ``.meta`` sibling.

Layout is ``root/<item_id>/<kind>/<seg>/.../<seg>``; the sibling
``<seg>.meta`` holds the content type. Temporary files carry a ``~``
which can never appear in a valid segment.
"""

from __future__ import annotations

import os
import threading
import uuid
from collections.abc import Sequence
from pathlib import Path

from ..errors import BackendUnavailable, BadPath, ImmutableOverwrite, NotFound
from .base import ClusterKind, StorageBackend, StoragePath, StorageRecord

META_SUFFIX = ".meta"


class FileBackend(StorageBackend):
    name = "file"

    def __init__(self, root: str | os.PathLike[str]) -> None:
        self.root = Path(root)
        self._lock = threading.RLock()
        self.closed = False
        try:
            self.root.mkdir(parents=True, exist_ok=True)
            probe = self.root / f"probe~{uuid.uuid4().hex}"
            probe.write_bytes(b"ok")
            probe.unlink()
        except OSError as exc:
            raise BackendUnavailable(f"cannot use storage root {self.root}: {exc}") from exc

    def _check_open(self) -> None:
        if self.closed:
            raise BackendUnavailable("file backend is closed")

    def _file(self, path: StoragePath) -> Path:
        return self.root.joinpath(path.item_id, path.kind.value, *path.subpath)

    def put(self, record: StorageRecord) -> None:
        self._check_open()
        target = self._file(record.path)
        meta = target.with_name(target.name + META_SUFFIX)
        tag = uuid.uuid4().hex
        data_tmp = target.with_name(f"{target.name}~{tag}")
        meta_tmp = target.with_name(f"{target.name}{META_SUFFIX}~{tag}")
        with self._lock:
            try:
                target.parent.mkdir(parents=True, exist_ok=True)
            except (FileExistsError, NotADirectoryError) as exc:
                raise BadPath(f"{record.path} conflicts with an existing record prefix") from exc
            except OSError as exc:
                raise BackendUnavailable(str(exc)) from exc
            if target.is_dir():
                raise BadPath(f"{record.path} conflicts with an existing record prefix")
            write_once = record.path.kind is ClusterKind.EVENT
            if write_once and target.exists():
                raise ImmutableOverwrite(f"event record {record.path} already exists")
            try:
                data_tmp.write_bytes(record.payload)
                meta_tmp.write_text(record.content_type, encoding="utf-8")
                os.replace(meta_tmp, meta)
                if write_once:
                    try:
                        os.link(data_tmp, target)
                    except FileExistsError as exc:
                        raise ImmutableOverwrite(f"event record {record.path} already exists") from exc
                    finally:
                        data_tmp.unlink(missing_ok=True)
                else:
                    os.replace(data_tmp, target)
            except ImmutableOverwrite:
                raise
            except OSError as exc:
                raise BackendUnavailable(str(exc)) from exc
            finally:
                for tmp in (data_tmp, meta_tmp):
                    if tmp.exists():
                        tmp.unlink(missing_ok=True)

    def get(self, path: StoragePath) -> StorageRecord:
        self._check_open()
        target = self._file(path)
        try:
            payload = target.read_bytes()
            content_type = target.with_name(target.name + META_SUFFIX).read_text(encoding="utf-8")
        except (FileNotFoundError, IsADirectoryError, NotADirectoryError):
            raise NotFound(str(path)) from None
        except OSError as exc:
            raise BackendUnavailable(str(exc)) from exc
        return StorageRecord(path, payload, content_type)

    def list(self, item_id: str, kind: ClusterKind, subpath_prefix: Sequence[str] = ()) -> list[StoragePath]:
        self._check_open()
        kind = ClusterKind(kind)
        base = self.root.joinpath(item_id, kind.value)
        start = base.joinpath(*subpath_prefix)
        found: list[StoragePath] = []
        try:
            if start.is_file():
                if (start.with_name(start.name + META_SUFFIX)).exists():
                    found.append(StoragePath(item_id, kind, tuple(subpath_prefix)))
                return found
            for dirpath, _dirnames, filenames in os.walk(start):
                rel = Path(dirpath).relative_to(base).parts
                for fname in filenames:
                    if "~" in fname or fname.endswith(META_SUFFIX):
                        continue
                    found.append(StoragePath(item_id, kind, (*rel, fname)))
        except OSError as exc:
            raise BackendUnavailable(str(exc)) from exc
        return sorted(found, key=str)

    def list_items(self) -> list[str]:
        self._check_open()
        try:
            entries = sorted(p for p in self.root.iterdir() if p.is_dir())
        except OSError as exc:
            raise BackendUnavailable(str(exc)) from exc
        return [p.name for p in entries if _has_records(p)]


def _has_records(directory: Path) -> bool:
    for _dirpath, _dirs, files in os.walk(directory):
        if any("~" not in f and not f.endswith(META_SUFFIX) for f in files):
            return True
    return False

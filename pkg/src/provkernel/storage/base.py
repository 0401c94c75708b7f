"""Cluster-addressed storage interface shared by every backend."""

from __future__ import annotations

import abc
import enum
import hashlib
from collections.abc import Iterable, Sequence
from dataclasses import dataclass

from ..errors import BadPath, NotFound
from ..model import SEGMENT_RE

CONTENT_TYPES = frozenset({"spec", "event", "outcome", "annotation", "opm-xml", "property", "view", "collection"})


class ClusterKind(str, enum.Enum):
    PROPERTY = "Property"
    EVENT = "Event"
    VIEW = "View"
    OUTCOME = "Outcome"
    WORKFLOW = "Workflow"
    COLLECTION = "Collection"


def seg(n: int) -> str:
    """Numeric path segment, zero padded so lexical order is numeric order."""
    if n < 0:
        raise BadPath(f"negative numeric segment {n}")
    return f"{n:012d}"


def _check_segment(s: str) -> str:
    if not isinstance(s, str) or not SEGMENT_RE.fullmatch(s) or s in (".", ".."):
        raise BadPath(f"invalid path segment {s!r}")
    if s.endswith(".meta"):
        raise BadPath(f"path segment {s!r} may not end in .meta")
    return s


@dataclass(frozen=True)
class StoragePath:
    item_id: str
    kind: ClusterKind
    subpath: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", ClusterKind(self.kind))
        object.__setattr__(self, "subpath", tuple(self.subpath))
        _check_segment(self.item_id)
        if not self.subpath:
            raise BadPath("storage path needs at least one subpath segment")
        for s in self.subpath:
            _check_segment(s)

    def __str__(self) -> str:
        return "/".join((self.item_id, self.kind.value, *self.subpath))

    def has_prefix(self, prefix: Sequence[str]) -> bool:
        return self.subpath[: len(prefix)] == tuple(prefix)

    @classmethod
    def parse(cls, text: str) -> StoragePath:
        parts = text.split("/")
        if len(parts) < 3:
            raise BadPath(f"not a storage path: {text!r}")
        try:
            kind = ClusterKind(parts[1])
        except ValueError as exc:
            raise BadPath(f"unknown cluster kind in {text!r}") from exc
        return cls(parts[0], kind, tuple(parts[2:]))


@dataclass(frozen=True)
class StorageRecord:
    path: StoragePath
    payload: bytes
    content_type: str

    def __post_init__(self) -> None:
        if not isinstance(self.payload, (bytes, bytearray)) or not self.payload:
            raise ValueError("storage payload must be non-empty bytes")
        object.__setattr__(self, "payload", bytes(self.payload))
        if self.content_type not in CONTENT_TYPES:
            raise ValueError(f"unknown content type {self.content_type!r}")


class StorageBackend(abc.ABC):
    """Pluggable persistence. Event-kind paths are write-once."""

    name: str = "abstract"

    @abc.abstractmethod
    def put(self, record: StorageRecord) -> None: ...

    @abc.abstractmethod
    def get(self, path: StoragePath) -> StorageRecord: ...

    @abc.abstractmethod
    def list(self, item_id: str, kind: ClusterKind, subpath_prefix: Sequence[str] = ()) -> list[StoragePath]: ...

    @abc.abstractmethod
    def list_items(self) -> list[str]: ...

    def exists(self, path: StoragePath) -> bool:
        try:
            self.get(path)
        except NotFound:
            return False
        return True

    def close(self) -> None:
        self.closed = True

    def __enter__(self) -> StorageBackend:
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()


def store_digest(backend: StorageBackend) -> str:
    """Digest over every record in the backend, for no-mutation checks."""
    h = hashlib.sha256()
    for item_id in backend.list_items():
        for kind in ClusterKind:
            for path in backend.list(item_id, kind):
                rec = backend.get(path)
                for part in (str(path).encode(), rec.content_type.encode(), rec.payload):
                    h.update(len(part).to_bytes(8, "big"))
                    h.update(part)
    return h.hexdigest()


def copy_records(src: StorageBackend, dst: StorageBackend, kinds: Iterable[ClusterKind] = tuple(ClusterKind)) -> int:
    count = 0
    kinds = tuple(kinds)
    for item_id in src.list_items():
        for kind in kinds:
            for path in src.list(item_id, kind):
                dst.put(src.get(path))
                count += 1
    return count

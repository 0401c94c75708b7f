"""Shared builders for the test suites."""

from __future__ import annotations

import itertools
import random
import uuid
from collections.abc import Callable
from datetime import datetime, timedelta, timezone

from provkernel.capture import ProvenanceStore
from provkernel.model import DataRef, simple_spec
from provkernel.errors import ProvenanceError
from provkernel.storage import ClusterKind, MemoryBackend, StorageBackend, StoragePath, StorageRecord

DIAMOND_EDGES = [("A", "B"), ("A", "C"), ("B", "D"), ("C", "D")]


class FixedClock:
    """Advances one millisecond per call from a fixed epoch."""

    def __init__(self, start: datetime = datetime(2024, 1, 1, tzinfo=timezone.utc)) -> None:
        self.now = start

    def __call__(self) -> datetime:
        self.now += timedelta(milliseconds=1)
        return self.now


def sequential_ids() -> Callable[[], str]:
    """Deterministic UUID-shaped item ids: ...-000000000001, ...-000000000002."""
    counter = itertools.count(1)
    return lambda: str(uuid.UUID(int=next(counter)))


def make_store(backend=None) -> ProvenanceStore:
    return ProvenanceStore(backend or MemoryBackend(), clock=FixedClock(), id_factory=sequential_ids())


def diamond_spec(spec_id: str = "diamond"):
    return simple_spec(spec_id, DIAMOND_EDGES)


def head_input(payload: bytes = b"scan-001") -> dict[str, DataRef]:
    return {"input": DataRef.from_payload("input", payload)}


# -- random storage workloads -------------------------------------------------------

_ITEMS = ("00000000-0000-0000-0000-00000000000a", "00000000-0000-0000-0000-00000000000b", "item.c")
_SEGMENTS = ("000000000000", "000000000001", "000000000042", "a", "b.c", "x-y_z")
_TYPES = ("event", "spec", "outcome", "property", "view", "collection", "annotation", "opm-xml")


def random_storage_ops(seed: int, count: int) -> list[tuple]:
    """A reproducible mix of put/get/list/list_items/reopen operations."""
    rng = random.Random(seed)
    ops: list[tuple] = []
    for _ in range(count):
        item = rng.choice(_ITEMS)
        kind = rng.choice(list(ClusterKind))
        sub = tuple(rng.choice(_SEGMENTS) for _ in range(rng.choice((1, 1, 2))))
        roll = rng.random()
        if roll < 0.45:
            payload = bytes(rng.randrange(256) for _ in range(rng.randint(1, 24)))
            ops.append(("put", StoragePath(item, kind, sub), payload, rng.choice(_TYPES)))
        elif roll < 0.70:
            ops.append(("get", StoragePath(item, kind, sub)))
        elif roll < 0.92:
            ops.append(("list", item, kind, sub[: rng.randint(0, 1)]))
        elif roll < 0.97:
            ops.append(("list_items",))
        else:
            ops.append(("reopen",))
    return ops


def apply_storage_op(backend: StorageBackend, op: tuple) -> object:
    """Run one op and return a comparable result (errors become their class name)."""
    try:
        if op[0] == "put":
            backend.put(StorageRecord(op[1], op[2], op[3]))
            return None
        if op[0] == "get":
            rec = backend.get(op[1])
            return (str(rec.path), rec.payload, rec.content_type)
        if op[0] == "list":
            return [str(p) for p in backend.list(op[1], op[2], op[3])]
        if op[0] == "list_items":
            return backend.list_items()
    except ProvenanceError as exc:
        return exc.kind
    raise ValueError(f"unknown op {op[0]}")

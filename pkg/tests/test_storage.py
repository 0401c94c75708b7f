from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import apply_storage_op, random_storage_ops
from provkernel.errors import BackendUnavailable, BadConfig, BadPath, ImmutableOverwrite, NotFound
from provkernel.storage import (
    BackendConfig,
    ClusterKind,
    FileBackend,
    MemoryBackend,
    StoragePath,
    StorageRecord,
    close,
    copy_records,
    open_backend,
    parse_key_values,
    seg,
    store_digest,
)

ITEM = "00000000-0000-0000-0000-000000000001"


@pytest.fixture(params=["memory", "file"])
def backend(request, tmp_path):
    b = MemoryBackend() if request.param == "memory" else FileBackend(tmp_path / "root")
    yield b
    b.close()


def rec(kind: ClusterKind, *sub: str, payload: bytes = b"x", ctype: str = "view") -> StorageRecord:
    return StorageRecord(StoragePath(ITEM, kind, sub), payload, ctype)


def test_exactly_six_cluster_kinds():
    assert [k.value for k in ClusterKind] == ["Property", "Event", "View", "Outcome", "Workflow", "Collection"]


def test_path_rendering_and_parse():
    path = StoragePath(ITEM, ClusterKind.WORKFLOW, (seg(1),))
    assert str(path) == f"{ITEM}/Workflow/000000000001"
    assert StoragePath.parse(str(path)) == path


@pytest.mark.parametrize("bad", ["", "a/b", "..", ".", "sp ace", "x.meta", "ü"])
def test_bad_segments_rejected(bad):
    with pytest.raises(BadPath):
        StoragePath(ITEM, ClusterKind.VIEW, (bad,))


def test_record_requires_payload_and_known_type():
    with pytest.raises(ValueError):
        rec(ClusterKind.VIEW, "a", payload=b"")
    with pytest.raises(ValueError):
        rec(ClusterKind.VIEW, "a", ctype="blob")


def test_put_get_round_trip_with_zero_bytes(backend):
    payload = bytes(range(256)) + b"\x00\x00"
    backend.put(rec(ClusterKind.WORKFLOW, seg(1), payload=payload, ctype="spec"))
    got = backend.get(StoragePath(ITEM, ClusterKind.WORKFLOW, (seg(1),)))
    assert got.payload == payload and got.content_type == "spec"


def test_events_are_write_once_other_kinds_overwrite(backend):
    backend.put(rec(ClusterKind.EVENT, seg(0), ctype="event"))
    with pytest.raises(ImmutableOverwrite):
        backend.put(rec(ClusterKind.EVENT, seg(0), payload=b"y", ctype="event"))
    assert backend.get(StoragePath(ITEM, ClusterKind.EVENT, (seg(0),))).payload == b"x"
    backend.put(rec(ClusterKind.VIEW, "v"))
    backend.put(rec(ClusterKind.VIEW, "v", payload=b"new"))
    assert backend.get(StoragePath(ITEM, ClusterKind.VIEW, ("v",))).payload == b"new"


def test_missing_path(backend):
    with pytest.raises(NotFound):
        backend.get(StoragePath(ITEM, ClusterKind.VIEW, ("nope",)))
    assert backend.list(ITEM, ClusterKind.EVENT) == []
    assert backend.list_items() == []


def test_list_orders_numeric_segments(backend):
    for n in (9, 0, 3, 10, 1, 2, 8, 4, 7, 6, 5):
        backend.put(rec(ClusterKind.EVENT, seg(n), ctype="event"))
    backend.put(rec(ClusterKind.VIEW, seg(0)))
    listed = backend.list(ITEM, ClusterKind.EVENT)
    assert [p.subpath[0] for p in listed] == [seg(n) for n in range(11)]
    assert all(p.kind is ClusterKind.EVENT for p in listed)


def test_list_prefix(backend):
    backend.put(rec(ClusterKind.OUTCOME, seg(1), "A", ctype="outcome"))
    backend.put(rec(ClusterKind.OUTCOME, seg(1), "B", ctype="outcome"))
    backend.put(rec(ClusterKind.OUTCOME, seg(2), "A", ctype="outcome"))
    assert [str(p) for p in backend.list(ITEM, ClusterKind.OUTCOME, (seg(1),))] == [
        f"{ITEM}/Outcome/{seg(1)}/A",
        f"{ITEM}/Outcome/{seg(1)}/B",
    ]


def test_prefix_leaf_conflicts(backend):
    backend.put(rec(ClusterKind.VIEW, "a"))
    with pytest.raises(BadPath):
        backend.put(rec(ClusterKind.VIEW, "a", "b"))
    backend.put(rec(ClusterKind.VIEW, "c", "d"))
    with pytest.raises(BadPath):
        backend.put(rec(ClusterKind.VIEW, "c"))


def test_reference_map_oracle(backend):
    reference: dict[str, bytes] = {}
    for i in range(1000):
        r = rec(ClusterKind.EVENT, seg(i), payload=str(i).encode(), ctype="event")
        backend.put(r)
        reference[str(r.path)] = r.payload
    listed = backend.list(ITEM, ClusterKind.EVENT)
    assert [str(p) for p in listed] == sorted(reference)
    assert all(backend.get(p).payload == reference[str(p)] for p in listed[::97])


def test_closed_backend_is_unavailable(backend):
    backend.close()
    with pytest.raises(BackendUnavailable):
        backend.list_items()


def test_file_durability_and_shared_root(tmp_path):
    a = FileBackend(tmp_path)
    a.put(rec(ClusterKind.PROPERTY, "item", payload=b"{}", ctype="property"))
    b = FileBackend(tmp_path)
    assert b.get(StoragePath(ITEM, ClusterKind.PROPERTY, ("item",))).payload == b"{}"
    a.close()
    reopened = FileBackend(tmp_path)
    assert reopened.list_items() == [ITEM]
    assert (tmp_path / ITEM / "Property" / "item.meta").read_text() == "property"


def test_unwritable_root(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_bytes(b"not a directory")
    with pytest.raises(BackendUnavailable):
        FileBackend(blocker / "root")


def test_config_parsing(tmp_path):
    assert parse_key_values("# c\nbackend = file\nroot=/x\n\n") == {"backend": "file", "root": "/x"}
    with pytest.raises(BadConfig):
        parse_key_values("backend file")
    with pytest.raises(BadConfig):
        BackendConfig.from_mapping({"backend": "ldap"})
    with pytest.raises(BadConfig):
        BackendConfig.from_mapping({"backend": "file"})
    cfg = tmp_path / "storage.conf"
    cfg.write_text(f"backend=file\nroot={tmp_path / 'data'}\n")
    handle = open_backend(BackendConfig.from_file(cfg))
    assert isinstance(handle, FileBackend)
    close(handle)
    assert isinstance(open_backend(BackendConfig()), MemoryBackend)


def test_copy_and_digest(tmp_path):
    src = MemoryBackend()
    for i in range(5):
        src.put(rec(ClusterKind.EVENT, seg(i), payload=bytes([i + 1]), ctype="event"))
    src.put(rec(ClusterKind.VIEW, "derivations", seg(2), payload=b"[]"))
    dst = FileBackend(tmp_path)
    assert copy_records(src, dst) == 6
    assert store_digest(src) == store_digest(dst)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_backends_agree_on_random_workloads(tmp_path_factory, seed):
    root = tmp_path_factory.mktemp("eq")
    mem, fs = MemoryBackend(), FileBackend(root)
    for op in random_storage_ops(seed, 150):
        if op[0] == "reopen":
            fs.close()
            fs = FileBackend(root)
            continue
        assert apply_storage_op(mem, op) == apply_storage_op(fs, op), op
    fs.close()

from __future__ import annotations

import json
import threading
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import diamond_spec, head_input, make_store
from provkernel.capture import ConcurrentModification, ProvenanceStore, fold_events, outcome_path
from provkernel.engine import execute
from provkernel.errors import (
    AlreadyFinished,
    IllegalTransition,
    InvalidAnnotation,
    InvalidSpec,
    MissingOutcome,
    OutcomeMismatch,
    StatusMismatch,
    UnknownExecution,
    UnknownItem,
    UnknownNode,
    UnknownVersion,
)
from provkernel.model import (
    TRANSITIONS,
    ActivityDescription,
    ActivityState,
    AgentDescription,
    DataRef,
    Descriptions,
    ErrorRecord,
    Event,
    EventKind,
    ExecutionStatus,
    Outcome,
    simple_spec,
    spec_fingerprint,
)
from provkernel.storage import ClusterKind, MemoryBackend, StoragePath
from provkernel.testharness import MockExecutor, fail_at

S = ActivityState


def ok_outcome(node: str) -> Outcome:
    return Outcome(node, (DataRef.from_payload(f"{node}.out", node.encode(), inline=False),), "ok")


def test_register_writes_version_one_and_seq_zero(store, diamond):
    item_id = store.register_item(diamond)
    item = store.get_item(item_id)
    assert item.spec_versions == [1]
    assert item.events == [0]
    [ev] = store.events(item_id)
    assert ev.seq == 0 and ev.kind is EventKind.SPEC_RECORDED
    assert store.spec(item_id, 1).version == 1
    assert spec_fingerprint(store.spec(item_id, 1)) == spec_fingerprint(diamond)


def test_item_ids_are_unique_uuids(diamond):
    real = ProvenanceStore(MemoryBackend())
    a, b = real.register_item(diamond), real.register_item(diamond)
    assert a != b
    assert len(a) == 36 and a.count("-") == 4


def test_register_rejects_invalid(store):
    bad = simple_spec("bad", [("A", "B"), ("B", "A"), ("H", "A")], head="H")
    with pytest.raises(InvalidSpec):
        store.register_item(bad)
    with pytest.raises(InvalidSpec):
        store.register_item(diamond_spec(), Descriptions(activities=(ActivityDescription("Z"),)))


def test_spec_versions(store, diamond):
    item_id = store.register_item(diamond)
    assert store.record_spec_version(item_id, diamond, 1) == 2
    assert store.spec(item_id, 2).derived_from == ("diamond", 1)
    assert spec_fingerprint(store.spec(item_id, 2)) == spec_fingerprint(store.spec(item_id, 1))
    with pytest.raises(UnknownVersion):
        store.record_spec_version(item_id, diamond, 7)
    with pytest.raises(UnknownItem):
        store.record_spec_version("00000000-0000-0000-0000-00000000ffff", diamond, 1)
    with pytest.raises(UnknownVersion):
        store.spec(item_id, 3)


def test_begin_execution_initialises_every_node(store, diamond):
    item_id = store.register_item(diamond)
    exec_id = store.begin_execution(item_id, 1, AgentDescription("alice", "ws1"))
    assert exec_id.run_seq == 1
    # SpecRecorded + ExecutionStarted + 4 init transitions
    events = store.backend.list(item_id, ClusterKind.EVENT)
    assert len(events) == 6
    kinds = [e.kind for e in store.events(item_id)]
    assert kinds == [EventKind.SPEC_RECORDED, EventKind.EXECUTION_STARTED] + [EventKind.ACTIVITY_TRANSITION] * 4
    assert store.execution(exec_id).states == {n: S.WAITING for n in "ABCD"}
    with pytest.raises(UnknownVersion):
        store.begin_execution(item_id, 2)


def test_transition_rules(store, diamond):
    item_id = store.register_item(diamond)
    eid = store.begin_execution(item_id, 1)
    with pytest.raises(IllegalTransition) as info:
        store.record_transition(eid, "A", S.COMPLETED, ok_outcome("A"))
    assert "Waiting->Completed" in str(info.value)
    with pytest.raises(IllegalTransition):
        store.record_transition(eid, "B", S.STARTED)  # A not completed yet
    store.record_transition(eid, "A", S.STARTED)
    with pytest.raises(MissingOutcome):
        store.record_transition(eid, "A", S.COMPLETED)
    with pytest.raises(OutcomeMismatch):
        store.record_transition(eid, "A", S.COMPLETED, ok_outcome("B"))
    with pytest.raises(OutcomeMismatch):
        store.record_transition(eid, "A", S.FAILED, ok_outcome("A"))
    store.record_transition(eid, "A", S.COMPLETED, ok_outcome("A"))
    store.record_transition(eid, "B", S.STARTED)
    err = Outcome("B", (), "boom", ErrorRecord("executor-fault", "segfault"))
    store.record_transition(eid, "B", S.FAILED, err)
    assert store.outcome(eid, "B").error == ErrorRecord("executor-fault", "segfault")
    with pytest.raises(UnknownNode):
        store.record_transition(eid, "Z", S.STARTED)
    with pytest.raises(UnknownExecution):
        store.record_transition(replace(eid, run_seq=9), "A", S.STARTED)
    persisted = store.backend.get(outcome_path(eid, "B"))
    assert json.loads(persisted.payload)["error"]["code"] == "executor-fault"


def test_end_execution_rules(store, diamond):
    item_id = store.register_item(diamond)
    eid = store.begin_execution(item_id, 1)
    with pytest.raises(StatusMismatch):
        store.end_execution(eid, ExecutionStatus.SUCCEEDED)
    store.end_execution(eid, ExecutionStatus.ABORTED)
    with pytest.raises(AlreadyFinished):
        store.end_execution(eid, ExecutionStatus.ABORTED)
    with pytest.raises(AlreadyFinished):
        store.record_transition(eid, "A", S.STARTED)


def test_annotations(store, diamond):
    item_id = store.register_item(diamond)
    first = store.annotate(item_id, "results look off; users are warned", author="bo", node="C")
    second = store.annotate(item_id, "second note", version=1)
    assert (first.node, first.author, first.seq) == ("C", "bo", 1)
    assert [a.text for a in store.state(item_id).annotations] == [first.text, second.text]
    with pytest.raises(UnknownNode):
        store.annotate(item_id, "x", node="Q")
    with pytest.raises(UnknownVersion):
        store.annotate(item_id, "x", version=5)
    with pytest.raises(InvalidAnnotation):
        store.annotate(item_id, "   ")
    with pytest.raises(UnknownItem):
        store.annotate("00000000-0000-0000-0000-00000000ffff", "x")


def _comparable(state):
    return (
        state.last_seq,
        {v: (i.seq, i.ref) for v, i in state.versions.items()},
        {
            k: (ex.version, ex.status, dict(ex.states), ex.started_order, dict(ex.outcome_refs), ex.failures)
            for k, ex in state.executions.items()
        },
        state.annotations,
    )


def test_state_is_a_fold_over_stored_events(store, diamond, bindings):
    item_id = store.register_item(diamond)
    execute(store, item_id, 1, MockExecutor(), bindings)
    execute(store, item_id, 1, MockExecutor(fail_at("C")), bindings)
    store.annotate(item_id, "note", node="C")
    raw = [json.loads(store.backend.get(p).payload) for p in store.backend.list(item_id, ClusterKind.EVENT)]
    rebuilt = fold_events(item_id, [Event.from_dict(d) for d in raw])
    assert _comparable(rebuilt) == _comparable(store.state(item_id))
    fresh = ProvenanceStore(store.backend)
    assert _comparable(fresh.state(item_id)) == _comparable(store.state(item_id))


def test_sequence_numbers_are_dense_under_threads(store, diamond):
    item_id = store.register_item(diamond)

    def writer(n: int) -> None:
        for i in range(10):
            store.annotate(item_id, f"t{n}-{i}")

    threads = [threading.Thread(target=writer, args=(n,)) for n in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert [e.seq for e in store.events(item_id)] == list(range(81))


def test_second_writer_detected(diamond):
    backend = MemoryBackend()
    a = make_store(backend)
    item_id = a.register_item(diamond)
    b = ProvenanceStore(backend)
    b.annotate(item_id, "from b")
    # a's cached state has not seen b's event, so its next seq is already taken
    with pytest.raises(ConcurrentModification):
        a._append(a._states[item_id], EventKind.ANNOTATION_ADDED, detail={"text": "stale", "author": ""})


def test_transition_sequences_follow_table(store, diamond, bindings):
    item_id = store.register_item(diamond)
    execute(store, item_id, 1, MockExecutor(fail_at("B")), bindings)
    for ev in store.events(item_id):
        if ev.kind is EventKind.ACTIVITY_TRANSITION:
            src, dst = ev.transition
            assert dst in TRANSITIONS[src]


@settings(max_examples=25, deadline=None)
@given(st.lists(st.sampled_from(["annotate", "version", "run", "fail"]), max_size=12))
def test_fold_matches_live_state_for_any_history(ops):
    store = make_store()
    spec = diamond_spec()
    item_id = store.register_item(spec)
    for op in ops:
        if op == "annotate":
            store.annotate(item_id, "n")
        elif op == "version":
            store.record_spec_version(item_id, spec, 1)
        elif op == "run":
            execute(store, item_id, 1, MockExecutor(), head_input())
        else:
            execute(store, item_id, 1, MockExecutor(fail_at("A")), head_input())
    fresh = ProvenanceStore(store.backend)
    assert _comparable(fresh.state(item_id)) == _comparable(store.state(item_id))
    assert [e.seq for e in fresh.events(item_id)] == list(range(len(fresh.events(item_id))))


def test_views_round_trip(store, diamond):
    item_id = store.register_item(diamond)
    path = store.put_view(item_id, ("notes", "x"), b"hello")
    assert str(path) == f"{item_id}/View/notes/x"
    assert store.get_view(item_id, ("notes", "x")) == b"hello"
    assert store.backend.get(StoragePath(item_id, ClusterKind.VIEW, ("notes", "x"))).content_type == "view"

from __future__ import annotations

from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import diamond_spec, make_store
from provkernel.engine import execute, start_execution
from provkernel.errors import ExecutionOpen, InvalidSpec
from provkernel.model import EventKind, expand, spec_fingerprint
from provkernel.reconstruct import add_edge, apply_edits, remove_edge, set_metadata, set_process_ref
from provkernel.storage import store_digest
from provkernel.testharness import MockExecutor, drift, fail_at, gen_dag
from provkernel.validate import (
    FindingKind,
    Mode,
    ReferenceDataset,
    Verdict,
    validate_blueprint,
    validate_offline,
    validate_online,
)


def _kinds(report):
    return [(f.kind, f.location) for f in report.findings]


# -- blueprint ------------------------------------------------------------------


def test_blueprint_reflexive(diamond):
    report = validate_blueprint(diamond, diamond)
    assert report.verdict is Verdict.PASS
    assert report.findings == ()
    assert report.mode is Mode.BLUEPRINT


def test_blueprint_process_ref_change(diamond):
    changed = apply_edits(diamond, [set_process_ref("C", "tool-c-v2")])
    report = validate_blueprint(changed, diamond)
    assert _kinds(report) == [(FindingKind.MISMATCH, "node:C/process_ref")]
    assert report.verdict is Verdict.FAIL
    assert report.failing_nodes() == {"C"}


def test_blueprint_extra_edge_and_metadata(diamond):
    changed = apply_edits(diamond, [add_edge("B", "C")])
    assert _kinds(validate_blueprint(changed, diamond)) == [(FindingKind.EXTRA, "edge:B->C")]
    assert _kinds(validate_blueprint(diamond, changed)) == [(FindingKind.MISSING, "edge:B->C")]
    meta = apply_edits(diamond, [set_metadata("B", {"k": "v"})])
    assert _kinds(validate_blueprint(meta, diamond)) == [(FindingKind.EXTRA, "node:B/metadata/k")]
    assert validate_blueprint(meta, diamond).verdict is Verdict.FAIL


def test_blueprint_rejects_invalid_input(diamond):
    broken = replace(diamond, head="Q")
    with pytest.raises(InvalidSpec):
        validate_blueprint(broken, diamond)


_EDIT = st.sampled_from(
    [
        None,
        set_metadata("B", {"k": "1"}),
        set_metadata("D", {"k": "2"}),
        set_process_ref("C", "other"),
        add_edge("B", "C"),
        remove_edge("A", "B"),
    ]
)


@settings(max_examples=60, deadline=None)
@given(st.lists(_EDIT, max_size=3), st.lists(_EDIT, max_size=3))
def test_blueprint_pass_iff_fingerprints_agree(left, right):
    base = diamond_spec()
    try:
        a = apply_edits(base, [e for e in left if e is not None])
        b = apply_edits(base, [e for e in right if e is not None])
        report = validate_blueprint(a, b)
    except InvalidSpec:
        return
    same = spec_fingerprint(expand(a)) == spec_fingerprint(expand(b))
    assert (report.verdict is Verdict.PASS) == same


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 8))
def test_blueprint_reflexive_on_generated(seed, n):
    spec = gen_dag(seed, n)
    assert validate_blueprint(spec, spec).verdict is Verdict.PASS


# -- offline -------------------------------------------------------------------


def _reference(store, diamond, bindings):
    item_id = store.register_item(diamond)
    good = execute(store, item_id, 1, MockExecutor(), bindings)
    return item_id, good, ReferenceDataset.from_execution(store, good, "golden")


def test_offline_against_own_reference(store, diamond, bindings):
    _, good, ref = _reference(store, diamond, bindings)
    report = validate_offline(store, good, ref)
    assert report.verdict is Verdict.PASS
    assert {f.kind for f in report.findings} == {FindingKind.MATCH}
    assert len(report.findings) == 4


def test_offline_tampered_hash(store, diamond, bindings):
    _, good, ref = _reference(store, diamond, bindings)
    expected = dict(ref.expected)
    expected["C"] = (("C.out", "0" * 64),)
    report = validate_offline(store, good, ReferenceDataset("tampered", expected))
    assert [f.location for f in report.failing()] == ["C/C.out"]
    assert report.failing()[0].kind is FindingKind.MISMATCH


def test_offline_unknown_node_and_param(store, diamond, bindings):
    _, good, ref = _reference(store, diamond, bindings)
    expected = {**ref.expected, "Z": (("Z.out", "f" * 64),), "B": (("B.other", "e" * 64),)}
    report = validate_offline(store, good, ReferenceDataset("extra", expected))
    missing = {f.location for f in report.findings if f.kind is FindingKind.MISSING}
    assert missing == {"Z/Z.out", "B/B.other"}
    assert [f.location for f in report.findings if f.kind is FindingKind.EXTRA] == ["B/B.out"]
    assert report.verdict is Verdict.FAIL


def test_offline_extra_alone_passes(store, diamond, bindings):
    _, good, ref = _reference(store, diamond, bindings)
    expected = {**ref.expected, "A": ()}
    report = validate_offline(store, good, ReferenceDataset("partial", expected))
    assert report.verdict is Verdict.PASS
    assert [f.kind for f in report.findings if f.node == "A"] == [FindingKind.EXTRA]


def test_offline_is_read_only(store, diamond, bindings):
    _, good, ref = _reference(store, diamond, bindings)
    before = store_digest(store.backend)
    validate_offline(store, good, ref)
    assert store_digest(store.backend) == before


def test_offline_refuses_open_execution(store, diamond, bindings):
    item_id, _, ref = _reference(store, diamond, bindings)
    run = start_execution(store, item_id, 1, MockExecutor(), provided={"A": bindings})
    with pytest.raises(ExecutionOpen):
        validate_offline(store, run.execution_id, ref)


def test_reference_json_round_trip(store, diamond, bindings):
    _, _, ref = _reference(store, diamond, bindings)
    assert ReferenceDataset.from_json(ref.to_json()) == ref
    with pytest.raises(InvalidSpec):
        ReferenceDataset.from_json(b'{"name": "x", "expected": {"A": [{"param": 1}]}}')


# -- online --------------------------------------------------------------------


def test_online_drift_flags_node_and_descendants(store, diamond, bindings):
    item_id, _, ref = _reference(store, diamond, bindings)
    exec_id, report = validate_online(store, item_id, 1, MockExecutor(drift("C", "v2")), ref)
    assert report.mode is Mode.ONLINE
    assert report.failing_nodes() == {"C", "D"}
    assert report.verdict is Verdict.FAIL
    events = store.events(item_id)
    assert events[-1].kind is EventKind.VALIDATION_RUN
    offline = validate_offline(store, exec_id, ref)
    assert offline.findings == report.findings
    assert offline.verdict is report.verdict


def test_online_failure_is_missing_downstream(store, diamond, bindings):
    item_id, _, ref = _reference(store, diamond, bindings)
    _, report = validate_online(store, item_id, 1, MockExecutor(fail_at("B")), ref)
    missing = {f.node for f in report.findings if f.kind is FindingKind.MISSING}
    assert missing == {"B", "D"}
    assert {f.node for f in report.findings if f.kind is FindingKind.MATCH} == {"A", "C"}


def test_online_clean_rerun_passes(store, diamond, bindings):
    item_id, _, ref = _reference(store, diamond, bindings)
    _, report = validate_online(store, item_id, 1, MockExecutor(), ref, bindings={"A": bindings})
    assert report.verdict is Verdict.PASS


def test_validation_does_not_leak_between_stores(diamond, bindings):
    a, b = make_store(), make_store()
    _, good, ref = _reference(a, diamond, bindings)
    _, other, _ = _reference(b, diamond, bindings)
    assert validate_offline(b, other, ref).verdict is Verdict.PASS

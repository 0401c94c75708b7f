from __future__ import annotations

from dataclasses import replace
from datetime import datetime, timezone

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from provkernel.errors import CompositeCycle, InvalidSpec
from provkernel.model import (
    TRANSITIONS,
    ActivityState,
    DataRef,
    Event,
    EventKind,
    ExecutionId,
    NodeKind,
    WorkflowNode,
    WorkflowSpec,
    canonical_json,
    digest,
    expand,
    format_ts,
    parse_ts,
    simple_spec,
    spec_fingerprint,
    transition_allowed,
    validate_spec,
)
from provkernel.testharness import gen_dag

S = ActivityState


def single(nid: str, **kw) -> WorkflowNode:
    return WorkflowNode(nid, NodeKind.SINGLE, f"proc-{nid}", **kw)


def composite(nid: str, children: tuple[str, ...]) -> WorkflowNode:
    return WorkflowNode(nid, NodeKind.COMPOSITE, "", children)


# -- digests and canonical form ---------------------------------------------------


def test_digest_is_sha256_hex():
    # well-known SHA-256 test vector
    assert digest(b"hello") == "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824"


def test_canonical_json_sorts_keys_and_is_compact():
    assert canonical_json({"b": 1, "a": [1, {"d": 2, "c": "é"}]}) == '{"a":[1,{"c":"é","d":2}],"b":1}'.encode()


def test_timestamps_are_millisecond_utc():
    ts = datetime(2024, 5, 6, 7, 8, 9, 123456, tzinfo=timezone.utc)
    assert format_ts(ts) == "2024-05-06T07:08:09.123Z"
    assert parse_ts("2024-05-06T07:08:09.123Z") == ts.replace(microsecond=123000)


# -- validate_spec ---------------------------------------------------------------


def test_diamond_is_valid(diamond):
    assert validate_spec(diamond).ok


def test_two_cycle_is_named():
    spec = WorkflowSpec("s", "s", "H", (single("H"), single("A"), single("B")), (("H", "A"), ("A", "B"), ("B", "A")))
    messages = [v.message for v in validate_spec(spec).violations]
    assert "cycle through A,B" in messages


def test_head_with_predecessor():
    # X->H with H declared head: H has in-degree 1, X is unreachable from H
    spec = WorkflowSpec("s", "s", "H", (single("H"), single("X"), single("Y")), (("X", "H"), ("H", "Y")))
    outcome = validate_spec(spec)
    assert outcome.codes() == {"head-has-predecessor", "unreachable"}
    assert any(v.message.startswith("head has predecessor") for v in outcome.violations)


@pytest.mark.parametrize(
    ("nodes", "edges", "head", "code"),
    [
        ((single("A"), single("A")), (), "A", "duplicate-node"),
        ((single("a b"),), (), "a b", "bad-node-id"),
        ((WorkflowNode("A", NodeKind.SINGLE, ""),), (), "A", "missing-process"),
        ((WorkflowNode("A", NodeKind.SINGLE, "p", ("B",)), single("B")), (), "A", "single-with-children"),
        ((single("A"), composite("C", ())), (("A", "C"),), "A", "empty-composite"),
        ((single("A"), composite("C", ("Z",))), (("A", "C"),), "A", "unknown-child"),
        ((single("A"), composite("C", ("C",))), (("A", "C"),), "A", "self-child"),
        ((single("A"), single("B"), composite("C", ("B",)), composite("D", ("B",))), (), "A", "shared-child"),
        ((single("A", declared_inputs=("x", "x")),), (), "A", "duplicate-param"),
        ((single("A"),), (("A", "Q"),), "A", "dangling-edge"),
        ((single("A"),), (("A", "A"),), "A", "self-edge"),
        ((single("A"), single("B"), composite("C", ("B",))), (("A", "C"), ("C", "B")), "A", "member-edge"),
        ((single("A"),), (), "Q", "head-missing"),
        ((single("A"), single("B")), (), "A", "unreachable"),
    ],
)
def test_structural_violations(nodes, edges, head, code):
    assert code in validate_spec(WorkflowSpec("s", "s", head, nodes, edges)).codes()


def test_composite_nesting_cycle_is_reported():
    spec = WorkflowSpec(
        "s", "s", "A", (single("A"), composite("X", ("Y",)), composite("Y", ("X",))), (("A", "X"),)
    )
    assert validate_spec(spec).codes() == {"composite-cycle"}
    with pytest.raises(CompositeCycle):
        expand(spec)


# -- expand ------------------------------------------------------------------------


def test_expand_without_composites_is_identity(diamond):
    assert expand(diamond) is diamond


def test_expand_attaches_boundary_edges():
    # C = {c1 -> c2}; A -> C -> B  becomes  A -> c1 -> c2 -> B
    spec = WorkflowSpec(
        "s",
        "s",
        "A",
        (single("A"), single("B"), composite("C", ("c1", "c2")), single("c1"), single("c2")),
        (("A", "C"), ("C", "B"), ("c1", "c2")),
    )
    flat = expand(spec)
    assert flat.node_ids == ["A", "B", "c1", "c2"]
    assert flat.edges == (("A", "c1"), ("c1", "c2"), ("c2", "B"))


def test_expand_nested_is_flat_and_idempotent():
    # outer = {inner, z}; inner = {x -> y}; inner -> z inside outer; H -> outer -> T
    spec = WorkflowSpec(
        "s",
        "s",
        "H",
        (
            single("H"),
            single("T"),
            composite("outer", ("inner", "z")),
            composite("inner", ("x", "y")),
            single("x"),
            single("y"),
            single("z"),
        ),
        (("H", "outer"), ("outer", "T"), ("inner", "z"), ("x", "y")),
    )
    assert validate_spec(spec).ok
    flat = expand(spec)
    assert all(n.kind is NodeKind.SINGLE for n in flat.nodes)
    assert set(flat.edges) == {("H", "x"), ("x", "y"), ("y", "z"), ("z", "T")}
    assert expand(flat) == flat


def test_composite_head_becomes_entry_member():
    spec = WorkflowSpec(
        "s", "s", "C", (composite("C", ("a", "b")), single("a"), single("b"), single("D")), (("a", "b"), ("C", "D"))
    )
    flat = expand(spec)
    assert flat.head == "a"
    assert set(flat.edges) == {("a", "b"), ("b", "D")}


def test_expansion_cycle_raises():
    # composite members both entries and exits; cycle only appears after rewiring
    spec = WorkflowSpec(
        "s",
        "s",
        "A",
        (single("A"), composite("C", ("x",)), single("x"), single("B")),
        (("A", "C"), ("C", "B"), ("B", "x")),
    )
    with pytest.raises(CompositeCycle):
        expand(spec)
    assert "cycle" in validate_spec(spec).codes()


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 8))
def test_generated_specs_expand_idempotently(seed, n):
    spec = gen_dag(seed, n)
    assert validate_spec(spec).ok
    assert expand(expand(spec)) == expand(spec)


# -- fingerprint --------------------------------------------------------------------


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 8), st.randoms(use_true_random=False))
def test_fingerprint_ignores_storage_order(seed, n, rnd):
    spec = gen_dag(seed, n)
    nodes = list(spec.nodes)
    edges = list(spec.edges)
    rnd.shuffle(nodes)
    rnd.shuffle(edges)
    shuffled_nodes = []
    for node in nodes:
        items = list(node.metadata.items())
        rnd.shuffle(items)
        shuffled_nodes.append(replace(node, metadata=dict(items)))
    shuffled = WorkflowSpec(spec.spec_id, spec.name, spec.head, tuple(shuffled_nodes), tuple(edges))
    assert spec_fingerprint(shuffled) == spec_fingerprint(spec)


def test_fingerprint_sensitivity(diamond):
    bumped = replace(diamond, version=7, derived_from=("diamond", 3))
    assert spec_fingerprint(bumped) == spec_fingerprint(diamond)
    nodes = [replace(n, metadata={"threshold": "0.2"}) if n.id == "C" else n for n in diamond.nodes]
    assert spec_fingerprint(replace(diamond, nodes=tuple(nodes))) != spec_fingerprint(diamond)


# -- wire forms ---------------------------------------------------------------------


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 8))
def test_spec_json_round_trip(seed, n):
    spec = replace(gen_dag(seed, n), version=2, derived_from=("x", 1))
    back = WorkflowSpec.from_json(spec.canonical_bytes())
    assert back == spec
    assert back.canonical_bytes() == spec.canonical_bytes()


@pytest.mark.parametrize("payload", [b"not json", b"[]", b'{"nodes": []}', b'{"head": "A", "nodes": [{"x": 1}]}'])
def test_malformed_spec_documents(payload):
    with pytest.raises(InvalidSpec) as info:
        WorkflowSpec.from_json(payload)
    assert info.value.violations[0].code == "malformed"


def test_dataref_checks_hash_and_payload():
    ref = DataRef.from_payload("x", b"abc")
    assert ref.content_hash == digest(b"abc")
    assert DataRef.from_dict(ref.to_dict()) == ref
    with pytest.raises(ValueError):
        DataRef("x", "ABC")
    with pytest.raises(ValueError):
        DataRef("x", digest(b"abc"), None, b"abd")


def test_execution_id_round_trip():
    eid = ExecutionId("00000000-0000-0000-0000-000000000001", 3)
    assert str(eid) == "00000000-0000-0000-0000-000000000001:3"
    assert ExecutionId.parse(str(eid)) == eid
    for bad in ("nope", "x:0", ":1", "x:-1"):
        with pytest.raises(ValueError):
            ExecutionId.parse(bad)


def test_event_round_trip():
    ev = Event(
        "i",
        4,
        datetime(2024, 1, 1, tzinfo=timezone.utc),
        EventKind.ACTIVITY_TRANSITION,
        ExecutionId("i", 1),
        "B",
        (S.STARTED, S.COMPLETED),
        "i/Outcome/000000000001/B",
        {"note": "x"},
    )
    assert Event.from_dict(ev.to_dict()) == ev
    init = replace(ev, transition=(None, S.WAITING), outcome_ref=None)
    assert Event.from_dict(init.to_dict()) == init


# -- activity states ------------------------------------------------------------------

EXPECTED_TRANSITIONS = {
    None: {S.WAITING},
    S.WAITING: {S.STARTED},
    S.STARTED: {S.COMPLETED, S.FAILED, S.SUSPENDED, S.INTERRUPTED},
    S.SUSPENDED: {S.STARTED},
    S.INTERRUPTED: {S.STARTED, S.FAILED},
    S.COMPLETED: set(),
    S.FAILED: set(),
}


def test_transition_table_is_exact():
    for src in [None, *S]:
        for dst in S:
            assert transition_allowed(src, dst) == (dst in EXPECTED_TRANSITIONS[src]), (src, dst)
    assert {k: set(v) for k, v in TRANSITIONS.items()} == EXPECTED_TRANSITIONS


def test_simple_spec_wiring():
    spec = simple_spec("d", [("A", "B"), ("A", "C"), ("B", "D"), ("C", "D")])
    assert spec.node("A").declared_inputs == ("input",)
    assert spec.node("D").declared_inputs == ("B.out", "C.out")
    assert spec.node("D").declared_outputs == ("D.out",)

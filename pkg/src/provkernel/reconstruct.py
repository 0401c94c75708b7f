"""Rebuild, re-execute and derive past workflow versions."""

from __future__ import annotations

import enum
import json
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field, replace
from typing import Any

from .capture import ExecutionState, ProvenanceStore
from .engine import Executor, plan, start_execution
from .errors import InvalidSpec, NotFound, UnknownExecution, UnknownNode, UnknownVersion, UnresolvableInputs
from .model import (
    ActivityState,
    DataRef,
    Event,
    ExecutionId,
    ExecutionStatus,
    NodeKind,
    Violation,
    WorkflowNode,
    WorkflowSpec,
    canonical_json,
)
from .storage import seg

DERIVATIONS = "derivations"


def reconstruct(store: ProvenanceStore, item_id: str, version: int) -> tuple[WorkflowSpec, list[Event]]:
    """The workflow of ``version`` plus the version and annotation events that led to it."""
    spec = store.spec(item_id, version)
    state = store.state(item_id)
    nxt = state.versions.get(int(version) + 1)
    cutoff = nxt.seq if nxt is not None else state.last_seq + 1
    return spec, [ev for ev in state.spec_trace if ev.seq < cutoff]


# ---------------------------------------------------------------------------
# Replay
# ---------------------------------------------------------------------------

NodeBindings = Mapping[str, Mapping[str, DataRef]]


def latest_succeeded(store: ProvenanceStore, item_id: str, version: int) -> ExecutionState | None:
    """Latest succeeded execution of ``version`` that covered every node."""
    state = store.state(item_id)
    for run_seq in sorted(state.executions, reverse=True):
        ex = state.executions[run_seq]
        if ex.version == int(version) and ex.status is ExecutionStatus.SUCCEEDED and ex.scope is None:
            return ex
    return None


def _source_outputs(store: ProvenanceStore, source: ExecutionState | None, node: str) -> dict[str, DataRef] | None:
    if source is None or source.states.get(node) is not ActivityState.COMPLETED:
        return None
    outcome = store.outcome(source.execution_id, node)
    return None if outcome is None else {d.name: d for d in outcome.outputs}


def plan_replay(
    store: ProvenanceStore,
    item_id: str,
    version: int,
    scope: Iterable[str] | None = None,
    bindings: NodeBindings | None = None,
    source: ExecutionState | None = None,
) -> tuple[list[str], dict[str, dict[str, DataRef]], bool]:
    """Work out (nodes to run, externally provided inputs, whether ``source`` was used).

    Predecessors outside the scope whose outputs the source cannot supply are
    pulled into the scope, repeatedly, so the result is dependency-closed
    enough to run.
    """
    spec = store.expanded_spec(item_id, version)
    order = plan(spec)
    bindings = {n: dict(b) for n, b in (bindings or {}).items()}
    nodes = set(order) if scope is None else set(scope)
    unknown = sorted(nodes - set(order))
    if unknown:
        raise UnknownNode(f"scope references unknown nodes {','.join(unknown)}")
    changed = True
    while changed:
        changed = False
        for n in sorted(nodes):
            for p in spec.predecessors(n):
                if p not in nodes and _source_outputs(store, source, p) is None:
                    nodes.add(p)
                    changed = True
    provided: dict[str, dict[str, DataRef]] = {}
    used_source = False
    for n in [x for x in order if x in nodes]:
        wn = spec.node(n)
        inner = set()
        for p in spec.predecessors(n):
            if p in nodes:
                inner.update(spec.node(p).declared_outputs)
        lacking = []
        for name in wn.declared_inputs:
            if name in inner:
                continue
            if name in bindings.get(n, {}):
                provided.setdefault(n, {})[name] = bindings[n][name]
                continue
            ref = None
            for p in [x for x in order if x in spec.predecessors(n) and x not in nodes]:
                outs = _source_outputs(store, source, p) or {}
                if name in outs:
                    ref = outs[name]
                    break
            if ref is None and source is not None and not spec.predecessors(n):
                ref = next((d for d in source.inputs.get(n, []) if d.name == name), None)
            if ref is None:
                lacking.append(name)
            else:
                provided.setdefault(n, {})[name] = ref
                used_source = True
        if lacking:
            origin = f"execution {source.execution_id}" if source is not None else "no prior execution"
            raise UnresolvableInputs(f"node {n} needs {','.join(lacking)}; not bound and not found in {origin}")
    return [x for x in order if x in nodes], provided, used_source


def replay(
    store: ProvenanceStore,
    item_id: str,
    version: int,
    executor: Executor,
    scope: Iterable[str] | None = None,
    bindings: NodeBindings | None = None,
    source: ExecutionId | str | None = None,
) -> ExecutionId:
    """Re-execute ``version`` (or the part of it named by ``scope``).

    Entry inputs come from ``bindings`` first, then from ``source``, which
    defaults to the latest succeeded full execution of the same version.
    """
    store.spec(item_id, version)
    if source is not None:
        src = store.execution(source)
        if src.execution_id.item_id != item_id:
            raise UnknownExecution(f"execution {source} does not belong to item {item_id}")
    else:
        src = latest_succeeded(store, item_id, version)
    nodes, provided, used_source = plan_replay(store, item_id, version, scope, bindings, src)
    full = len(nodes) == len(store.expanded_spec(item_id, version).nodes)
    run = start_execution(
        store,
        item_id,
        version,
        executor,
        provided=provided,
        scope=None if full and scope is None else nodes,
        replay_of=src.execution_id if used_source and src is not None else None,
    )
    return run.run_to_end()


# ---------------------------------------------------------------------------
# Derivation
# ---------------------------------------------------------------------------


class EditOp(str, enum.Enum):
    ADD_NODE = "AddNode"
    REMOVE_NODE = "RemoveNode"
    ADD_EDGE = "AddEdge"
    REMOVE_EDGE = "RemoveEdge"
    SET_METADATA = "SetMetadata"
    SET_PROCESS_REF = "SetProcessRef"


@dataclass(frozen=True)
class Edit:
    """One spec edit.

    ``target`` is a node id. Edge edits name the other end in
    ``payload["to"]``; AddNode takes a node document as payload;
    SetMetadata merges ``payload`` (a ``None`` value deletes the key);
    SetProcessRef reads ``payload["process_ref"]``.
    """

    op: EditOp
    target: str
    payload: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "op", EditOp(self.op))
        object.__setattr__(self, "payload", dict(self.payload))

    def to_dict(self) -> dict[str, Any]:
        return {"op": self.op.value, "target": self.target, "payload": dict(self.payload)}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Edit:
        try:
            return cls(EditOp(data["op"]), str(data["target"]), dict(data.get("payload") or {}))
        except (KeyError, ValueError, TypeError) as exc:
            raise InvalidSpec([Violation("bad-edit", f"malformed edit: {exc}")]) from None


def add_node(node: WorkflowNode) -> Edit:
    return Edit(EditOp.ADD_NODE, node.id, node.to_dict())


def remove_node(node_id: str) -> Edit:
    return Edit(EditOp.REMOVE_NODE, node_id)


def add_edge(src: str, dst: str) -> Edit:
    return Edit(EditOp.ADD_EDGE, src, {"to": dst})


def remove_edge(src: str, dst: str) -> Edit:
    return Edit(EditOp.REMOVE_EDGE, src, {"to": dst})


def set_metadata(node_id: str, values: Mapping[str, str | None]) -> Edit:
    return Edit(EditOp.SET_METADATA, node_id, dict(values))


def set_process_ref(node_id: str, process_ref: str) -> Edit:
    return Edit(EditOp.SET_PROCESS_REF, node_id, {"process_ref": process_ref})


def edits_to_json(edits: Sequence[Edit]) -> bytes:
    return canonical_json([e.to_dict() for e in edits])


def edits_from_json(data: bytes | str) -> list[Edit]:
    try:
        raw = json.loads(data)
    except ValueError as exc:
        raise InvalidSpec([Violation("bad-edit", f"edit list is not JSON: {exc}")]) from None
    if not isinstance(raw, list):
        raise InvalidSpec([Violation("bad-edit", "edit list must be a JSON array")])
    return [Edit.from_dict(d) for d in raw]


def _bad(message: str, location: str) -> InvalidSpec:
    return InvalidSpec([Violation("bad-edit", message, location)])


def apply_edits(spec: WorkflowSpec, edits: Sequence[Edit]) -> WorkflowSpec:
    """Apply ``edits`` in order. Structural validity is checked by the caller."""
    nodes = {n.id: n for n in spec.nodes}
    edges = set(spec.edges)
    for i, e in enumerate(edits):
        where = f"edit[{i}]"
        if e.op is EditOp.ADD_NODE:
            doc = {"id": e.target, **e.payload}
            if doc["id"] != e.target:
                raise _bad(f"AddNode target {e.target} disagrees with payload id {doc['id']}", where)
            if e.target in nodes:
                raise _bad(f"node {e.target} already exists", where)
            try:
                nodes[e.target] = WorkflowNode.from_dict(doc)
            except (KeyError, ValueError, TypeError) as exc:
                raise _bad(f"bad node document: {exc}", where) from None
            continue
        if e.target not in nodes:
            raise _bad(f"{e.op.value} targets unknown node {e.target}", where)
        if e.op is EditOp.REMOVE_NODE:
            del nodes[e.target]
            edges = {(a, b) for a, b in edges if e.target not in (a, b)}
            for nid, n in list(nodes.items()):
                if e.target in n.children:
                    nodes[nid] = replace(n, children=tuple(c for c in n.children if c != e.target))
        elif e.op in (EditOp.ADD_EDGE, EditOp.REMOVE_EDGE):
            dst = e.payload.get("to")
            if not isinstance(dst, str):
                raise _bad(f"{e.op.value} needs payload.to", where)
            if e.op is EditOp.ADD_EDGE:
                edges.add((e.target, dst))
            elif (e.target, dst) in edges:
                edges.discard((e.target, dst))
            else:
                raise _bad(f"no edge {e.target}->{dst} to remove", where)
        elif e.op is EditOp.SET_METADATA:
            meta = dict(nodes[e.target].metadata)
            for k, v in e.payload.items():
                if v is None:
                    meta.pop(str(k), None)
                else:
                    meta[str(k)] = str(v)
            nodes[e.target] = replace(nodes[e.target], metadata=meta)
        elif e.op is EditOp.SET_PROCESS_REF:
            ref = e.payload.get("process_ref")
            if not isinstance(ref, str) or nodes[e.target].kind is NodeKind.COMPOSITE:
                raise _bad("SetProcessRef needs a string process_ref on a Single node", where)
            nodes[e.target] = replace(nodes[e.target], process_ref=ref)
    return replace(spec, nodes=tuple(nodes.values()), edges=tuple(edges), version=None, derived_from=None)


def derive(store: ProvenanceStore, item_id: str, base_version: int, edits: Sequence[Edit]) -> int:
    """Record a new version built by applying ``edits`` to ``base_version``.

    The edit list is kept as a View record so the derivation can be audited.
    """
    base = store.spec(item_id, base_version)
    derived = apply_edits(base, edits)
    version = store.record_spec_version(item_id, derived, int(base_version))
    doc = {"base_version": int(base_version), "edits": [e.to_dict() for e in edits]}
    store.put_view(item_id, (DERIVATIONS, seg(version)), canonical_json(doc))
    return version


def load_derivation(store: ProvenanceStore, item_id: str, version: int) -> tuple[int, list[Edit]]:
    """Return (base version, edit list) stored for a derived version."""
    store.spec(item_id, version)
    try:
        raw = json.loads(store.get_view(item_id, (DERIVATIONS, seg(version))))
    except NotFound:
        raise UnknownVersion(f"version {version} of {item_id} was not derived by edits") from None
    return int(raw["base_version"]), [Edit.from_dict(d) for d in raw["edits"]]


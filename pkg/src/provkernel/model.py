"""Core domain types: workflow definitions and provenance records.

Everything here is a value type. Specs are canonicalised on construction
(nodes sorted by id, edges sorted) so structural equality does not depend
on the order a caller happened to list things in.
"""

from __future__ import annotations

import base64
import enum
import hashlib
import json
import re
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from typing import Any

from . import graphs
from .errors import CompositeCycle, InvalidSpec

SEGMENT_RE = re.compile(r"[A-Za-z0-9_.-]+")
HASH_RE = re.compile(r"[0-9a-f]{64}")


def is_identifier(value: object) -> bool:
    return isinstance(value, str) and SEGMENT_RE.fullmatch(value) is not None


def digest(data: bytes) -> str:
    """The one content digest used everywhere (SHA-256, lowercase hex)."""
    return hashlib.sha256(data).hexdigest()


def canonical_json(obj: Any) -> bytes:
    """Deterministic JSON bytes: sorted keys, compact separators, UTF-8."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def utc_now() -> datetime:
    now = datetime.now(timezone.utc)
    return now.replace(microsecond=now.microsecond // 1000 * 1000)


def format_ts(ts: datetime) -> str:
    ts = ts.astimezone(timezone.utc)
    return ts.strftime("%Y-%m-%dT%H:%M:%S.") + f"{ts.microsecond // 1000:03d}Z"


def parse_ts(text: str) -> datetime:
    return datetime.strptime(text, "%Y-%m-%dT%H:%M:%S.%fZ").replace(tzinfo=timezone.utc)


# ---------------------------------------------------------------------------
# Workflow definitions
# ---------------------------------------------------------------------------


class NodeKind(str, enum.Enum):
    SINGLE = "Single"
    COMPOSITE = "Composite"


@dataclass(frozen=True)
class WorkflowNode:
    id: str
    kind: NodeKind = NodeKind.SINGLE
    process_ref: str = ""
    children: tuple[str, ...] = ()
    metadata: Mapping[str, str] = field(default_factory=dict)
    declared_inputs: tuple[str, ...] = ()
    declared_outputs: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", NodeKind(self.kind))
        object.__setattr__(self, "children", tuple(self.children))
        object.__setattr__(self, "metadata", dict(self.metadata))
        object.__setattr__(self, "declared_inputs", tuple(self.declared_inputs))
        object.__setattr__(self, "declared_outputs", tuple(self.declared_outputs))

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "kind": self.kind.value,
            "process_ref": self.process_ref,
            "children": list(self.children),
            "metadata": dict(self.metadata),
            "declared_inputs": list(self.declared_inputs),
            "declared_outputs": list(self.declared_outputs),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> WorkflowNode:
        return cls(
            id=data["id"],
            kind=NodeKind(data.get("kind", "Single")),
            process_ref=data.get("process_ref", ""),
            children=tuple(data.get("children", ())),
            metadata={str(k): str(v) for k, v in dict(data.get("metadata", {})).items()},
            declared_inputs=tuple(data.get("declared_inputs", ())),
            declared_outputs=tuple(data.get("declared_outputs", ())),
        )


@dataclass(frozen=True)
class WorkflowSpec:
    """A versioned DAG pipeline description.

    ``version`` is assigned by the store; a spec built by hand normally
    leaves it ``None``. ``derived_from`` is a ``(spec_id, version)`` pair.
    """

    spec_id: str
    name: str
    head: str
    nodes: tuple[WorkflowNode, ...]
    edges: tuple[tuple[str, str], ...] = ()
    version: int | None = None
    derived_from: tuple[str, int] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes", tuple(sorted(self.nodes, key=lambda n: n.id)))
        object.__setattr__(self, "edges", tuple(sorted({(str(a), str(b)) for a, b in self.edges})))
        if self.derived_from is not None:
            sid, ver = self.derived_from
            object.__setattr__(self, "derived_from", (str(sid), int(ver)))

    # -- lookups ----------------------------------------------------------

    @property
    def node_map(self) -> dict[str, WorkflowNode]:
        return {n.id: n for n in self.nodes}

    @property
    def node_ids(self) -> list[str]:
        return [n.id for n in self.nodes]

    def node(self, node_id: str) -> WorkflowNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def predecessors(self, node_id: str) -> list[str]:
        return sorted({a for a, b in self.edges if b == node_id})

    def successors(self, node_id: str) -> list[str]:
        return sorted({b for a, b in self.edges if a == node_id})

    # -- serialization ----------------------------------------------------

    def to_dict(self, *, with_version: bool = True) -> dict[str, Any]:
        out: dict[str, Any] = {
            "spec_id": self.spec_id,
            "name": self.name,
            "head": self.head,
            "nodes": [n.to_dict() for n in self.nodes],
            "edges": [list(e) for e in self.edges],
        }
        if with_version:
            out["version"] = self.version
            out["derived_from"] = (
                None
                if self.derived_from is None
                else {"spec_id": self.derived_from[0], "version": self.derived_from[1]}
            )
        return out

    def canonical_bytes(self) -> bytes:
        return canonical_json(self.to_dict())

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> WorkflowSpec:
        """Parse the wire form; structural problems raise :class:`InvalidSpec`."""
        try:
            derived = data.get("derived_from")
            if isinstance(derived, Mapping):
                derived = (derived["spec_id"], int(derived["version"]))
            elif derived is not None:
                derived = (derived[0], int(derived[1]))
            version = data.get("version")
            return cls(
                spec_id=str(data.get("spec_id", "")),
                name=str(data.get("name", "")),
                head=str(data["head"]),
                nodes=tuple(WorkflowNode.from_dict(n) for n in data["nodes"]),
                edges=tuple((e[0], e[1]) for e in data.get("edges", ())),
                version=None if version is None else int(version),
                derived_from=derived,
            )
        except (KeyError, TypeError, ValueError, IndexError, AttributeError) as exc:
            raise InvalidSpec([Violation("malformed", f"malformed spec document: {exc!r}", "")]) from exc

    @classmethod
    def from_json(cls, payload: bytes | str) -> WorkflowSpec:
        try:
            data = json.loads(payload)
        except json.JSONDecodeError as exc:
            raise InvalidSpec([Violation("malformed", f"spec is not JSON: {exc}", "")]) from exc
        if not isinstance(data, Mapping):
            raise InvalidSpec([Violation("malformed", "spec document must be an object", "")])
        return cls.from_dict(data)


# ---------------------------------------------------------------------------
# Data references and descriptions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DataRef:
    name: str
    content_hash: str
    uri: str | None = None
    inline_payload: bytes | None = None

    def __post_init__(self) -> None:
        if not HASH_RE.fullmatch(self.content_hash or ""):
            raise ValueError(f"content_hash must be 64 lowercase hex chars, got {self.content_hash!r}")
        if self.inline_payload is not None and digest(self.inline_payload) != self.content_hash:
            raise ValueError(f"inline payload of {self.name!r} does not match its content hash")

    @classmethod
    def from_payload(cls, name: str, payload: bytes, uri: str | None = None, *, inline: bool = True) -> DataRef:
        return cls(name, digest(payload), uri, payload if inline else None)

    def without_payload(self) -> DataRef:
        return replace(self, inline_payload=None)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"name": self.name, "content_hash": self.content_hash, "uri": self.uri}
        if self.inline_payload is not None:
            out["inline_payload"] = base64.b64encode(self.inline_payload).decode("ascii")
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], name: str | None = None) -> DataRef:
        payload = data.get("inline_payload")
        raw = base64.b64decode(payload) if payload is not None else None
        content_hash = data.get("content_hash")
        if content_hash is None and raw is not None:
            content_hash = digest(raw)
        return cls(name if name is not None else data["name"], content_hash, data.get("uri"), raw)


@dataclass(frozen=True)
class AgentDescription:
    name: str
    host: str = ""


@dataclass(frozen=True)
class ActivityDescription:
    node: str
    description: str = ""
    inputs: tuple[str, ...] = ()
    outputs: tuple[str, ...] = ()


@dataclass(frozen=True)
class OutcomeDescription:
    node: str
    outputs: tuple[str, ...] = ()


@dataclass(frozen=True)
class CollectionDescription:
    name: str
    members: tuple[str, ...] = ()


@dataclass(frozen=True)
class Descriptions:
    agents: tuple[AgentDescription, ...] = ()
    activities: tuple[ActivityDescription, ...] = ()
    outcome_schemas: tuple[OutcomeDescription, ...] = ()
    collections: tuple[CollectionDescription, ...] = ()

    def violations(self, spec: WorkflowSpec) -> list[Violation]:
        known = set(spec.node_ids)
        found = []
        for desc in (*self.activities, *self.outcome_schemas):
            if desc.node not in known:
                found.append(Violation("unknown-description-node", f"description references unknown node {desc.node}", desc.node))
        return found

    def to_dict(self) -> dict[str, Any]:
        return {
            "agents": [{"name": a.name, "host": a.host} for a in self.agents],
            "activities": [
                {"node": a.node, "description": a.description, "inputs": list(a.inputs), "outputs": list(a.outputs)}
                for a in self.activities
            ],
            "outcome_schemas": [{"node": o.node, "outputs": list(o.outputs)} for o in self.outcome_schemas],
            "collections": [{"name": c.name, "members": list(c.members)} for c in self.collections],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any] | None) -> Descriptions:
        data = data or {}
        return cls(
            agents=tuple(AgentDescription(a["name"], a.get("host", "")) for a in data.get("agents", ())),
            activities=tuple(
                ActivityDescription(a["node"], a.get("description", ""), tuple(a.get("inputs", ())), tuple(a.get("outputs", ())))
                for a in data.get("activities", ())
            ),
            outcome_schemas=tuple(OutcomeDescription(o["node"], tuple(o.get("outputs", ()))) for o in data.get("outcome_schemas", ())),
            collections=tuple(CollectionDescription(c["name"], tuple(c.get("members", ()))) for c in data.get("collections", ())),
        )


# ---------------------------------------------------------------------------
# Provenance records
# ---------------------------------------------------------------------------


class ActivityState(str, enum.Enum):
    WAITING = "Waiting"
    STARTED = "Started"
    SUSPENDED = "Suspended"
    INTERRUPTED = "Interrupted"
    COMPLETED = "Completed"
    FAILED = "Failed"

    @property
    def terminal(self) -> bool:
        return self in (ActivityState.COMPLETED, ActivityState.FAILED)


# None is the pre-initialisation state written by begin_execution.
TRANSITIONS: dict[ActivityState | None, frozenset[ActivityState]] = {
    None: frozenset({ActivityState.WAITING}),
    ActivityState.WAITING: frozenset({ActivityState.STARTED}),
    ActivityState.STARTED: frozenset(
        {ActivityState.COMPLETED, ActivityState.FAILED, ActivityState.SUSPENDED, ActivityState.INTERRUPTED}
    ),
    ActivityState.SUSPENDED: frozenset({ActivityState.STARTED}),
    ActivityState.INTERRUPTED: frozenset({ActivityState.STARTED, ActivityState.FAILED}),
    ActivityState.COMPLETED: frozenset(),
    ActivityState.FAILED: frozenset(),
}


def transition_allowed(src: ActivityState | None, dst: ActivityState) -> bool:
    return dst in TRANSITIONS[src]


class EventKind(str, enum.Enum):
    SPEC_RECORDED = "SpecRecorded"
    EXECUTION_STARTED = "ExecutionStarted"
    ACTIVITY_TRANSITION = "ActivityTransition"
    EXECUTION_FINISHED = "ExecutionFinished"
    ANNOTATION_ADDED = "AnnotationAdded"
    VALIDATION_RUN = "ValidationRun"


class ExecutionStatus(str, enum.Enum):
    SUCCEEDED = "Succeeded"
    FAILED = "Failed"
    ABORTED = "Aborted"


@dataclass(frozen=True, order=True)
class ExecutionId:
    item_id: str
    run_seq: int

    def __str__(self) -> str:
        return f"{self.item_id}:{self.run_seq}"

    @classmethod
    def parse(cls, text: str | ExecutionId) -> ExecutionId:
        if isinstance(text, ExecutionId):
            return text
        item_id, sep, run = str(text).rpartition(":")
        if not sep or not item_id or not run.isdigit() or int(run) < 1:
            raise ValueError(f"not an execution id: {text!r}")
        return cls(item_id, int(run))


@dataclass(frozen=True)
class Event:
    item_id: str
    seq: int
    timestamp: datetime
    kind: EventKind
    execution_id: ExecutionId | None = None
    node: str | None = None
    transition: tuple[ActivityState | None, ActivityState] | None = None
    outcome_ref: str | None = None
    detail: Mapping[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "item_id": self.item_id,
            "seq": self.seq,
            "timestamp": format_ts(self.timestamp),
            "kind": self.kind.value,
            "execution_id": None if self.execution_id is None else str(self.execution_id),
            "node": self.node,
            "transition": None
            if self.transition is None
            else {
                "from": None if self.transition[0] is None else self.transition[0].value,
                "to": self.transition[1].value,
            },
            "outcome_ref": self.outcome_ref,
            "detail": dict(self.detail),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Event:
        trans = data.get("transition")
        return cls(
            item_id=data["item_id"],
            seq=int(data["seq"]),
            timestamp=parse_ts(data["timestamp"]),
            kind=EventKind(data["kind"]),
            execution_id=None if data.get("execution_id") is None else ExecutionId.parse(data["execution_id"]),
            node=data.get("node"),
            transition=None
            if trans is None
            else (None if trans["from"] is None else ActivityState(trans["from"]), ActivityState(trans["to"])),
            outcome_ref=data.get("outcome_ref"),
            detail=dict(data.get("detail", {})),
        )


@dataclass(frozen=True)
class ErrorRecord:
    code: str
    message: str = ""


@dataclass(frozen=True)
class Outcome:
    """Result of one activity run. Executors may leave ``execution_id`` unset."""

    node: str
    outputs: tuple[DataRef, ...] = ()
    log_text: str = ""
    error: ErrorRecord | None = None
    execution_id: ExecutionId | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "outputs", tuple(self.outputs))

    def output_hashes(self) -> dict[str, str]:
        return {d.name: d.content_hash for d in self.outputs}

    def to_dict(self) -> dict[str, Any]:
        return {
            "node": self.node,
            "execution_id": None if self.execution_id is None else str(self.execution_id),
            "outputs": [d.to_dict() for d in self.outputs],
            "log_text": self.log_text,
            "error": None if self.error is None else {"code": self.error.code, "message": self.error.message},
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Outcome:
        err = data.get("error")
        return cls(
            node=data["node"],
            execution_id=None if data.get("execution_id") is None else ExecutionId.parse(data["execution_id"]),
            outputs=tuple(DataRef.from_dict(d) for d in data.get("outputs", ())),
            log_text=data.get("log_text", ""),
            error=None if err is None else ErrorRecord(err["code"], err.get("message", "")),
        )


@dataclass(frozen=True)
class Annotation:
    item_id: str
    text: str
    author: str = ""
    version: int | None = None
    node: str | None = None
    created_at: datetime | None = None
    seq: int | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "item_id": self.item_id,
            "version": self.version,
            "node": self.node,
            "author": self.author,
            "text": self.text,
            "created_at": None if self.created_at is None else format_ts(self.created_at),
            "seq": self.seq,
        }


@dataclass
class Item:
    """Snapshot view of an Item; the authoritative state is its event log."""

    item_id: str
    spec_versions: list[int]
    descriptions: Descriptions
    properties: dict[str, str]
    events: list[int]

    def to_dict(self) -> dict[str, Any]:
        return {
            "item_id": self.item_id,
            "spec_versions": list(self.spec_versions),
            "descriptions": self.descriptions.to_dict(),
            "properties": dict(self.properties),
            "events": list(self.events),
        }


# ---------------------------------------------------------------------------
# Structural validation, expansion, fingerprinting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    location: str = ""

    def to_dict(self) -> dict[str, str]:
        return {"code": self.code, "message": self.message, "location": self.location}


@dataclass(frozen=True)
class ValidationOutcome:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def codes(self) -> set[str]:
        return {v.code for v in self.violations}


def _expand_parts(spec: WorkflowSpec) -> tuple[dict[str, WorkflowNode], set[tuple[str, str]], str]:
    nodes = dict(spec.node_map)
    edges = set(spec.edges)
    head = spec.head
    while True:
        composites = sorted(n.id for n in nodes.values() if n.kind is NodeKind.COMPOSITE)
        if not composites:
            return nodes, edges, head
        ready = [
            c
            for c in composites
            if all(ch not in nodes or nodes[ch].kind is NodeKind.SINGLE for ch in nodes[c].children)
        ]
        if not ready:
            raise CompositeCycle(f"composite nesting cycle among {','.join(composites)}")
        cid = ready[0]
        comp = nodes.pop(cid)
        members = [ch for ch in comp.children if ch in nodes]
        mset = set(members)
        entries = [m for m in members if not any((o, m) in edges for o in mset)]
        exits = [m for m in members if not any((m, o) in edges for o in mset)]
        rewired: set[tuple[str, str]] = set()
        for a, b in edges:
            if a == cid and b == cid:
                continue
            if b == cid:
                rewired.update((a, e) for e in entries)
            elif a == cid:
                rewired.update((x, b) for x in exits)
            else:
                rewired.add((a, b))
        edges = rewired
        for oid, other in list(nodes.items()):
            if other.kind is NodeKind.COMPOSITE and cid in other.children:
                children: list[str] = []
                for ch in other.children:
                    children.extend(members if ch == cid else [ch])
                nodes[oid] = replace(other, children=tuple(children))
        if head == cid and entries:
            head = entries[0]


def expand(spec: WorkflowSpec) -> WorkflowSpec:
    """Replace every composite node by its member subgraph.

    Edges into a composite attach to its entry members (no predecessor
    inside the composite); edges out of it leave from its exit members.
    Raises :class:`CompositeCycle` if the flattened graph is cyclic.
    """
    nodes, edges, head = _expand_parts(spec)
    if graphs.cycles(nodes, edges):
        raise CompositeCycle("expanded workflow contains a cycle")
    if nodes.keys() == spec.node_map.keys() and edges == set(spec.edges) and head == spec.head:
        return spec
    return replace(spec, nodes=tuple(nodes.values()), edges=tuple(edges), head=head)


def validate_spec(spec: WorkflowSpec) -> ValidationOutcome:
    found: list[Violation] = []
    seen: set[str] = set()
    for node in spec.nodes:
        if not is_identifier(node.id):
            found.append(Violation("bad-node-id", f"node id {node.id!r} is not a valid identifier", str(node.id)))
        if node.id in seen:
            found.append(Violation("duplicate-node", f"duplicate node {node.id}", node.id))
        seen.add(node.id)

    ids = set(spec.node_ids)
    parent_of: dict[str, str] = {}
    for node in spec.nodes:
        if node.kind is NodeKind.SINGLE:
            if node.children:
                found.append(Violation("single-with-children", f"single node {node.id} has children", node.id))
            if not node.process_ref:
                found.append(Violation("missing-process", f"single node {node.id} has no process_ref", node.id))
        else:
            if not node.children:
                found.append(Violation("empty-composite", f"composite node {node.id} has no children", node.id))
            for ch in node.children:
                if ch not in ids:
                    found.append(Violation("unknown-child", f"composite {node.id} references unknown child {ch}", node.id))
                elif ch == node.id:
                    found.append(Violation("self-child", f"composite {node.id} contains itself", node.id))
                elif ch in parent_of and parent_of[ch] != node.id:
                    found.append(
                        Violation("shared-child", f"child {ch} appears under composites {parent_of[ch]} and {node.id}", ch)
                    )
                else:
                    parent_of[ch] = node.id
        for label, params in (("declared_inputs", node.declared_inputs), ("declared_outputs", node.declared_outputs)):
            if len(set(params)) != len(params):
                found.append(Violation("duplicate-param", f"node {node.id} has duplicate {label}", node.id))

    for a, b in spec.edges:
        loc = f"{a}->{b}"
        if a not in ids or b not in ids:
            found.append(Violation("dangling-edge", f"edge {loc} references an unknown node", loc))
        elif a == b:
            found.append(Violation("self-edge", f"self edge on {a}", loc))
        elif parent_of.get(a) == b or parent_of.get(b) == a:
            found.append(Violation("member-edge", f"edge {loc} links a composite to its own member", loc))

    if spec.head not in ids:
        found.append(Violation("head-missing", f"head missing: {spec.head} is not a node", spec.head))

    if found:
        return ValidationOutcome(tuple(found))

    try:
        nodes, edges, head = _expand_parts(spec)
    except CompositeCycle as exc:
        return ValidationOutcome((Violation("composite-cycle", str(exc), ""),))

    for comp in graphs.cycles(nodes, edges):
        found.append(Violation("cycle", f"cycle through {','.join(comp)}", ",".join(comp)))
    preds = sorted(a for a, b in edges if b == head)
    if preds:
        found.append(
            Violation("head-has-predecessor", f"head has predecessor: {','.join(preds)} -> {head}", head)
        )
    succ, _ = graphs.adjacency(nodes, edges)
    reach = graphs.reachable([head], succ) | {head}
    for nid in sorted(set(nodes) - reach):
        found.append(Violation("unreachable", f"node {nid} is not reachable from head {head}", nid))
    return ValidationOutcome(tuple(found))


def require_valid(spec: WorkflowSpec) -> None:
    outcome = validate_spec(spec)
    if not outcome.ok:
        raise InvalidSpec(list(outcome.violations))


def spec_fingerprint(spec: WorkflowSpec) -> str:
    """Digest of the canonical form, excluding ``version`` and ``derived_from``."""
    return digest(canonical_json(spec.to_dict(with_version=False)))


def simple_spec(
    spec_id: str,
    edges: Iterable[tuple[str, str]],
    *,
    head: str | None = None,
    nodes: Iterable[str] = (),
    name: str | None = None,
    io: bool = True,
) -> WorkflowSpec:
    """Build a flat spec from an edge list; handy for tests and examples.

    With ``io`` every node declares one output ``<id>.out`` and one input
    per predecessor output; the head declares a single input ``input``.
    """
    edges = list(edges)
    ids = sorted({*nodes, *(a for a, _ in edges), *(b for _, b in edges)})
    if head is None:
        targets = {b for _, b in edges}
        head = next(n for n in ids if n not in targets)
    built = []
    for nid in ids:
        preds = sorted({a for a, b in edges if b == nid})
        if io:
            inputs = tuple(f"{p}.out" for p in preds) if nid != head else ("input",)
            outputs = (f"{nid}.out",)
        else:
            inputs, outputs = (), ()
        built.append(WorkflowNode(nid, NodeKind.SINGLE, f"proc-{nid}", (), {}, inputs, outputs))
    return WorkflowSpec(spec_id, name or spec_id, head, tuple(built), tuple(edges))

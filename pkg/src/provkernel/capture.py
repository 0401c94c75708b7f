"""Write side: every change to an Item is appended to its log as an Event.

Item state is never stored directly. :func:`apply_event` folds one Event
into an :class:`ItemState`; :class:`ProvenanceStore` keeps a cached fold
per Item and catches it up from storage before every operation, so a
fresh store over the same backend sees exactly the same state.
"""

from __future__ import annotations

import json
import logging
import threading
import uuid
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field, replace
from datetime import datetime
from typing import Any

from . import graphs
from .errors import (
    AlreadyFinished,
    IllegalTransition,
    ImmutableOverwrite,
    InvalidAnnotation,
    InvalidSpec,
    MissingOutcome,
    NotFound,
    OutcomeMismatch,
    ProvenanceError,
    StatusMismatch,
    UnknownExecution,
    UnknownItem,
    UnknownNode,
    UnknownVersion,
)
from .model import (
    ActivityState,
    AgentDescription,
    Annotation,
    DataRef,
    Descriptions,
    Event,
    EventKind,
    ExecutionId,
    ExecutionStatus,
    Item,
    Outcome,
    WorkflowSpec,
    canonical_json,
    expand,
    transition_allowed,
    utc_now,
    validate_spec,
)
from .storage import ClusterKind, StorageBackend, StoragePath, StorageRecord, seg

log = logging.getLogger(__name__)

ITEM_RECORD = ("item",)


class ConcurrentModification(ProvenanceError):
    """Another writer appended to the same Item between sync and append."""


def event_path(item_id: str, seq: int) -> StoragePath:
    return StoragePath(item_id, ClusterKind.EVENT, (seg(seq),))


def workflow_path(item_id: str, version: int) -> StoragePath:
    return StoragePath(item_id, ClusterKind.WORKFLOW, (seg(version),))


def outcome_path(execution_id: ExecutionId, node: str) -> StoragePath:
    return StoragePath(execution_id.item_id, ClusterKind.OUTCOME, (seg(execution_id.run_seq), node))


# ---------------------------------------------------------------------------
# The fold
# ---------------------------------------------------------------------------


@dataclass
class VersionInfo:
    version: int
    seq: int
    ref: str
    recorded_at: datetime


@dataclass
class ExecutionState:
    execution_id: ExecutionId
    version: int
    agent: AgentDescription
    started_at: datetime
    started_seq: int
    scope: tuple[str, ...] | None = None
    replay_of: ExecutionId | None = None
    nodes: list[str] = field(default_factory=list)
    states: dict[str, ActivityState] = field(default_factory=dict)
    history: dict[str, list[tuple[int, ActivityState]]] = field(default_factory=dict)
    started_order: list[str] = field(default_factory=list)
    inputs: dict[str, list[DataRef]] = field(default_factory=dict)
    outcome_refs: dict[str, str] = field(default_factory=dict)
    failures: list[tuple[int, str, str, datetime]] = field(default_factory=list)
    transitions: int = 0
    status: ExecutionStatus | None = None
    finished_at: datetime | None = None

    @property
    def is_open(self) -> bool:
        return self.status is None

    def executed_nodes(self) -> list[str]:
        """Nodes that were started at least once, in first-start order."""
        return list(self.started_order)


@dataclass
class ItemState:
    item_id: str
    last_seq: int = -1
    versions: dict[int, VersionInfo] = field(default_factory=dict)
    executions: dict[int, ExecutionState] = field(default_factory=dict)
    annotations: list[Annotation] = field(default_factory=list)
    validations: list[Event] = field(default_factory=list)
    spec_trace: list[Event] = field(default_factory=list)

    @property
    def exists(self) -> bool:
        return self.last_seq >= 0

    def latest_version(self) -> int:
        return max(self.versions)


def apply_event(state: ItemState, ev: Event) -> None:
    """Fold one event into ``state``. Events must arrive in seq order."""
    if ev.seq != state.last_seq + 1:
        raise ValueError(f"event seq {ev.seq} out of order after {state.last_seq}")
    state.last_seq = ev.seq
    kind = ev.kind
    if kind is EventKind.SPEC_RECORDED:
        version = len(state.versions) + 1
        state.versions[version] = VersionInfo(version, ev.seq, ev.outcome_ref or "", ev.timestamp)
        state.spec_trace.append(ev)
    elif kind is EventKind.EXECUTION_STARTED:
        d = ev.detail
        assert ev.execution_id is not None
        scope = d.get("scope")
        state.executions[ev.execution_id.run_seq] = ExecutionState(
            execution_id=ev.execution_id,
            version=int(d["version"]),
            agent=AgentDescription(d.get("agent", ""), d.get("host", "")),
            started_at=ev.timestamp,
            started_seq=ev.seq,
            scope=None if scope is None else tuple(scope),
            replay_of=None if d.get("replay_of") is None else ExecutionId.parse(d["replay_of"]),
        )
    elif kind is EventKind.ACTIVITY_TRANSITION:
        assert ev.execution_id is not None and ev.node is not None and ev.transition is not None
        ex = state.executions[ev.execution_id.run_seq]
        src, dst = ev.transition
        node = ev.node
        if src is None:
            ex.nodes.append(node)
        else:
            ex.transitions += 1
        ex.states[node] = dst
        ex.history.setdefault(node, []).append((ev.seq, dst))
        if dst is ActivityState.STARTED:
            if node not in ex.started_order:
                ex.started_order.append(node)
            if "inputs" in ev.detail:
                ex.inputs[node] = [DataRef.from_dict(d) for d in ev.detail["inputs"]]
        if ev.outcome_ref:
            ex.outcome_refs[node] = ev.outcome_ref
        if dst is ActivityState.FAILED:
            ex.failures.append((ev.seq, node, ev.outcome_ref or "", ev.timestamp))
    elif kind is EventKind.EXECUTION_FINISHED:
        assert ev.execution_id is not None
        ex = state.executions[ev.execution_id.run_seq]
        ex.status = ExecutionStatus(ev.detail["status"])
        ex.finished_at = ev.timestamp
    elif kind is EventKind.ANNOTATION_ADDED:
        d = ev.detail
        state.annotations.append(
            Annotation(
                item_id=state.item_id,
                text=d["text"],
                author=d.get("author", ""),
                version=d.get("version"),
                node=ev.node,
                created_at=ev.timestamp,
                seq=ev.seq,
            )
        )
        state.spec_trace.append(ev)
    elif kind is EventKind.VALIDATION_RUN:
        state.validations.append(ev)


def fold_events(item_id: str, events: Iterable[Event]) -> ItemState:
    state = ItemState(item_id)
    for ev in events:
        apply_event(state, ev)
    return state


# ---------------------------------------------------------------------------
# Store
# ---------------------------------------------------------------------------


Clock = Callable[[], datetime]


class ProvenanceStore:
    """Capture API over a storage backend.

    Appends for one Item are serialized by a per-Item lock; different Items
    never contend. ``clock`` and ``id_factory`` are injectable so tests can
    produce byte-stable records.
    """

    def __init__(
        self,
        backend: StorageBackend,
        *,
        clock: Clock = utc_now,
        id_factory: Callable[[], str] | None = None,
    ) -> None:
        self.backend = backend
        self.clock = clock
        self.id_factory = id_factory or (lambda: str(uuid.uuid4()))
        self._states: dict[str, ItemState] = {}
        self._events: dict[str, list[Event]] = {}
        self._specs: dict[tuple[str, int], WorkflowSpec] = {}
        self._expanded: dict[tuple[str, int], WorkflowSpec] = {}
        self._locks: dict[str, threading.RLock] = {}
        self._guard = threading.Lock()

    # -- internals ---------------------------------------------------------

    def lock(self, item_id: str) -> threading.RLock:
        with self._guard:
            return self._locks.setdefault(item_id, threading.RLock())

    def _sync(self, item_id: str) -> ItemState:
        with self.lock(item_id):
            state = self._states.get(item_id)
            if state is None:
                state = ItemState(item_id)
                self._events[item_id] = []
            while True:
                try:
                    rec = self.backend.get(event_path(item_id, state.last_seq + 1))
                except NotFound:
                    break
                ev = Event.from_dict(json.loads(rec.payload))
                apply_event(state, ev)
                self._events[item_id].append(ev)
            if state.exists:
                self._states[item_id] = state
            return state

    def _existing(self, item_id: str) -> ItemState:
        try:
            state = self._sync(item_id)
        except ValueError:
            raise UnknownItem(f"not an item id: {item_id!r}") from None
        if not state.exists:
            raise UnknownItem(f"unknown item {item_id}")
        return state

    def _append(self, state: ItemState, kind: EventKind, **fields: Any) -> Event:
        ev = Event(item_id=state.item_id, seq=state.last_seq + 1, timestamp=self.clock(), kind=kind, **fields)
        payload = canonical_json(ev.to_dict())
        try:
            self.backend.put(StorageRecord(event_path(state.item_id, ev.seq), payload, "event"))
        except ImmutableOverwrite as exc:
            raise ConcurrentModification(f"item {state.item_id} was appended to concurrently") from exc
        apply_event(state, ev)
        self._events.setdefault(state.item_id, []).append(ev)
        return ev

    def _execution(self, state: ItemState, execution_id: ExecutionId) -> ExecutionState:
        ex = state.executions.get(execution_id.run_seq)
        if ex is None:
            raise UnknownExecution(f"unknown execution {execution_id}")
        return ex

    # -- reads ---------------------------------------------------------------

    def state(self, item_id: str) -> ItemState:
        return self._existing(item_id)

    def events(self, item_id: str) -> list[Event]:
        with self.lock(item_id):
            self._existing(item_id)
            return list(self._events[item_id])

    def item_ids(self) -> list[str]:
        found = []
        for item_id in self.backend.list_items():
            try:
                if self._sync(item_id).exists:
                    found.append(item_id)
            except ValueError:
                continue
        return found

    def get_item(self, item_id: str) -> Item:
        state = self._existing(item_id)
        props = json.loads(self.backend.get(StoragePath(item_id, ClusterKind.PROPERTY, ITEM_RECORD)).payload)
        return Item(
            item_id=item_id,
            spec_versions=sorted(state.versions),
            descriptions=Descriptions.from_dict(props.get("descriptions")),
            properties=dict(props.get("properties", {})),
            events=list(range(state.last_seq + 1)),
        )

    def spec(self, item_id: str, version: int) -> WorkflowSpec:
        state = self._existing(item_id)
        key = (item_id, int(version))
        if key not in self._specs:
            info = state.versions.get(int(version))
            if info is None:
                raise UnknownVersion(f"item {item_id} has no version {version}")
            rec = self.backend.get(StoragePath.parse(info.ref))
            self._specs[key] = WorkflowSpec.from_json(rec.payload)
        return self._specs[key]

    def expanded_spec(self, item_id: str, version: int) -> WorkflowSpec:
        key = (item_id, int(version))
        if key not in self._expanded:
            self._expanded[key] = expand(self.spec(item_id, version))
        return self._expanded[key]

    def execution(self, execution_id: ExecutionId | str) -> ExecutionState:
        execution_id = ExecutionId.parse(execution_id)
        state = self._existing(execution_id.item_id)
        return self._execution(state, execution_id)

    def outcome(self, execution_id: ExecutionId | str, node: str) -> Outcome | None:
        ex = self.execution(execution_id)
        ref = ex.outcome_refs.get(node)
        if ref is None:
            return None
        return Outcome.from_dict(json.loads(self.backend.get(StoragePath.parse(ref)).payload))

    # -- writes --------------------------------------------------------------

    def register_item(
        self,
        spec: WorkflowSpec,
        descriptions: Descriptions | None = None,
        properties: Mapping[str, str] | None = None,
    ) -> str:
        descriptions = descriptions or Descriptions()
        violations = [*validate_spec(spec).violations, *descriptions.violations(spec)]
        if violations:
            raise InvalidSpec(violations)
        item_id = self.id_factory()
        with self.lock(item_id):
            state = self._sync(item_id)
            if state.exists:
                raise ConcurrentModification(f"item id {item_id} already in use")
            doc = {"item_id": item_id, "descriptions": descriptions.to_dict(), "properties": dict(properties or {})}
            self.backend.put(
                StorageRecord(StoragePath(item_id, ClusterKind.PROPERTY, ITEM_RECORD), canonical_json(doc), "property")
            )
            stored = replace(spec, version=1)
            path = workflow_path(item_id, 1)
            self.backend.put(StorageRecord(path, stored.canonical_bytes(), "spec"))
            self._append(state, EventKind.SPEC_RECORDED, outcome_ref=str(path), detail={"version": 1})
            self._states[item_id] = state
        log.debug("registered item %s", item_id)
        return item_id

    def record_spec_version(self, item_id: str, spec: WorkflowSpec, derived_from: int) -> int:
        with self.lock(item_id):
            state = self._existing(item_id)
            if int(derived_from) not in state.versions:
                raise UnknownVersion(f"item {item_id} has no version {derived_from}")
            outcome = validate_spec(spec)
            if not outcome.ok:
                raise InvalidSpec(list(outcome.violations))
            base = self.spec(item_id, int(derived_from))
            version = max(state.versions) + 1
            stored = replace(spec, version=version, derived_from=(base.spec_id, int(derived_from)))
            path = workflow_path(item_id, version)
            self.backend.put(StorageRecord(path, stored.canonical_bytes(), "spec"))
            self._append(
                state,
                EventKind.SPEC_RECORDED,
                outcome_ref=str(path),
                detail={"version": version, "derived_from": int(derived_from)},
            )
            return version

    def begin_execution(
        self,
        item_id: str,
        version: int,
        agent: AgentDescription | None = None,
        *,
        scope: Iterable[str] | None = None,
        replay_of: ExecutionId | str | None = None,
        provided: Mapping[str, Mapping[str, Any]] | None = None,
    ) -> ExecutionId:
        """Open an execution; ``provided`` records externally supplied inputs per node."""
        agent = agent or AgentDescription("local")
        with self.lock(item_id):
            state = self._existing(item_id)
            if int(version) not in state.versions:
                raise UnknownVersion(f"item {item_id} has no version {version}")
            spec = self.expanded_spec(item_id, int(version))
            order = graphs.lexicographic_topo_order(spec.node_ids, spec.edges) or spec.node_ids
            scope_list: list[str] | None = None
            if scope is not None:
                scope_set = set(scope)
                unknown = sorted(scope_set - set(order))
                if unknown:
                    raise UnknownNode(f"scope references unknown nodes {','.join(unknown)}")
                scope_list = [n for n in order if n in scope_set]
                order = scope_list
            exec_id = ExecutionId(item_id, len(state.executions) + 1)
            detail: dict[str, Any] = {
                "version": int(version),
                "agent": agent.name,
                "host": agent.host,
                "scope": scope_list,
                "replay_of": None if replay_of is None else str(replay_of),
                "provided": {n: dict(refs) for n, refs in (provided or {}).items()},
            }
            self._append(state, EventKind.EXECUTION_STARTED, execution_id=exec_id, detail=detail)
            for node in order:
                self._append(
                    state,
                    EventKind.ACTIVITY_TRANSITION,
                    execution_id=exec_id,
                    node=node,
                    transition=(None, ActivityState.WAITING),
                )
            return exec_id

    def record_transition(
        self,
        execution_id: ExecutionId | str,
        node: str,
        to: ActivityState,
        outcome: Outcome | None = None,
        *,
        inputs: Sequence[DataRef] | None = None,
        detail: Mapping[str, Any] | None = None,
    ) -> Event:
        execution_id = ExecutionId.parse(execution_id)
        to = ActivityState(to)
        with self.lock(execution_id.item_id):
            state = self._existing(execution_id.item_id)
            ex = self._execution(state, execution_id)
            if not ex.is_open:
                raise AlreadyFinished(f"execution {execution_id} already finished")
            if node not in ex.states:
                raise UnknownNode(f"node {node} is not part of execution {execution_id}")
            current = ex.states[node]
            if not transition_allowed(current, to):
                raise IllegalTransition(node, current, to)
            if current is ActivityState.WAITING and to is ActivityState.STARTED:
                spec = self.expanded_spec(execution_id.item_id, ex.version)
                for pred in spec.predecessors(node):
                    if pred in ex.states and ex.states[pred] is not ActivityState.COMPLETED:
                        raise IllegalTransition(node, current, to, f"predecessor {pred} is {ex.states[pred].value}")
            fields: dict[str, Any] = {"execution_id": execution_id, "node": node, "transition": (current, to)}
            extra = dict(detail or {})
            if inputs is not None:
                extra["inputs"] = [d.without_payload().to_dict() for d in inputs]
            if to.terminal:
                if outcome is None:
                    raise MissingOutcome(f"transition to {to.value} at {node} needs an outcome")
                if outcome.node != node:
                    raise OutcomeMismatch(f"outcome is for node {outcome.node}, not {node}")
                if (outcome.error is not None) != (to is ActivityState.FAILED):
                    raise OutcomeMismatch(f"outcome error presence does not match {to.value} at {node}")
                outcome = replace(outcome, execution_id=execution_id)
                path = outcome_path(execution_id, node)
                self.backend.put(StorageRecord(path, canonical_json(outcome.to_dict()), "outcome"))
                fields["outcome_ref"] = str(path)
            elif outcome is not None:
                raise OutcomeMismatch(f"outcomes are only recorded on Completed/Failed, not {to.value}")
            fields["detail"] = extra
            return self._append(state, EventKind.ACTIVITY_TRANSITION, **fields)

    def end_execution(self, execution_id: ExecutionId | str, status: ExecutionStatus | str) -> Event:
        execution_id = ExecutionId.parse(execution_id)
        status = ExecutionStatus(status)
        with self.lock(execution_id.item_id):
            state = self._existing(execution_id.item_id)
            ex = self._execution(state, execution_id)
            if not ex.is_open:
                raise AlreadyFinished(f"execution {execution_id} already finished")
            all_done = all(s is ActivityState.COMPLETED for s in ex.states.values())
            if (status is ExecutionStatus.SUCCEEDED) != all_done:
                pending = sorted(n for n, s in ex.states.items() if s is not ActivityState.COMPLETED)
                raise StatusMismatch(
                    f"status {status.value} disagrees with node states (not completed: {','.join(pending) or 'none'})"
                )
            return self._append(
                state, EventKind.EXECUTION_FINISHED, execution_id=execution_id, detail={"status": status.value}
            )

    def annotate(
        self,
        item_id: str,
        text: str,
        *,
        author: str = "",
        version: int | None = None,
        node: str | None = None,
    ) -> Annotation:
        if not text or not text.strip():
            raise InvalidAnnotation("annotation text must be non-empty")
        with self.lock(item_id):
            state = self._existing(item_id)
            if version is not None and int(version) not in state.versions:
                raise UnknownVersion(f"item {item_id} has no version {version}")
            if node is not None:
                versions = [int(version)] if version is not None else sorted(state.versions)
                known: set[str] = set()
                for v in versions:
                    known.update(self.spec(item_id, v).node_ids)
                    known.update(self.expanded_spec(item_id, v).node_ids)
                if node not in known:
                    raise UnknownNode(f"item {item_id} has no node {node}")
            self._append(
                state,
                EventKind.ANNOTATION_ADDED,
                node=node,
                detail={"author": author, "text": text, "version": None if version is None else int(version)},
            )
            return state.annotations[-1]

    def record_validation(
        self, item_id: str, summary: Mapping[str, Any], execution_id: ExecutionId | None = None
    ) -> Event:
        with self.lock(item_id):
            state = self._existing(item_id)
            return self._append(state, EventKind.VALIDATION_RUN, execution_id=execution_id, detail=dict(summary))

    def put_view(self, item_id: str, subpath: Sequence[str], payload: bytes) -> StoragePath:
        self._existing(item_id)
        path = StoragePath(item_id, ClusterKind.VIEW, tuple(subpath))
        self.backend.put(StorageRecord(path, payload, "view"))
        return path

    def get_view(self, item_id: str, subpath: Sequence[str]) -> bytes:
        return self.backend.get(StoragePath(item_id, ClusterKind.VIEW, tuple(subpath))).payload

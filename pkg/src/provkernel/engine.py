"""Provenance-aware serial workflow engine.

The engine only decides *order* and *data routing*; running a node is the
executor's business. Every state change goes through
:class:`~provkernel.capture.ProvenanceStore`, which rejects anything the
transition table does not allow.
"""

from __future__ import annotations

import logging
from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from typing import Protocol

from . import graphs
from .capture import ExecutionState, ProvenanceStore
from .errors import IllegalTransition, InvalidSpec, MissingInput
from .model import (
    TRANSITIONS,
    ActivityState,
    AgentDescription,
    DataRef,
    ErrorRecord,
    ExecutionId,
    ExecutionStatus,
    Outcome,
    WorkflowNode,
    WorkflowSpec,
    expand,
    validate_spec,
)

__all__ = [
    "TRANSITIONS",
    "ActivityState",
    "Executor",
    "InterruptRequested",
    "Run",
    "SuspendRequested",
    "continue_execution",
    "execute",
    "fail",
    "interrupt",
    "plan",
    "resume",
    "suspend",
]

log = logging.getLogger(__name__)

EXECUTOR_FAULT = "executor-fault"
MISSING_INPUT = "missing-input"


class Executor(Protocol):
    def run(self, node: WorkflowNode, inputs: list[DataRef]) -> Outcome: ...


class SuspendRequested(Exception):
    """Raised by an executor to park its node in Suspended."""


class InterruptRequested(Exception):
    """Raised by an executor to park its node in Interrupted."""


def plan(spec: WorkflowSpec) -> list[str]:
    """Topological order of the expanded spec; ties go to the smallest id."""
    outcome = validate_spec(spec)
    if not outcome.ok:
        raise InvalidSpec(list(outcome.violations))
    flat = expand(spec)
    order = graphs.lexicographic_topo_order(flat.node_ids, flat.edges)
    assert order is not None  # validate_spec rejected cycles
    return order


ProvidedInputs = Mapping[str, Mapping[str, DataRef]]


@dataclass
class Run:
    """Drives one execution task by task. Rebuildable from the store alone."""

    store: ProvenanceStore
    execution_id: ExecutionId
    executor: Executor
    spec: WorkflowSpec

    @classmethod
    def attach(cls, store: ProvenanceStore, execution_id: ExecutionId | str, executor: Executor) -> Run:
        execution_id = ExecutionId.parse(execution_id)
        ex = store.execution(execution_id)
        return cls(store, execution_id, executor, store.expanded_spec(execution_id.item_id, ex.version))

    # -- state -------------------------------------------------------------

    def __post_init__(self) -> None:
        self._order: list[str] | None = None
        self._provided_cache: dict[str, dict[str, DataRef]] | None = None

    @property
    def state(self) -> ExecutionState:
        return self.store.execution(self.execution_id)

    def _provided(self) -> dict[str, dict[str, DataRef]]:
        if self._provided_cache is None:
            ev = self.store.events(self.execution_id.item_id)[self.state.started_seq]
            raw = ev.detail.get("provided") or {}
            self._provided_cache = {
                node: {name: DataRef.from_dict(d, name) for name, d in refs.items()} for node, refs in raw.items()
            }
        return self._provided_cache

    def order(self) -> list[str]:
        if self._order is None:
            members = self.state.states
            self._order = [n for n in plan(self.spec) if n in members]
        return self._order

    def ready(self) -> list[str]:
        ex = self.state
        out = []
        for node in self.order():
            if ex.states[node] is not ActivityState.WAITING:
                continue
            preds = [p for p in self.spec.predecessors(node) if p in ex.states]
            if all(ex.states[p] is ActivityState.COMPLETED for p in preds):
                out.append(node)
        return out

    def resolve_inputs(self, node: str) -> tuple[list[DataRef], list[str], list[str]]:
        """Return (inputs, missing names, names with competing producers)."""
        ex = self.state
        wn = self.spec.node(node)
        provided = self._provided().get(node, {})
        producers = [p for p in self.order() if p in self.spec.predecessors(node)]
        inputs: list[DataRef] = []
        missing: list[str] = []
        conflicts: list[str] = []
        outputs_by_producer: dict[str, dict[str, DataRef]] = {}
        for p in producers:
            outcome = self.store.outcome(self.execution_id, p) if ex.states[p] is ActivityState.COMPLETED else None
            outputs_by_producer[p] = {d.name: d for d in outcome.outputs} if outcome else {}
        for name in wn.declared_inputs:
            hits = [outputs_by_producer[p][name] for p in producers if name in outputs_by_producer[p]]
            if hits:
                if len(hits) > 1:
                    conflicts.append(name)
                inputs.append(hits[0])
            elif name in provided:
                inputs.append(provided[name])
            else:
                missing.append(name)
        return inputs, missing, conflicts

    # -- stepping ---------------------------------------------------------------

    def _invoke(self, node: str, inputs: list[DataRef]) -> None:
        wn = self.spec.node(node)
        try:
            outcome = self.executor.run(wn, list(inputs))
        except SuspendRequested:
            self.store.record_transition(self.execution_id, node, ActivityState.SUSPENDED)
            return
        except InterruptRequested:
            self.store.record_transition(self.execution_id, node, ActivityState.INTERRUPTED)
            return
        except Exception as exc:  # executor faults become recorded failures
            log.warning("executor fault at %s: %r", node, exc)
            outcome = Outcome(node, (), "", ErrorRecord(EXECUTOR_FAULT, f"{type(exc).__name__}: {exc}"))
        if not isinstance(outcome, Outcome):
            outcome = Outcome(node, (), "", ErrorRecord(EXECUTOR_FAULT, f"executor returned {type(outcome).__name__}"))
        if outcome.node != node:
            outcome = Outcome(node, outcome.outputs, outcome.log_text, outcome.error)
        to = ActivityState.FAILED if outcome.error is not None else ActivityState.COMPLETED
        self.store.record_transition(self.execution_id, node, to, outcome)

    def start(self, node: str) -> None:
        inputs, missing, conflicts = self.resolve_inputs(node)
        detail = {"routing_conflicts": conflicts} if conflicts else None
        if conflicts:
            log.warning("node %s: several predecessors emit %s; using the earliest in plan order", node, conflicts)
        self.store.record_transition(self.execution_id, node, ActivityState.STARTED, inputs=inputs, detail=detail)
        if missing:
            err = ErrorRecord(MISSING_INPUT, f"no producer for inputs {','.join(missing)}")
            self.store.record_transition(self.execution_id, node, ActivityState.FAILED, Outcome(node, (), "", err))
            return
        self._invoke(node, inputs)

    def step(self) -> str | None:
        ready = self.ready()
        if not ready:
            return None
        self.start(ready[0])
        return ready[0]

    def parked(self) -> list[str]:
        return [
            n
            for n, s in self.state.states.items()
            if s in (ActivityState.SUSPENDED, ActivityState.INTERRUPTED, ActivityState.STARTED)
        ]

    def run_to_end(self) -> ExecutionId:
        while self.step() is not None:
            pass
        if not self.parked() and self.state.is_open:
            self.finish()
        return self.execution_id

    def finish(self, status: ExecutionStatus | None = None) -> None:
        if status is None:
            done = all(s is ActivityState.COMPLETED for s in self.state.states.values())
            status = ExecutionStatus.SUCCEEDED if done else ExecutionStatus.FAILED
        self.store.end_execution(self.execution_id, status)

    # -- interventions ----------------------------------------------------------------

    def suspend(self, node: str) -> None:
        suspend(self.store, self.execution_id, node)

    def interrupt(self, node: str) -> None:
        interrupt(self.store, self.execution_id, node)

    def resume(self, node: str) -> None:
        current = self.state.states.get(node)
        if current not in (ActivityState.SUSPENDED, ActivityState.INTERRUPTED):
            raise IllegalTransition(node, current, ActivityState.STARTED, "only Suspended or Interrupted nodes resume")
        inputs = self.state.inputs.get(node, [])
        self.store.record_transition(self.execution_id, node, ActivityState.STARTED, inputs=inputs)
        self._invoke(node, inputs)


def _static_input_check(spec: WorkflowSpec, nodes: Iterable[str], provided: ProvidedInputs) -> None:
    in_run = set(nodes)
    for node in nodes:
        wn = spec.node(node)
        available = set(provided.get(node, {}))
        for p in spec.predecessors(node):
            if p in in_run:
                available.update(spec.node(p).declared_outputs)
        lacking = [name for name in wn.declared_inputs if name not in available]
        if lacking:
            where = "head" if node == spec.head else "node"
            raise MissingInput(f"{where} {node} has no source for declared inputs {','.join(lacking)}")


def start_execution(
    store: ProvenanceStore,
    item_id: str,
    version: int,
    executor: Executor,
    *,
    provided: ProvidedInputs | None = None,
    scope: Iterable[str] | None = None,
    replay_of: ExecutionId | str | None = None,
    agent: AgentDescription | None = None,
) -> Run:
    """Validate inputs statically, then open an execution without running it."""
    spec = store.expanded_spec(item_id, version)
    order = plan(spec)
    nodes = order if scope is None else [n for n in order if n in set(scope)]
    provided = {n: dict(refs) for n, refs in (provided or {}).items()}
    _static_input_check(spec, nodes, provided)
    wire = {
        node: {name: ref.without_payload().to_dict() for name, ref in sorted(refs.items())}
        for node, refs in sorted(provided.items())
    }
    exec_id = store.begin_execution(item_id, version, agent, scope=scope, replay_of=replay_of, provided=wire)
    return Run(store, exec_id, executor, spec)


def execute(
    store: ProvenanceStore,
    item_id: str,
    version: int,
    executor: Executor,
    input_bindings: Mapping[str, DataRef] | None = None,
    *,
    agent: AgentDescription | None = None,
) -> ExecutionId:
    """Run every node of ``version`` serially in plan order.

    A failed node blocks its dependents (they stay Waiting) while
    independent branches keep running; the execution then ends Failed.
    """
    spec = store.expanded_spec(item_id, version)
    bindings = dict(input_bindings or {})
    run = start_execution(store, item_id, version, executor, provided={spec.head: bindings}, agent=agent)
    return run.run_to_end()


def continue_execution(store: ProvenanceStore, execution_id: ExecutionId | str, executor: Executor) -> ExecutionId:
    return Run.attach(store, execution_id, executor).run_to_end()


def suspend(store: ProvenanceStore, execution_id: ExecutionId | str, node: str) -> None:
    store.record_transition(execution_id, node, ActivityState.SUSPENDED)


def interrupt(store: ProvenanceStore, execution_id: ExecutionId | str, node: str) -> None:
    store.record_transition(execution_id, node, ActivityState.INTERRUPTED)


def resume(store: ProvenanceStore, execution_id: ExecutionId | str, node: str, executor: Executor) -> None:
    """Move a parked node back to Started and re-invoke the executor on it."""
    Run.attach(store, execution_id, executor).resume(node)


def fail(store: ProvenanceStore, execution_id: ExecutionId | str, node: str, error: ErrorRecord) -> None:
    store.record_transition(execution_id, node, ActivityState.FAILED, Outcome(node, (), "", error))

"""Read side: pipelines, sub-pipelines, executions, errors, annotations, comparisons.

Every function here reads only the folded event log plus the Workflow and
Outcome records it points at.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime
from typing import Any

from . import graphs
from .capture import ExecutionState, ProvenanceStore
from .errors import ExecutionOpen, UnknownNode
from .model import (
    Annotation,
    ErrorRecord,
    ExecutionId,
    Outcome,
    WorkflowNode,
    WorkflowSpec,
    format_ts,
    spec_fingerprint,
)

OPEN = "Open"


def get_pipeline(store: ProvenanceStore, item_id: str, version: int) -> WorkflowSpec:
    return store.spec(item_id, version)


@dataclass(frozen=True)
class PipelineFragment:
    item_id: str
    version: int
    nodes: tuple[WorkflowNode, ...]
    edges: tuple[tuple[str, str], ...]
    head: str | None
    entry_nodes: tuple[str, ...]

    @property
    def node_ids(self) -> list[str]:
        return [n.id for n in self.nodes]

    def to_dict(self) -> dict[str, Any]:
        return {
            "item_id": self.item_id,
            "version": self.version,
            "head": self.head,
            "entry_nodes": list(self.entry_nodes),
            "nodes": [n.to_dict() for n in self.nodes],
            "edges": [list(e) for e in self.edges],
        }


def get_subpipeline(store: ProvenanceStore, item_id: str, version: int, nodes: set[str] | list[str]) -> PipelineFragment:
    """Requested nodes plus all their ancestors, over the expanded spec."""
    spec = store.expanded_spec(item_id, version)
    known = set(spec.node_ids)
    wanted = set(nodes)
    unknown = sorted(wanted - known)
    if unknown:
        raise UnknownNode(f"unknown nodes {','.join(unknown)} in {item_id} v{version}")
    closure = set(wanted)
    for n in wanted:
        closure |= graphs.ancestors(n, spec.edges)
    edges = tuple(e for e in spec.edges if e[0] in closure and e[1] in closure)
    entries = tuple(sorted(n for n in closure if not any(b == n for _, b in edges)))
    return PipelineFragment(
        item_id,
        int(version),
        tuple(n for n in spec.nodes if n.id in closure),
        edges,
        spec.head if spec.head in closure else None,
        entries,
    )


@dataclass(frozen=True)
class ExecutionSummary:
    execution_id: ExecutionId
    version: int
    status: str
    started_at: datetime
    finished_at: datetime | None
    replay_of: ExecutionId | None

    @property
    def is_open(self) -> bool:
        return self.status == OPEN

    def to_dict(self) -> dict[str, Any]:
        return {
            "execution_id": str(self.execution_id),
            "version": self.version,
            "status": self.status,
            "started_at": format_ts(self.started_at),
            "finished_at": None if self.finished_at is None else format_ts(self.finished_at),
            "replay_of": None if self.replay_of is None else str(self.replay_of),
        }


def _summary(ex: ExecutionState) -> ExecutionSummary:
    return ExecutionSummary(
        ex.execution_id,
        ex.version,
        OPEN if ex.status is None else ex.status.value,
        ex.started_at,
        ex.finished_at,
        ex.replay_of,
    )


def execution_summary(store: ProvenanceStore, execution_id: ExecutionId | str) -> ExecutionSummary:
    return _summary(store.execution(execution_id))


def list_executions(store: ProvenanceStore, item_id: str, include_open: bool = False) -> list[ExecutionSummary]:
    state = store.state(item_id)
    rows = [_summary(state.executions[k]) for k in sorted(state.executions)]
    return [r for r in rows if include_open or not r.is_open]


@dataclass(frozen=True)
class ErrorRow:
    execution_id: ExecutionId
    node: str
    error: ErrorRecord
    timestamp: datetime
    seq: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "execution_id": str(self.execution_id),
            "node": self.node,
            "code": self.error.code,
            "message": self.error.message,
            "timestamp": format_ts(self.timestamp),
            "seq": self.seq,
        }


def get_errors(store: ProvenanceStore, item_id: str, execution: ExecutionId | str | None = None) -> list[ErrorRow]:
    state = store.state(item_id)
    if execution is not None:
        wanted = [store.execution(ExecutionId.parse(execution))]
    else:
        wanted = [state.executions[k] for k in sorted(state.executions)]
    rows = []
    for ex in wanted:
        for seq, node, _ref, ts in ex.failures:
            outcome = store.outcome(ex.execution_id, node)
            err = outcome.error if outcome is not None and outcome.error is not None else ErrorRecord("unknown")
            rows.append(ErrorRow(ex.execution_id, node, err, ts, seq))
    return sorted(rows, key=lambda r: r.seq)


def search_annotations(store: ProvenanceStore, text_query: str, scope: str | None = None) -> list[Annotation]:
    """Case-insensitive substring search, ordered by item then event seq."""
    needle = text_query.casefold()
    items = [scope] if scope is not None else store.item_ids()
    hits = []
    for item_id in sorted(items):
        for ann in store.state(item_id).annotations:
            if needle in ann.text.casefold():
                hits.append(ann)
    return hits


ONLY_A = "only-in-a"
ONLY_B = "only-in-b"
STATE_DIFFERS = "state-differs"
HASH_DIFFERS = "output-hash-differs"
HASH_EQUAL = "output-hash-equal"

_SWAP = {ONLY_A: ONLY_B, ONLY_B: ONLY_A}


@dataclass(frozen=True)
class NodeComparison:
    node: str
    category: str
    state_a: str | None
    state_b: str | None
    outputs_a: dict[str, str]
    outputs_b: dict[str, str]

    def swapped(self) -> NodeComparison:
        return NodeComparison(
            self.node, _SWAP.get(self.category, self.category), self.state_b, self.state_a, self.outputs_b, self.outputs_a
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "node": self.node,
            "category": self.category,
            "state_a": self.state_a,
            "state_b": self.state_b,
            "outputs_a": dict(self.outputs_a),
            "outputs_b": dict(self.outputs_b),
        }


@dataclass(frozen=True)
class ComparisonReport:
    a: ExecutionId
    b: ExecutionId
    fingerprint_equal: bool
    nodes: tuple[NodeComparison, ...]
    shared_artifacts: tuple[str, ...]

    def by_node(self) -> dict[str, str]:
        return {n.node: n.category for n in self.nodes}

    def swapped(self) -> ComparisonReport:
        return ComparisonReport(
            self.b, self.a, self.fingerprint_equal, tuple(n.swapped() for n in self.nodes), self.shared_artifacts
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "a": str(self.a),
            "b": str(self.b),
            "fingerprint_equal": self.fingerprint_equal,
            "nodes": [n.to_dict() for n in self.nodes],
            "shared_artifacts": list(self.shared_artifacts),
        }


def _artifact_hashes(store: ProvenanceStore, ex: ExecutionState) -> set[str]:
    found = {d.content_hash for refs in ex.inputs.values() for d in refs}
    for node in ex.outcome_refs:
        outcome = store.outcome(ex.execution_id, node)
        if outcome is not None:
            found |= {d.content_hash for d in outcome.outputs}
    return found


def _outputs(outcome: Outcome | None) -> dict[str, str]:
    return {} if outcome is None else outcome.output_hashes()


def compare_executions(store: ProvenanceStore, a: ExecutionId | str, b: ExecutionId | str) -> ComparisonReport:
    """Node-by-node comparison of two finished executions by output hash."""
    a, b = ExecutionId.parse(a), ExecutionId.parse(b)
    ex_a, ex_b = store.execution(a), store.execution(b)
    for ex in (ex_a, ex_b):
        if ex.is_open:
            raise ExecutionOpen(f"execution {ex.execution_id} is still open")
    fp_equal = spec_fingerprint(store.spec(a.item_id, ex_a.version)) == spec_fingerprint(
        store.spec(b.item_id, ex_b.version)
    )
    rows = []
    for node in sorted(set(ex_a.states) | set(ex_b.states)):
        sa, sb = ex_a.states.get(node), ex_b.states.get(node)
        oa = _outputs(store.outcome(a, node)) if sa is not None else {}
        ob = _outputs(store.outcome(b, node)) if sb is not None else {}
        if sb is None:
            category = ONLY_A
        elif sa is None:
            category = ONLY_B
        elif sa is not sb:
            category = STATE_DIFFERS
        elif oa != ob:
            category = HASH_DIFFERS
        else:
            category = HASH_EQUAL
        rows.append(
            NodeComparison(node, category, None if sa is None else sa.value, None if sb is None else sb.value, oa, ob)
        )
    shared = tuple(sorted(_artifact_hashes(store, ex_a) & _artifact_hashes(store, ex_b)))
    return ComparisonReport(a, b, fp_equal, tuple(rows), shared)

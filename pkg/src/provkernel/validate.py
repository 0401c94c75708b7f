"""Blueprint validation of specs and offline/online validation of results."""

from __future__ import annotations

import enum
import json
from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Any

from .capture import ProvenanceStore
from .engine import Executor
from .errors import ExecutionOpen, InvalidSpec
from .model import (
    ActivityState,
    ExecutionId,
    Violation,
    WorkflowSpec,
    canonical_json,
    expand,
    require_valid,
    spec_fingerprint,
)
from .reconstruct import NodeBindings, replay


class Mode(str, enum.Enum):
    BLUEPRINT = "Blueprint"
    OFFLINE = "Offline"
    ONLINE = "Online"


class FindingKind(str, enum.Enum):
    MATCH = "Match"
    MISMATCH = "Mismatch"
    MISSING = "Missing"
    EXTRA = "Extra"


class Verdict(str, enum.Enum):
    PASS = "Pass"
    FAIL = "Fail"


FAILING = (FindingKind.MISMATCH, FindingKind.MISSING)


@dataclass(frozen=True)
class ReferenceDataset:
    """Expected output hashes per node, as ``(param, hash)`` pairs."""

    name: str
    expected: Mapping[str, tuple[tuple[str, str], ...]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        norm = {}
        for node, pairs in self.expected.items():
            if not node:
                raise ValueError("reference node ids must be non-empty")
            items = tuple(sorted((str(p), str(h)) for p, h in pairs))
            if any(not p for p, _ in items):
                raise ValueError(f"reference params of {node} must be non-empty")
            norm[str(node)] = items
        object.__setattr__(self, "expected", dict(sorted(norm.items())))

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "expected": {n: [{"param": p, "hash": h} for p, h in pairs] for n, pairs in self.expected.items()},
        }

    def to_json(self) -> bytes:
        return canonical_json(self.to_dict())

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ReferenceDataset:
        try:
            expected = {
                node: tuple((e["param"], e["hash"]) for e in entries) for node, entries in data["expected"].items()
            }
            return cls(str(data["name"]), expected)
        except (KeyError, TypeError, AttributeError, ValueError) as exc:
            raise InvalidSpec([Violation("bad-reference", f"malformed reference dataset: {exc}")]) from None

    @classmethod
    def from_json(cls, data: bytes | str) -> ReferenceDataset:
        try:
            raw = json.loads(data)
        except ValueError as exc:
            raise InvalidSpec([Violation("bad-reference", f"reference dataset is not JSON: {exc}")]) from None
        if not isinstance(raw, dict):
            raise InvalidSpec([Violation("bad-reference", "reference dataset must be a JSON object")])
        return cls.from_dict(raw)

    @classmethod
    def from_execution(cls, store: ProvenanceStore, execution_id: ExecutionId | str, name: str = "") -> ReferenceDataset:
        """Every Completed node's output hashes from a recorded execution."""
        ex = store.execution(execution_id)
        expected = {}
        for node in sorted(ex.states):
            outcome = store.outcome(ex.execution_id, node)
            if ex.states[node] is ActivityState.COMPLETED and outcome is not None:
                expected[node] = tuple(outcome.output_hashes().items())
        return cls(name or f"ref-{ex.execution_id}", expected)


@dataclass(frozen=True)
class Finding:
    location: str
    kind: FindingKind
    detail: str = ""
    node: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {"location": self.location, "kind": self.kind.value, "detail": self.detail, "node": self.node}


@dataclass(frozen=True)
class ValidationReport:
    subject: str
    mode: Mode
    findings: tuple[Finding, ...]
    verdict: Verdict

    def failing(self) -> list[Finding]:
        return [f for f in self.findings if f.kind in FAILING]

    def failing_nodes(self) -> set[str]:
        return {f.node for f in self.failing() if f.node is not None}

    def to_dict(self) -> dict[str, Any]:
        return {
            "subject": self.subject,
            "mode": self.mode.value,
            "verdict": self.verdict.value,
            "findings": [f.to_dict() for f in self.findings],
        }


def _result_report(subject: str, mode: Mode, findings: list[Finding]) -> ValidationReport:
    verdict = Verdict.FAIL if any(f.kind in FAILING for f in findings) else Verdict.PASS
    return ValidationReport(subject, mode, tuple(findings), verdict)


# ---------------------------------------------------------------------------
# Blueprint
# ---------------------------------------------------------------------------


def _diff_value(findings: list[Finding], location: str, node: str | None, expected: Any, found: Any) -> None:
    if expected != found:
        findings.append(Finding(location, FindingKind.MISMATCH, f"expected {expected!r}, found {found!r}", node))


def validate_blueprint(spec: WorkflowSpec, blueprint: WorkflowSpec) -> ValidationReport:
    """Node-by-node comparison of expanded specs, matched by node id.

    Any difference, including extra nodes or edges, fails the check, so the
    verdict agrees with fingerprint equality of the expanded specs.
    """
    require_valid(spec)
    require_valid(blueprint)
    s, b = expand(spec), expand(blueprint)
    findings: list[Finding] = []
    for attr in ("spec_id", "name", "head"):
        _diff_value(findings, f"spec/{attr}", None, getattr(b, attr), getattr(s, attr))
    s_nodes, b_nodes = s.node_map, b.node_map
    for nid in sorted(set(s_nodes) | set(b_nodes)):
        if nid not in s_nodes:
            findings.append(Finding(f"node:{nid}", FindingKind.MISSING, "node absent from spec", nid))
            continue
        if nid not in b_nodes:
            findings.append(Finding(f"node:{nid}", FindingKind.EXTRA, "node absent from blueprint", nid))
            continue
        sn, bn = s_nodes[nid], b_nodes[nid]
        for attr in ("kind", "process_ref", "children", "declared_inputs", "declared_outputs"):
            _diff_value(findings, f"node:{nid}/{attr}", nid, getattr(bn, attr), getattr(sn, attr))
        for key in sorted(set(sn.metadata) | set(bn.metadata)):
            loc = f"node:{nid}/metadata/{key}"
            if key not in sn.metadata:
                findings.append(Finding(loc, FindingKind.MISSING, f"expected {bn.metadata[key]!r}", nid))
            elif key not in bn.metadata:
                findings.append(Finding(loc, FindingKind.EXTRA, f"found {sn.metadata[key]!r}", nid))
            else:
                _diff_value(findings, loc, nid, bn.metadata[key], sn.metadata[key])
    s_edges, b_edges = set(s.edges), set(b.edges)
    for a, c in sorted(b_edges - s_edges):
        findings.append(Finding(f"edge:{a}->{c}", FindingKind.MISSING, "edge absent from spec", None))
    for a, c in sorted(s_edges - b_edges):
        findings.append(Finding(f"edge:{a}->{c}", FindingKind.EXTRA, "edge absent from blueprint", None))
    if not findings and spec_fingerprint(s) != spec_fingerprint(b):
        findings.append(Finding("spec", FindingKind.MISMATCH, "canonical forms differ", None))
    verdict = Verdict.PASS if not findings else Verdict.FAIL
    subject = f"{spec.spec_id}@{spec.version}" if spec.version is not None else spec.spec_id
    return ValidationReport(subject, Mode.BLUEPRINT, tuple(findings), verdict)


# ---------------------------------------------------------------------------
# Results against a reference dataset
# ---------------------------------------------------------------------------


def _result_findings(store: ProvenanceStore, execution_id: ExecutionId, ref: ReferenceDataset) -> list[Finding]:
    ex = store.execution(execution_id)
    if ex.is_open:
        raise ExecutionOpen(f"execution {execution_id} is still open")
    findings: list[Finding] = []
    for node, pairs in ref.expected.items():
        outcome = store.outcome(execution_id, node) if ex.states.get(node) is ActivityState.COMPLETED else None
        produced = outcome.output_hashes() if outcome is not None else {}
        state = ex.states.get(node)
        why = "node not in execution" if state is None else f"node ended {state.value}"
        for param, expected in pairs:
            loc = f"{node}/{param}"
            if param not in produced:
                findings.append(Finding(loc, FindingKind.MISSING, why if outcome is None else "param not produced", node))
            elif produced[param] == expected:
                findings.append(Finding(loc, FindingKind.MATCH, expected, node))
            else:
                findings.append(Finding(loc, FindingKind.MISMATCH, f"expected {expected}, found {produced[param]}", node))
        listed = {p for p, _ in pairs}
        for param in sorted(set(produced) - listed):
            findings.append(Finding(f"{node}/{param}", FindingKind.EXTRA, produced[param], node))
    return findings


def validate_offline(store: ProvenanceStore, execution_id: ExecutionId | str, ref: ReferenceDataset) -> ValidationReport:
    """Compare a finished execution's recorded hashes with ``ref``. Read-only."""
    execution_id = ExecutionId.parse(execution_id)
    return _result_report(str(execution_id), Mode.OFFLINE, _result_findings(store, execution_id, ref))


def validate_online(
    store: ProvenanceStore,
    item_id: str,
    version: int,
    executor: Executor,
    ref: ReferenceDataset,
    *,
    bindings: NodeBindings | None = None,
    source: ExecutionId | str | None = None,
) -> tuple[ExecutionId, ValidationReport]:
    """Re-execute the whole version, then validate the fresh execution."""
    execution_id = replay(store, item_id, version, executor, bindings=bindings, source=source)
    report = _result_report(str(execution_id), Mode.ONLINE, _result_findings(store, execution_id, ref))
    store.record_validation(
        item_id,
        {"mode": report.mode.value, "reference": ref.name, "verdict": report.verdict.value},
        execution_id,
    )
    return execution_id, report


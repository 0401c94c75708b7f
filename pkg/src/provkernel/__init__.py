"""Workflow provenance kernel built on an append-only event log."""

from __future__ import annotations

from .capture import ProvenanceStore
from .engine import execute, plan
from .model import (
    ActivityState,
    DataRef,
    Descriptions,
    ExecutionId,
    NodeKind,
    Outcome,
    WorkflowNode,
    WorkflowSpec,
    expand,
    simple_spec,
    spec_fingerprint,
    validate_spec,
)
from .opm import export_xml, import_xml, to_opm
from .query import compare_executions, get_errors, get_pipeline, get_subpipeline, list_executions, search_annotations
from .reconstruct import Edit, derive, replay
from .storage import FileBackend, MemoryBackend
from .validate import ReferenceDataset, validate_blueprint, validate_offline, validate_online

__all__ = [
    "ActivityState",
    "DataRef",
    "Descriptions",
    "Edit",
    "ExecutionId",
    "FileBackend",
    "MemoryBackend",
    "NodeKind",
    "Outcome",
    "ProvenanceStore",
    "ReferenceDataset",
    "WorkflowNode",
    "WorkflowSpec",
    "compare_executions",
    "derive",
    "execute",
    "expand",
    "export_xml",
    "get_errors",
    "get_pipeline",
    "get_subpipeline",
    "import_xml",
    "list_executions",
    "plan",
    "replay",
    "search_annotations",
    "simple_spec",
    "spec_fingerprint",
    "to_opm",
    "validate_blueprint",
    "validate_offline",
    "validate_online",
    "validate_spec",
]

"""Deterministic JSON rendering shared by the CLI and the HTTP service."""

from __future__ import annotations

import enum
from collections.abc import Mapping
from datetime import datetime
from typing import Any

from .model import ExecutionId, canonical_json, format_ts


def to_jsonable(obj: Any) -> Any:
    if hasattr(obj, "to_dict"):
        return to_jsonable(obj.to_dict())
    if isinstance(obj, Mapping):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, (set, frozenset)):
        return sorted(to_jsonable(v) for v in obj)
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, datetime):
        return format_ts(obj)
    if isinstance(obj, ExecutionId):
        return str(obj)
    return obj


def render(obj: Any) -> bytes:
    return canonical_json(to_jsonable(obj))

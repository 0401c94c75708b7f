"""Executors addressable by name, gated by a whitelist of glob patterns.

Names look like ``mock:ok``, ``mock:fail:<node>``, ``mock:drift:<node>:<tag>``,
``mock:inputs``, ``mock:raise:<node>`` and ``subprocess:<path>``.
"""

from __future__ import annotations

import fnmatch
import json
import subprocess
from collections.abc import Sequence

from .engine import Executor
from .errors import ExecutorNotAllowed
from .model import DataRef, ErrorRecord, Outcome, WorkflowNode, canonical_json
from .testharness import MockExecutor, parse_mock

DEFAULT_WHITELIST = ("mock:*",)


class SubprocessExecutor:
    """Runs an external program once per node.

    The program reads ``{"node": ..., "inputs": [...]}`` as JSON on stdin and
    writes ``{"outputs": [{"name", "inline_payload"}], "log": str,
    "error": {"code", "message"} | null}`` on stdout. Payloads are base64.
    """

    def __init__(self, path: str, *, timeout: float = 300.0) -> None:
        self.path = path
        self.timeout = timeout

    def run(self, node: WorkflowNode, inputs: list[DataRef]) -> Outcome:
        request = canonical_json({"node": node.to_dict(), "inputs": [d.to_dict() for d in inputs]})
        try:
            proc = subprocess.run(
                [self.path], input=request, capture_output=True, timeout=self.timeout, check=False
            )
        except (OSError, subprocess.TimeoutExpired) as exc:
            return Outcome(node.id, (), "", ErrorRecord("subprocess-error", str(exc)))
        stderr = proc.stderr.decode("utf-8", "replace")
        if proc.returncode != 0:
            return Outcome(node.id, (), stderr, ErrorRecord("subprocess-exit", f"exit status {proc.returncode}"))
        try:
            reply = json.loads(proc.stdout)
            outputs = tuple(DataRef.from_dict(d) for d in reply.get("outputs", ()))
            err = reply.get("error")
            error = None if err is None else ErrorRecord(str(err["code"]), str(err.get("message", "")))
        except (ValueError, KeyError, TypeError, AttributeError) as exc:
            return Outcome(node.id, (), stderr, ErrorRecord("subprocess-protocol", str(exc)))
        return Outcome(node.id, outputs, str(reply.get("log", stderr)), error)


def is_allowed(name: str, whitelist: Sequence[str] = DEFAULT_WHITELIST) -> bool:
    return any(fnmatch.fnmatchcase(name, pattern) for pattern in whitelist)


def resolve_executor(name: str, whitelist: Sequence[str] = DEFAULT_WHITELIST) -> Executor:
    if not is_allowed(name, whitelist):
        raise ExecutorNotAllowed(f"executor {name!r} is not whitelisted")
    scheme, _, rest = name.partition(":")
    if scheme == "mock":
        try:
            return MockExecutor(parse_mock(rest))
        except ValueError as exc:
            raise ExecutorNotAllowed(str(exc)) from None
    if scheme == "subprocess" and rest:
        return SubprocessExecutor(rest)
    raise ExecutorNotAllowed(f"unknown executor {name!r}")

from __future__ import annotations

import pytest

from helpers import diamond_spec, head_input, make_store
from provkernel.capture import ProvenanceStore
from provkernel.model import DataRef
from provkernel.storage import FileBackend

ACCEPTANCE_RESULTS: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def store() -> ProvenanceStore:
    return make_store()


@pytest.fixture
def file_store(tmp_path) -> ProvenanceStore:
    return make_store(FileBackend(tmp_path / "store"))


@pytest.fixture
def diamond():
    return diamond_spec()


@pytest.fixture
def bindings() -> dict[str, DataRef]:
    return head_input()


@pytest.fixture
def acceptance():
    """Record an acceptance criterion outcome for the summary lines."""

    def record(label: str, ok: bool, detail: str = "") -> None:
        ACCEPTANCE_RESULTS[label] = (ok, detail)

    return record


def pytest_terminal_summary(terminalreporter) -> None:
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[label]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {label} {detail}".rstrip())

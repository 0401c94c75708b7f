"""Exception hierarchy shared by every provkernel module."""

from __future__ import annotations

from typing import Any


class ProvenanceError(Exception):
    """Base class for all domain errors raised by provkernel."""

    @property
    def kind(self) -> str:
        return type(self).__name__

    def to_dict(self) -> dict[str, Any]:
        return {"error": self.kind, "message": str(self)}


# -- model -------------------------------------------------------------------


class InvalidSpec(ProvenanceError):
    def __init__(self, violations: list[Any]) -> None:
        self.violations = list(violations)
        first = self.violations[0].message if self.violations else "invalid spec"
        super().__init__(first)

    def to_dict(self) -> dict[str, Any]:
        out = super().to_dict()
        out["violations"] = [v.to_dict() for v in self.violations]
        return out


class CompositeCycle(ProvenanceError):
    pass


# -- lookups -----------------------------------------------------------------


class UnknownItem(ProvenanceError):
    pass


class UnknownVersion(ProvenanceError):
    pass


class UnknownNode(ProvenanceError):
    pass


class UnknownExecution(ProvenanceError):
    pass


class UnknownArtifact(ProvenanceError):
    pass


# -- capture / engine ----------------------------------------------------------


class IllegalTransition(ProvenanceError):
    def __init__(self, node: str, from_state: Any, to_state: Any, reason: str = "") -> None:
        self.node = node
        self.from_state = from_state
        self.to_state = to_state
        label_from = getattr(from_state, "value", from_state)
        label_to = getattr(to_state, "value", to_state)
        msg = f"illegal transition {label_from}->{label_to} at node {node}"
        if reason:
            msg = f"{msg}: {reason}"
        super().__init__(msg)


class MissingOutcome(ProvenanceError):
    pass


class OutcomeMismatch(ProvenanceError):
    """Outcome error presence disagrees with the target state."""


class AlreadyFinished(ProvenanceError):
    pass


class StatusMismatch(ProvenanceError):
    pass


class ExecutionOpen(ProvenanceError):
    pass


class EmptyExecution(ProvenanceError):
    pass


class MissingInput(ProvenanceError):
    pass


class UnresolvableInputs(ProvenanceError):
    pass


class InvalidAnnotation(ProvenanceError):
    pass


class ExecutorNotAllowed(ProvenanceError):
    pass


# -- storage -------------------------------------------------------------------


class StorageError(ProvenanceError):
    pass


class NotFound(StorageError):
    pass


class ImmutableOverwrite(StorageError):
    pass


class BackendUnavailable(StorageError):
    pass


class BadConfig(StorageError):
    pass


class BadPath(StorageError, ValueError):
    pass


# -- opm -----------------------------------------------------------------------


class MalformedXml(ProvenanceError):
    pass


class SchemaViolation(ProvenanceError):
    def __init__(self, element: str, message: str) -> None:
        self.element = element
        super().__init__(f"<{element}>: {message}")


class InvalidGraph(ProvenanceError):
    def __init__(self, violations: list[Any]) -> None:
        self.violations = list(violations)
        super().__init__("; ".join(v.message for v in self.violations) or "invalid graph")


# -- harness / service -----------------------------------------------------------


class TooLarge(ProvenanceError):
    pass


class AddressInUse(ProvenanceError):
    pass

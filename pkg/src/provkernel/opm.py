"""Open Provenance Model graphs: build from executions, validate, XML interchange.

Edges point from effect to cause, as in OPM: ``used`` goes process to
artifact, ``wasGeneratedBy`` artifact to process, and so on. In the XML
form every dependency carries an ``effect`` and a ``cause`` reference.
"""

from __future__ import annotations

import enum
import xml.etree.ElementTree as ET
from collections import defaultdict
from collections.abc import Iterable
from dataclasses import dataclass, field

from . import graphs
from .capture import ProvenanceStore
from .errors import EmptyExecution, InvalidGraph, MalformedXml, SchemaViolation, UnknownArtifact
from .model import ExecutionId, ValidationOutcome, Violation


class EdgeKind(str, enum.Enum):
    USED = "used"
    WAS_GENERATED_BY = "wasGeneratedBy"
    WAS_CONTROLLED_BY = "wasControlledBy"
    WAS_TRIGGERED_BY = "wasTriggeredBy"
    WAS_DERIVED_FROM = "wasDerivedFrom"


EDGE_ORDER = list(EdgeKind)

# (effect type, cause type)
ENDPOINT_TYPES: dict[EdgeKind, tuple[str, str]] = {
    EdgeKind.USED: ("process", "artifact"),
    EdgeKind.WAS_GENERATED_BY: ("artifact", "process"),
    EdgeKind.WAS_CONTROLLED_BY: ("process", "agent"),
    EdgeKind.WAS_TRIGGERED_BY: ("process", "process"),
    EdgeKind.WAS_DERIVED_FROM: ("artifact", "artifact"),
}
ROLE_REQUIRED = frozenset({EdgeKind.USED, EdgeKind.WAS_GENERATED_BY, EdgeKind.WAS_CONTROLLED_BY})
CAUSAL_KINDS = frozenset({EdgeKind.USED, EdgeKind.WAS_GENERATED_BY, EdgeKind.WAS_TRIGGERED_BY})
LINEAGE_KINDS = frozenset({EdgeKind.WAS_GENERATED_BY, EdgeKind.USED, EdgeKind.WAS_DERIVED_FROM})

CONTROL_ROLE = "executor"


@dataclass(frozen=True)
class OpmArtifact:
    id: str
    value_hash: str
    uri: str | None = None
    accounts: frozenset[str] = frozenset()


@dataclass(frozen=True)
class OpmProcess:
    id: str
    label: str = ""
    accounts: frozenset[str] = frozenset()


@dataclass(frozen=True)
class OpmAgent:
    id: str
    label: str = ""
    accounts: frozenset[str] = frozenset()


EdgeKey = tuple[EdgeKind, str, str, "str | None"]


@dataclass(frozen=True)
class OpmEdge:
    kind: EdgeKind
    source: str
    target: str
    role: str | None = None
    accounts: frozenset[str] = frozenset()

    @property
    def key(self) -> EdgeKey:
        return (self.kind, self.source, self.target, self.role)


def _sort_key(edge: OpmEdge) -> tuple[int, str, str, str]:
    return (EDGE_ORDER.index(edge.kind), edge.source, edge.target, edge.role or "")


@dataclass
class OpmGraph:
    artifacts: dict[str, OpmArtifact] = field(default_factory=dict)
    processes: dict[str, OpmProcess] = field(default_factory=dict)
    agents: dict[str, OpmAgent] = field(default_factory=dict)
    edges: dict[EdgeKey, OpmEdge] = field(default_factory=dict)
    accounts: set[str] = field(default_factory=set)

    def add_artifact(self, a: OpmArtifact) -> None:
        old = self.artifacts.get(a.id)
        if old is not None:
            a = OpmArtifact(a.id, old.value_hash, old.uri, old.accounts | a.accounts)
        self.artifacts[a.id] = a

    def add_process(self, p: OpmProcess) -> None:
        old = self.processes.get(p.id)
        if old is not None:
            p = OpmProcess(p.id, old.label, old.accounts | p.accounts)
        self.processes[p.id] = p

    def add_agent(self, a: OpmAgent) -> None:
        old = self.agents.get(a.id)
        if old is not None:
            a = OpmAgent(a.id, old.label, old.accounts | a.accounts)
        self.agents[a.id] = a

    def add_edge(self, e: OpmEdge) -> None:
        old = self.edges.get(e.key)
        if old is not None:
            e = OpmEdge(e.kind, e.source, e.target, e.role, old.accounts | e.accounts)
        self.edges[e.key] = e

    def edges_of(self, kind: EdgeKind) -> list[OpmEdge]:
        return sorted((e for e in self.edges.values() if e.kind is kind), key=_sort_key)

    def node_type(self, node_id: str) -> str | None:
        if node_id in self.processes:
            return "process"
        if node_id in self.artifacts:
            return "artifact"
        if node_id in self.agents:
            return "agent"
        return None

    def node_count(self) -> int:
        return len(self.artifacts) + len(self.processes) + len(self.agents)


# ---------------------------------------------------------------------------
# Building from captured executions
# ---------------------------------------------------------------------------


def process_id(execution_id: ExecutionId, node: str) -> str:
    return f"p:{execution_id.run_seq}:{node}"


def artifact_id(content_hash: str) -> str:
    return f"a:{content_hash}"


def to_opm(store: ProvenanceStore, execution_id: ExecutionId | str) -> OpmGraph:
    """One account per execution; artifacts are deduplicated by content hash."""
    execution_id = ExecutionId.parse(execution_id)
    ex = store.execution(execution_id)
    if ex.transitions == 0:
        raise EmptyExecution(f"execution {execution_id} has no recorded transitions")
    spec = store.expanded_spec(execution_id.item_id, ex.version)
    account = str(execution_id)
    acc = frozenset({account})
    g = OpmGraph(accounts={account})
    agent_id = f"ag:{ex.agent.name}"
    g.add_agent(OpmAgent(agent_id, ex.agent.host or ex.agent.name, acc))

    ran = ex.executed_nodes()
    for node in ran:
        pid = process_id(execution_id, node)
        g.add_process(OpmProcess(pid, node, acc))
        g.add_edge(OpmEdge(EdgeKind.WAS_CONTROLLED_BY, pid, agent_id, CONTROL_ROLE, acc))
        inputs = ex.inputs.get(node, [])
        outcome = store.outcome(execution_id, node)
        outputs = list(outcome.outputs) if outcome else []
        for ref in inputs:
            g.add_artifact(OpmArtifact(artifact_id(ref.content_hash), ref.content_hash, ref.uri, acc))
            g.add_edge(OpmEdge(EdgeKind.USED, pid, artifact_id(ref.content_hash), ref.name, acc))
        for ref in outputs:
            aid = artifact_id(ref.content_hash)
            g.add_artifact(OpmArtifact(aid, ref.content_hash, ref.uri, acc))
            g.add_edge(OpmEdge(EdgeKind.WAS_GENERATED_BY, aid, pid, ref.name, acc))
            for src in inputs:
                if src.content_hash != ref.content_hash:
                    g.add_edge(OpmEdge(EdgeKind.WAS_DERIVED_FROM, aid, artifact_id(src.content_hash), None, acc))
    ran_set = set(ran)
    for a, b in spec.edges:
        if a in ran_set and b in ran_set:
            g.add_edge(
                OpmEdge(EdgeKind.WAS_TRIGGERED_BY, process_id(execution_id, b), process_id(execution_id, a), None, acc)
            )
    return g


# ---------------------------------------------------------------------------
# Validation and lineage
# ---------------------------------------------------------------------------


def validate_opm(graph: OpmGraph) -> ValidationOutcome:
    found: list[Violation] = []
    seen: dict[str, str] = {}
    for kind, table in (("process", graph.processes), ("artifact", graph.artifacts), ("agent", graph.agents)):
        for node_id, node in table.items():
            if node.id != node_id:
                found.append(Violation("id-mismatch", f"{kind} keyed {node_id} has id {node.id}", node_id))
            if node_id in seen:
                found.append(Violation("duplicate-id", f"id {node_id} used by {seen[node_id]} and {kind}", node_id))
            seen.setdefault(node_id, kind)
            for acc in sorted(node.accounts - graph.accounts):
                found.append(Violation("unknown-account", f"{kind} {node_id} references unknown account {acc}", node_id))

    per_account: dict[str, list[tuple[str, str]]] = defaultdict(list)
    for edge in sorted(graph.edges.values(), key=_sort_key):
        loc = f"{edge.kind.value}:{edge.source}->{edge.target}"
        want_src, want_dst = ENDPOINT_TYPES[edge.kind]
        got_src, got_dst = graph.node_type(edge.source), graph.node_type(edge.target)
        if got_src is None or got_dst is None:
            found.append(Violation("dangling-endpoint", f"edge {loc} references an unknown node", loc))
        elif (got_src, got_dst) != (want_src, want_dst):
            found.append(
                Violation(
                    "endpoint-type",
                    f"endpoint type: {edge.kind.value} needs {want_src}->{want_dst}, got {got_src}->{got_dst}",
                    loc,
                )
            )
        if edge.kind in ROLE_REQUIRED and not edge.role:
            found.append(Violation("missing-role", f"edge {loc} requires a role", loc))
        for acc in sorted(edge.accounts - graph.accounts):
            found.append(Violation("unknown-account", f"edge {loc} references unknown account {acc}", loc))
        if edge.kind in CAUSAL_KINDS:
            for acc in edge.accounts:
                per_account[acc].append((edge.source, edge.target))

    for acc in sorted(per_account):
        edges = per_account[acc]
        nodes = {n for e in edges for n in e}
        for comp in graphs.cycles(nodes, edges):
            found.append(Violation("account-cycle", f"account cycle in {acc} through {','.join(comp)}", acc))
    return ValidationOutcome(tuple(found))


def lineage(graph: OpmGraph, artifact: str) -> set[str]:
    """Every artifact and process the given artifact transitively depends on."""
    if artifact not in graph.artifacts:
        raise UnknownArtifact(f"unknown artifact {artifact}")
    step: dict[str, list[str]] = defaultdict(list)
    for edge in graph.edges.values():
        if edge.kind in LINEAGE_KINDS:
            step[edge.source].append(edge.target)
    return graphs.reachable([artifact], step) - {artifact}


# ---------------------------------------------------------------------------
# XML interchange
# ---------------------------------------------------------------------------


def _accounts(el: ET.Element, accounts: Iterable[str]) -> None:
    for acc in sorted(accounts):
        ET.SubElement(el, "account", {"ref": acc})


def export_xml(graph: OpmGraph) -> bytes:
    outcome = validate_opm(graph)
    if not outcome.ok:
        raise InvalidGraph(list(outcome.violations))
    root = ET.Element("opmGraph")
    processes = ET.SubElement(root, "processes")
    for pid in sorted(graph.processes):
        p = graph.processes[pid]
        _accounts(ET.SubElement(processes, "process", {"id": p.id, "label": p.label}), p.accounts)
    artifacts = ET.SubElement(root, "artifacts")
    for aid in sorted(graph.artifacts):
        a = graph.artifacts[aid]
        attrs = {"id": a.id, "hash": a.value_hash}
        if a.uri is not None:
            attrs["uri"] = a.uri
        _accounts(ET.SubElement(artifacts, "artifact", attrs), a.accounts)
    agents = ET.SubElement(root, "agents")
    for gid in sorted(graph.agents):
        g = graph.agents[gid]
        _accounts(ET.SubElement(agents, "agent", {"id": g.id, "label": g.label}), g.accounts)
    deps = ET.SubElement(root, "dependencies")
    for edge in sorted(graph.edges.values(), key=_sort_key):
        el = ET.SubElement(deps, edge.kind.value)
        ET.SubElement(el, "effect", {"ref": edge.source})
        ET.SubElement(el, "cause", {"ref": edge.target})
        if edge.role is not None:
            ET.SubElement(el, "role", {"value": edge.role})
        _accounts(el, edge.accounts)
    if graph.accounts:
        accounts = ET.SubElement(root, "accounts")
        for acc in sorted(graph.accounts):
            ET.SubElement(accounts, "account", {"id": acc})
    ET.indent(root, space="  ")
    return ET.tostring(root, encoding="UTF-8", xml_declaration=True) + b"\n"


_NODE_ELEMENTS = {
    "processes": ("process", ("id", "label"), ()),
    "artifacts": ("artifact", ("id", "hash"), ("uri",)),
    "agents": ("agent", ("id", "label"), ()),
}


def _check_text(el: ET.Element) -> None:
    if el.text is not None and el.text.strip():
        raise SchemaViolation(el.tag, "unexpected character data")
    for child in el:
        if child.tail is not None and child.tail.strip():
            raise SchemaViolation(el.tag, "unexpected character data")


def _attrs(el: ET.Element, required: Iterable[str], optional: Iterable[str] = ()) -> dict[str, str]:
    required = tuple(required)
    allowed = set(required) | set(optional)
    extra = sorted(set(el.attrib) - allowed)
    if extra:
        raise SchemaViolation(el.tag, f"unexpected attributes {','.join(extra)}")
    for name in required:
        if name not in el.attrib:
            raise SchemaViolation(el.tag, f"missing attribute {name}")
    return dict(el.attrib)


def _account_refs(el: ET.Element, allowed_children: Iterable[str] = ()) -> frozenset[str]:
    refs = set()
    allowed = set(allowed_children)
    for child in el:
        if child.tag == "account":
            _check_text(child)
            if len(child):
                raise SchemaViolation("account", "account references take no children")
            refs.add(_attrs(child, ("ref",))["ref"])
        elif child.tag not in allowed:
            raise SchemaViolation(child.tag, f"unexpected element inside <{el.tag}>")
    return frozenset(refs)


def import_xml(data: bytes | str) -> OpmGraph:
    raw = data.encode("utf-8") if isinstance(data, str) else bytes(data)
    if b"<!DOCTYPE" in raw or b"<!ENTITY" in raw:
        raise SchemaViolation("opmGraph", "document type declarations are not accepted")
    try:
        root = ET.fromstring(raw)
    except ET.ParseError as exc:
        raise MalformedXml(f"not well-formed XML: {exc}") from exc
    if root.tag != "opmGraph":
        raise SchemaViolation(root.tag, "root element must be opmGraph")
    _attrs(root, ())
    _check_text(root)

    g = OpmGraph()
    containers: dict[str, ET.Element] = {}
    for child in root:
        if child.tag not in ("processes", "artifacts", "agents", "dependencies", "accounts"):
            raise SchemaViolation(child.tag, "unexpected element inside <opmGraph>")
        if child.tag in containers:
            raise SchemaViolation(child.tag, "container appears twice")
        _attrs(child, ())
        _check_text(child)
        containers[child.tag] = child

    if "accounts" in containers:
        for el in containers["accounts"]:
            if el.tag != "account":
                raise SchemaViolation(el.tag, "unexpected element inside <accounts>")
            _check_text(el)
            g.accounts.add(_attrs(el, ("id",))["id"])

    def known_accounts(refs: frozenset[str], where: str) -> frozenset[str]:
        unknown = sorted(refs - g.accounts)
        if unknown:
            raise SchemaViolation(where, f"reference to unknown account {unknown[0]}")
        return refs

    for container, (tag, required, optional) in _NODE_ELEMENTS.items():
        if container not in containers:
            continue
        for el in containers[container]:
            if el.tag != tag:
                raise SchemaViolation(el.tag, f"unexpected element inside <{container}>")
            _check_text(el)
            attrs = _attrs(el, required, optional)
            accs = known_accounts(_account_refs(el), tag)
            node_id = attrs["id"]
            if g.node_type(node_id) is not None:
                raise SchemaViolation(tag, f"duplicate id {node_id}")
            if tag == "process":
                g.processes[node_id] = OpmProcess(node_id, attrs["label"], accs)
            elif tag == "artifact":
                g.artifacts[node_id] = OpmArtifact(node_id, attrs["hash"], attrs.get("uri"), accs)
            else:
                g.agents[node_id] = OpmAgent(node_id, attrs["label"], accs)

    kinds = {k.value: k for k in EdgeKind}
    for el in containers.get("dependencies", ()):
        if el.tag not in kinds:
            raise SchemaViolation(el.tag, "unknown dependency kind")
        _attrs(el, ())
        _check_text(el)
        parts: dict[str, list[str]] = {"effect": [], "cause": [], "role": []}
        for child in el:
            if child.tag in ("effect", "cause"):
                _check_text(child)
                parts[child.tag].append(_attrs(child, ("ref",))["ref"])
            elif child.tag == "role":
                _check_text(child)
                parts["role"].append(_attrs(child, ("value",))["value"])
        accs = known_accounts(_account_refs(el, ("effect", "cause", "role")), el.tag)
        if len(parts["effect"]) != 1 or len(parts["cause"]) != 1 or len(parts["role"]) > 1:
            raise SchemaViolation(el.tag, "needs exactly one effect, one cause and at most one role")
        source, target = parts["effect"][0], parts["cause"][0]
        for ref, label in ((source, "effect"), (target, "cause")):
            if g.node_type(ref) is None:
                raise SchemaViolation(label, f"{el.tag} references unknown id {ref}")
        edge = OpmEdge(kinds[el.tag], source, target, parts["role"][0] if parts["role"] else None, accs)
        if edge.key in g.edges:
            raise SchemaViolation(el.tag, f"duplicate dependency {source}->{target}")
        g.edges[edge.key] = edge

    outcome = validate_opm(g)
    if not outcome.ok:
        raise InvalidGraph(list(outcome.violations))
    return g


def graph_summary(graph: OpmGraph) -> dict[str, object]:
    """Counts per element kind; used by the service import endpoint."""
    return {
        "processes": len(graph.processes),
        "artifacts": len(graph.artifacts),
        "agents": len(graph.agents),
        "accounts": sorted(graph.accounts),
        "dependencies": {k.value: len(graph.edges_of(k)) for k in EdgeKind},
    }

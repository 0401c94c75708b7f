"""Mock executors, deterministic generators and brute-force oracles.

These stand in for real compute infrastructure in the test suites and for
the ``mock:*`` executors the service exposes.
"""

from __future__ import annotations

import itertools
import random
import string
from collections.abc import Sequence
from dataclasses import dataclass

from .errors import BackendUnavailable, TooLarge
from .model import (
    DataRef,
    ErrorRecord,
    NodeKind,
    Outcome,
    WorkflowNode,
    WorkflowSpec,
    canonical_json,
    expand,
)
from .opm import (
    CAUSAL_KINDS,
    ENDPOINT_TYPES,
    LINEAGE_KINDS,
    ROLE_REQUIRED,
    EdgeKind,
    OpmAgent,
    OpmArtifact,
    OpmEdge,
    OpmGraph,
    OpmProcess,
)
from .storage import StorageBackend

MAX_DAG_NODES = 8
MAX_OPM_NODES = 50

INJECTED = "injected"


# ---------------------------------------------------------------------------
# Mock executors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MockPolicy:
    """``kind`` is one of ok, fail, drift, inputs, raise."""

    kind: str = "ok"
    node: str | None = None
    tag: str = ""

    def __post_init__(self) -> None:
        if self.kind not in ("ok", "fail", "drift", "inputs", "raise"):
            raise ValueError(f"unknown mock policy {self.kind!r}")


def always_ok() -> MockPolicy:
    return MockPolicy("ok")


def fail_at(node: str) -> MockPolicy:
    return MockPolicy("fail", node)


def drift(node: str, tag: str) -> MockPolicy:
    return MockPolicy("drift", node, tag)


def hash_of_inputs() -> MockPolicy:
    return MockPolicy("inputs")


def raise_at(node: str) -> MockPolicy:
    return MockPolicy("raise", node)


class MockExecutor:
    """Deterministic executor: each output's bytes are a canonical JSON
    document over (node id, output name, sorted input hashes, tag), so the
    output hash changes exactly when one of those does.

    With the ``inputs`` policy the node's process_ref and metadata are
    folded in as well, which lets tests observe spec edits in outputs.
    """

    def __init__(self, policy: MockPolicy | None = None, *, inline: bool = False) -> None:
        self.policy = policy or always_ok()
        self.inline = inline
        self.calls: list[str] = []

    def run(self, node: WorkflowNode, inputs: list[DataRef]) -> Outcome:
        self.calls.append(node.id)
        p = self.policy
        if p.kind == "raise" and p.node == node.id:
            raise RuntimeError(f"mock executor crashed at {node.id}")
        if p.kind == "fail" and p.node == node.id:
            return Outcome(node.id, (), f"{node.id}: failing on purpose", ErrorRecord(INJECTED, f"injected failure at {node.id}"))
        tag = p.tag if p.kind == "drift" and p.node == node.id else ""
        in_hashes = sorted(d.content_hash for d in inputs)
        outputs = []
        names = node.declared_outputs or ("out",)
        for name in names:
            doc: list[object] = [node.id, name, in_hashes, tag]
            if p.kind == "inputs":
                doc += [node.process_ref, dict(sorted(node.metadata.items()))]
            outputs.append(DataRef.from_payload(name, canonical_json(doc), inline=self.inline))
        return Outcome(node.id, tuple(outputs), f"{node.id}: ok")


def mock_executor(policy: MockPolicy | None = None) -> MockExecutor:
    return MockExecutor(policy)


def parse_mock(text: str) -> MockPolicy:
    """``ok``, ``fail:<node>``, ``drift:<node>:<tag>``, ``inputs``, ``raise:<node>``."""
    kind, _, rest = text.partition(":")
    if kind == "ok" and not rest:
        return always_ok()
    if kind == "inputs" and not rest:
        return hash_of_inputs()
    if kind in ("fail", "raise") and rest:
        return MockPolicy(kind, rest)
    if kind == "drift":
        node, sep, tag = rest.partition(":")
        if node and sep:
            return drift(node, tag)
    raise ValueError(f"bad mock executor spec {text!r}")


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------

_ID_ALPHABET = string.ascii_letters + string.digits


def gen_dag(seed: int, n: int) -> WorkflowSpec:
    """Random valid flat spec with ``n`` nodes, single head, all reachable.

    Ids are random so that the lexicographic tie-break in planning does not
    coincide with generation order.
    """
    if n > MAX_DAG_NODES:
        raise TooLarge(f"gen_dag supports at most {MAX_DAG_NODES} nodes")
    if n < 1:
        raise ValueError("gen_dag needs at least one node")
    rng = random.Random(seed)
    ids: list[str] = []
    while len(ids) < n:
        cand = "".join(rng.choice(_ID_ALPHABET) for _ in range(rng.randint(1, 3)))
        if cand not in ids:
            ids.append(cand)
    edges: set[tuple[str, str]] = set()
    for i in range(1, n):
        edges.add((ids[rng.randrange(i)], ids[i]))
        for j in range(i):
            if rng.random() < 0.3:
                edges.add((ids[j], ids[i]))
    nodes = []
    for i, nid in enumerate(ids):
        preds = sorted(a for a, b in edges if b == nid)
        nodes.append(
            WorkflowNode(
                nid,
                NodeKind.SINGLE,
                f"tool-{nid}",
                (),
                {"param": str(rng.randint(0, 9))},
                ("input",) if i == 0 else tuple(f"{p}.out" for p in preds),
                (f"{nid}.out",),
            )
        )
    return WorkflowSpec(f"gen-{seed}", f"generated {seed}", ids[0], tuple(nodes), tuple(edges))


_LABEL_CHARS = string.ascii_letters + string.digits + " <>&\"'=/-_.:;é漢"


def _label(rng: random.Random) -> str:
    return "".join(rng.choice(_LABEL_CHARS) for _ in range(rng.randint(0, 12)))


def gen_opm(seed: int, n: int) -> OpmGraph:
    """Random valid OPM graph with ``n`` nodes (processes, artifacts, agents)."""
    if n > MAX_OPM_NODES:
        raise TooLarge(f"gen_opm supports at most {MAX_OPM_NODES} nodes")
    rng = random.Random(seed)
    g = OpmGraph()
    accounts = [f"acc{i}" for i in range(rng.randint(1, 3))]
    g.accounts.update(accounts)

    def some_accounts() -> frozenset[str]:
        return frozenset(a for a in accounts if rng.random() < 0.6)

    kinds = [rng.choice(("process", "artifact", "artifact", "agent")) for _ in range(n)]
    by_kind: dict[str, list[str]] = {"process": [], "artifact": [], "agent": []}
    for i, kind in enumerate(kinds):
        node_id = f"{kind[:2]}{i}-{rng.randint(0, 999)}"
        by_kind[kind].append(node_id)
        if kind == "process":
            g.add_process(OpmProcess(node_id, _label(rng), some_accounts()))
        elif kind == "artifact":
            uri = None if rng.random() < 0.5 else f"file:///data/{i}/{_label(rng).strip()}"
            h = "".join(rng.choice("0123456789abcdef") for _ in range(64))
            g.add_artifact(OpmArtifact(node_id, h, uri, some_accounts()))
        else:
            g.add_agent(OpmAgent(node_id, _label(rng), some_accounts()))

    # causal edges only point from later to earlier rank, so no account can cycle
    ranked = by_kind["process"] + by_kind["artifact"]
    rng.shuffle(ranked)
    rank = {node_id: i for i, node_id in enumerate(ranked)}
    for _ in range(rng.randint(0, 2 * n)):
        kind = rng.choice(list(EdgeKind))
        src_type, dst_type = ENDPOINT_TYPES[kind]
        if not by_kind[src_type] or not by_kind[dst_type]:
            continue
        src, dst = rng.choice(by_kind[src_type]), rng.choice(by_kind[dst_type])
        if src == dst:
            continue
        if kind in CAUSAL_KINDS and rank[src] < rank[dst]:
            if src_type != dst_type:
                continue
            src, dst = dst, src
        if kind in ROLE_REQUIRED:
            role: str | None = _label(rng) or "r"
        else:
            role = None if rng.random() < 0.5 else _label(rng)
        g.add_edge(OpmEdge(kind, src, dst, role, some_accounts()))
    return g


# ---------------------------------------------------------------------------
# Brute-force oracles
# ---------------------------------------------------------------------------


def brute_force_topo_orders(spec: WorkflowSpec) -> set[tuple[str, ...]]:
    """All topological orders, by filtering every permutation."""
    flat = expand(spec)
    ids = flat.node_ids
    if len(ids) > MAX_DAG_NODES:
        raise TooLarge(f"brute force enumeration capped at {MAX_DAG_NODES} nodes")
    orders = set()
    for perm in itertools.permutations(ids):
        pos = {n: i for i, n in enumerate(perm)}
        if all(pos[a] < pos[b] for a, b in flat.edges):
            orders.add(perm)
    return orders


def _fixed_point(start: str, pairs: Sequence[tuple[str, str]]) -> set[str]:
    found = {start}
    changed = True
    while changed:
        changed = False
        for src, dst in pairs:
            if src in found and dst not in found:
                found.add(dst)
                changed = True
    found.discard(start)
    return found


def brute_force_ancestry(graph: WorkflowSpec | OpmGraph, node_id: str) -> set[str]:
    """Naive fixed-point closure; spec ancestors or OPM lineage."""
    if isinstance(graph, OpmGraph):
        if graph.node_count() > MAX_OPM_NODES:
            raise TooLarge(f"brute force ancestry capped at {MAX_OPM_NODES} nodes")
        pairs = [(e.source, e.target) for e in graph.edges.values() if e.kind in LINEAGE_KINDS]
        return _fixed_point(node_id, pairs)
    flat = expand(graph)
    if len(flat.nodes) > MAX_DAG_NODES:
        raise TooLarge(f"brute force ancestry capped at {MAX_DAG_NODES} nodes")
    return _fixed_point(node_id, [(b, a) for a, b in flat.edges])


def brute_force_descendants(spec: WorkflowSpec, node_id: str) -> set[str]:
    flat = expand(spec)
    if len(flat.nodes) > MAX_DAG_NODES:
        raise TooLarge(f"brute force descendants capped at {MAX_DAG_NODES} nodes")
    return _fixed_point(node_id, list(flat.edges))


# ---------------------------------------------------------------------------
# Fault injection
# ---------------------------------------------------------------------------


class FaultyBackend(StorageBackend):
    """Wraps a backend and raises BackendUnavailable on selected calls."""

    name = "faulty"

    def __init__(self, inner: StorageBackend, *, fail_ops: Sequence[str] = ("put",), after: int = 0) -> None:
        self.inner = inner
        self.fail_ops = set(fail_ops)
        self.after = after
        self.calls = 0
        self.closed = False

    def _maybe_fail(self, op: str) -> None:
        if op in self.fail_ops:
            self.calls += 1
            if self.calls > self.after:
                raise BackendUnavailable(f"injected {op} failure")

    def put(self, record):  # type: ignore[no-untyped-def]
        self._maybe_fail("put")
        return self.inner.put(record)

    def get(self, path):  # type: ignore[no-untyped-def]
        self._maybe_fail("get")
        return self.inner.get(path)

    def list(self, item_id, kind, subpath_prefix=()):  # type: ignore[no-untyped-def]
        self._maybe_fail("list")
        return self.inner.list(item_id, kind, subpath_prefix)

    def list_items(self):  # type: ignore[no-untyped-def]
        self._maybe_fail("list")
        return self.inner.list_items()

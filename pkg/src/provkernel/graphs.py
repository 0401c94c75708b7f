"""Small directed-graph helpers over (node ids, edge pairs)."""

from __future__ import annotations

import heapq
from collections import defaultdict
from collections.abc import Iterable


Edge = tuple[str, str]


def adjacency(nodes: Iterable[str], edges: Iterable[Edge]) -> tuple[dict[str, list[str]], dict[str, list[str]]]:
    """Return (successors, predecessors), each sorted per node."""
    succ: dict[str, list[str]] = {n: [] for n in nodes}
    pred: dict[str, list[str]] = {n: [] for n in succ}
    for a, b in edges:
        succ.setdefault(a, []).append(b)
        pred.setdefault(b, []).append(a)
        succ.setdefault(b, [])
        pred.setdefault(a, [])
    for table in (succ, pred):
        for k in table:
            table[k] = sorted(set(table[k]))
    return succ, pred


def lexicographic_topo_order(nodes: Iterable[str], edges: Iterable[Edge]) -> list[str] | None:
    """Kahn's algorithm with a min-heap; ``None`` if the graph has a cycle."""
    succ, pred = adjacency(nodes, edges)
    indegree = {n: len(p) for n, p in pred.items()}
    ready = [n for n, d in indegree.items() if d == 0]
    heapq.heapify(ready)
    order: list[str] = []
    while ready:
        n = heapq.heappop(ready)
        order.append(n)
        for m in succ[n]:
            indegree[m] -= 1
            if indegree[m] == 0:
                heapq.heappush(ready, m)
    if len(order) != len(indegree):
        return None
    return order


def cycles(nodes: Iterable[str], edges: Iterable[Edge]) -> list[list[str]]:
    """Non-trivial strongly connected components (and self loops), each sorted."""
    succ, _ = adjacency(nodes, edges)
    index: dict[str, int] = {}
    low: dict[str, int] = {}
    on_stack: set[str] = set()
    stack: list[str] = []
    found: list[list[str]] = []
    counter = 0

    for root in sorted(succ):
        if root in index:
            continue
        work = [(root, iter(succ[root]))]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack.add(root)
        while work:
            node, it = work[-1]
            advanced = False
            for nxt in it:
                if nxt not in index:
                    index[nxt] = low[nxt] = counter
                    counter += 1
                    stack.append(nxt)
                    on_stack.add(nxt)
                    work.append((nxt, iter(succ[nxt])))
                    advanced = True
                    break
                if nxt in on_stack:
                    low[node] = min(low[node], index[nxt])
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[node])
            if low[node] == index[node]:
                comp = []
                while True:
                    top = stack.pop()
                    on_stack.discard(top)
                    comp.append(top)
                    if top == node:
                        break
                if len(comp) > 1 or node in succ[node]:
                    found.append(sorted(comp))
    return sorted(found)


def reachable(start: Iterable[str], step: dict[str, list[str]]) -> set[str]:
    """Nodes reachable from ``start`` (excluded unless revisited) following ``step``."""
    seen: set[str] = set()
    frontier = list(start)
    while frontier:
        n = frontier.pop()
        for m in step.get(n, ()):
            if m not in seen:
                seen.add(m)
                frontier.append(m)
    return seen


def ancestors(node: str, edges: Iterable[Edge]) -> set[str]:
    pred: dict[str, list[str]] = defaultdict(list)
    for a, b in edges:
        pred[b].append(a)
    return reachable([node], pred) - {node}


def descendants(node: str, edges: Iterable[Edge]) -> set[str]:
    succ: dict[str, list[str]] = defaultdict(list)
    for a, b in edges:
        succ[a].append(b)
    return reachable([node], succ) - {node}

"""In-memory object graph: nodes, variables, reachability, canonical bytes.

The namespace is a rooted directed graph. The root is a container whose
children are the current variable targets (kept in sorted-name order).
Connectivity queries (``connected_variables``) deliberately ignore the
root node: it links every variable and would otherwise collapse all
components into one.

Serialization equality for the whole store is defined by
``canonical_serialize``: two states are equal iff their canonical bytes
are identical. The encoding depends only on structure and payloads, never
on object id values.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Dict, Iterable, List, Optional, Set

from .errors import UnknownVariable

NODE_HEADER_BYTES = 16
CHILD_REF_BYTES = 8


class Kind(IntEnum):
    LEAF = 0
    CONTAINER = 1


@dataclass
class ObjectNode:
    id: int
    kind: Kind
    payload: bytes = b""
    children: List[int] = field(default_factory=list)


def object_size(node: ObjectNode) -> int:
    """Proxy byte size of one object: payload + 8 per child + 16 header."""
    return len(node.payload) + CHILD_REF_BYTES * len(node.children) + NODE_HEADER_BYTES


class ObjectGraph:
    """A namespace: objects, references, and name bindings.

    Not internally synchronized; concurrent writers must be serialized by
    the caller (the async engine provides that contract).
    """

    def __init__(self) -> None:
        self.nodes: Dict[int, ObjectNode] = {}
        self.variables: Dict[str, int] = {}
        self._next_id = 0
        self.root = self._new_node(Kind.CONTAINER, b"", []).id

    def _new_node(self, kind: Kind, payload: bytes, children: List[int]) -> ObjectNode:
        node = ObjectNode(self._next_id, kind, payload, list(children))
        self._next_id += 1
        self.nodes[node.id] = node
        return node

    def new_leaf(self, payload: bytes) -> int:
        return self._new_node(Kind.LEAF, payload, []).id

    def new_container(self, children: Iterable[int], payload: bytes = b"") -> int:
        return self._new_node(Kind.CONTAINER, payload, list(children)).id

    def bind(self, name: str, target: int) -> None:
        """Bind (or rebind) a variable name to an existing object."""
        if target not in self.nodes:
            raise KeyError(f"no such object: {target}")
        self.variables[name] = target
        self._refresh_root()

    def target(self, name: str) -> int:
        try:
            return self.variables[name]
        except KeyError:
            raise UnknownVariable(name) from None

    def _refresh_root(self) -> None:
        self.nodes[self.root].children = [
            self.variables[n] for n in sorted(self.variables)
        ]

    def collect_garbage(self) -> int:
        """Drop nodes unreachable from the root; returns how many were dropped."""
        live = self._closure([self.root])
        dead = [oid for oid in self.nodes if oid not in live]
        for oid in dead:
            del self.nodes[oid]
        return len(dead)

    def _closure(self, seeds: Iterable[int]) -> Set[int]:
        seen: Set[int] = set()
        stack = list(seeds)
        while stack:
            oid = stack.pop()
            if oid in seen:
                continue
            seen.add(oid)
            stack.extend(self.nodes[oid].children)
        return seen

    def clone(self) -> "ObjectGraph":
        """Deep, structure-preserving copy (same object ids)."""
        g = ObjectGraph.__new__(ObjectGraph)
        g.nodes = {
            oid: ObjectNode(n.id, n.kind, n.payload, list(n.children))
            for oid, n in self.nodes.items()
        }
        g.variables = dict(self.variables)
        g.root = self.root
        g._next_id = self._next_id
        return g


def reachable_from(graph: ObjectGraph, names: Set[str]) -> Set[int]:
    """Directed closure over children edges from the named objects, inclusive."""
    seeds = [graph.target(n) for n in sorted(names)]
    return graph._closure(seeds) if seeds else set()


def connected_variables(graph: ObjectGraph, accessed: Set[str]) -> Set[str]:
    """All variables weakly connected to any accessed variable.

    Edges are treated as undirected and the namespace root is excluded,
    otherwise it would join every variable into one component.
    """
    for name in accessed:
        if name not in graph.variables:
            raise UnknownVariable(name)
    if not accessed:
        return set()

    adjacency: Dict[int, List[int]] = {}
    for oid, node in graph.nodes.items():
        if oid == graph.root:
            continue
        for child in node.children:
            if child == graph.root:
                continue
            adjacency.setdefault(oid, []).append(child)
            adjacency.setdefault(child, []).append(oid)

    seen: Set[int] = set()
    stack = [graph.variables[n] for n in accessed]
    while stack:
        oid = stack.pop()
        if oid in seen:
            continue
        seen.add(oid)
        stack.extend(adjacency.get(oid, ()))
    return {name for name, target in graph.variables.items() if target in seen}


# Canonical byte encoding. One record per variable (sorted by name), then a
# preorder walk where the first visit of an object inlines it and any repeat
# visit emits a back-reference to its visit index.
_TAG_NAME = b"\x4e"
_TAG_NODE = b"\x01"
_TAG_REF = b"\x02"
_U32 = struct.Struct("<I")


def canonical_serialize(graph: ObjectGraph, names: Set[str]) -> bytes:
    out = bytearray()
    visit_index: Dict[int, int] = {}
    for name in sorted(names):
        target = graph.target(name)
        raw = name.encode("utf-8")
        out += _TAG_NAME + _U32.pack(len(raw)) + raw
        stack = [target]
        while stack:
            oid = stack.pop()
            idx = visit_index.get(oid)
            if idx is not None:
                out += _TAG_REF + _U32.pack(idx)
                continue
            visit_index[oid] = len(visit_index)
            node = graph.nodes[oid]
            out += _TAG_NODE
            out.append(int(node.kind))
            out += _U32.pack(len(node.payload))
            out += node.payload
            out += _U32.pack(len(node.children))
            stack.extend(reversed(node.children))
    return bytes(out)


def first_visit_order(
    graph: ObjectGraph, targets: List[int], virtual_root: Optional[int] = None
) -> List[tuple]:
    """Depth-first first-visit sequence as (object id, parent id) pairs.

    The order matches the podding traversal exactly: ``targets`` first to
    last, children in list order, repeats skipped. With ``virtual_root``
    the sequence starts at that node but its own children list is replaced
    by ``targets`` (the pruned namespace-root convention used by saves);
    otherwise targets are parentless entry points.
    """
    order: List[tuple] = []
    seen: Set[int] = set()
    if virtual_root is not None:
        order.append((virtual_root, None))
        seen.add(virtual_root)
        stack = [(t, virtual_root) for t in reversed(targets)]
    else:
        stack = [(t, None) for t in reversed(targets)]
    while stack:
        oid, parent = stack.pop()
        if oid in seen:
            continue
        seen.add(oid)
        order.append((oid, parent))
        for child in reversed(graph.nodes[oid].children):
            stack.append((child, oid))
    return order

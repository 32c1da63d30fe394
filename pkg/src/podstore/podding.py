"""Partitioning a reachable subgraph into pods and assembling it back.

Pod byte format (versioned by the magic, little-endian throughout):

    magic   "POD1"
    count   u32                       number of members
    per member:
        kind        u8
        paylen      u32
        payload     paylen bytes
        nchildren   u32
        children    nchildren * u32   virtual memo ids
    trailer:
        npages      u32
        pages       npages * (page_index u32, base u64)

A child reference to a member of the same pod is that member's local
first-visit index (always < 2**31). A reference into another pod is the
target's global memo id plus 2**31. Global ids come from pages of B
consecutive ids; a pod lazily allocates the page covering a member only
when something actually needs the member's global id (a cross-pod
reference). Page bases are multiples of B, handed out by a session-wide
registry keyed by the pod's head object so an unchanged pod keeps
identical bytes across saves.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

from .errors import (
    MalformedBytes,
    MissingPod,
    NotFound,
    PageNotAllocated,
    TooManyLocalMembers,
    UnresolvedGlobalId,
)
from .graph import Kind, ObjectGraph, ObjectNode, object_size
from .optimizer import Action, PoddingStrategy, PodStats

POD_MAGIC = b"POD1"
CROSS_POD_BASE = 1 << 31

_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
_PAGE = struct.Struct("<IQ")


@dataclass(frozen=True, order=True)
class PodId:
    time_id: int
    serial: int

    def __str__(self) -> str:
        return f"{self.time_id}_{self.serial}"


@dataclass
class Pod:
    id: PodId
    members: List[int]
    bytes: bytes = b""
    page_offsets: List[Tuple[int, int]] = field(default_factory=list)
    depth: int = 0


@dataclass
class PodGraph:
    pods: Set[PodId] = field(default_factory=set)
    edges: Set[Tuple[PodId, PodId]] = field(default_factory=set)


@dataclass
class VirtualMemoTable:
    """One pod's view of the virtual memo space."""

    page_size: int
    pages: Dict[int, int] = field(default_factory=dict)  # page index -> base
    assignments: Dict[int, int] = field(default_factory=dict)  # global id -> object id


def map_virtual_to_global(m_virtual: int, table: VirtualMemoTable) -> int:
    """Resolve a virtual memo id to a global memo id.

    Within-pod ids (< 2**31) map through the pod's page table: page
    floor(m/B) at offset m mod B. Cross-pod ids carry the global id
    directly, offset by 2**31.
    """
    if m_virtual >= CROSS_POD_BASE:
        return m_virtual - CROSS_POD_BASE
    i, r = divmod(m_virtual, table.page_size)
    base = table.pages.get(i)
    if base is None:
        raise PageNotAllocated(i)
    return base + r


class PageRegistry:
    """Session-wide allocator of global memo pages.

    Pages are keyed by (head object id, page index) so the pod led by the
    same object reuses the same bases save after save; bases are multiples
    of the page size and never reused.
    """

    def __init__(self, page_size: int):
        if page_size <= 0:
            raise ValueError("page_size must be positive")
        self.page_size = page_size
        self._bases: Dict[Tuple[int, int], int] = {}
        self._next_page = 0

    def base_for(self, head_oid: int, page_index: int) -> int:
        key = (head_oid, page_index)
        base = self._bases.get(key)
        if base is None:
            base = self._next_page * self.page_size
            self._next_page += 1
            self._bases[key] = base
        return base


def encode_pod(
    members: Sequence[ObjectNode],
    resolve_child: Callable[[int], int],
    pages: Sequence[Tuple[int, int]] = (),
) -> bytes:
    """Encode one pod's members to its byte stream (format in module docs)."""
    if len(members) >= CROSS_POD_BASE:
        raise TooManyLocalMembers(f"{len(members)} members")
    out = bytearray(POD_MAGIC)
    out += _U32.pack(len(members))
    for node in members:
        out.append(int(node.kind))
        out += _U32.pack(len(node.payload))
        out += node.payload
        out += _U32.pack(len(node.children))
        for child in node.children:
            out += _U32.pack(resolve_child(child))
    out += _U32.pack(len(pages))
    for page_index, base in pages:
        out += _PAGE.pack(page_index, base)
    return bytes(out)


@dataclass
class PodRecord:
    """Decoded pod bytes."""

    members: List[Tuple[int, bytes, Tuple[int, ...]]]  # (kind, payload, child vids)
    pages: List[Tuple[int, int]]


def decode_pod(data: bytes) -> PodRecord:
    if data[:4] != POD_MAGIC:
        raise MalformedBytes(0, "bad magic")
    view = memoryview(data)
    off = 4

    def take_u32() -> int:
        nonlocal off
        if off + 4 > len(data):
            raise MalformedBytes(off, "truncated u32")
        (value,) = _U32.unpack_from(view, off)
        off += 4
        return value

    count = take_u32()
    members: List[Tuple[int, bytes, Tuple[int, ...]]] = []
    for _ in range(count):
        if off + 1 > len(data):
            raise MalformedBytes(off, "truncated kind")
        kind = data[off]
        off += 1
        paylen = take_u32()
        if off + paylen > len(data):
            raise MalformedBytes(off, "truncated payload")
        payload = bytes(view[off : off + paylen])
        off += paylen
        nchildren = take_u32()
        if off + 4 * nchildren > len(data):
            raise MalformedBytes(off, "truncated children")
        children = struct.unpack_from(f"<{nchildren}I", view, off)
        off += 4 * nchildren
        members.append((kind, payload, children))
    npages = take_u32()
    pages: List[Tuple[int, int]] = []
    for _ in range(npages):
        if off + _PAGE.size > len(data):
            raise MalformedBytes(off, "truncated page table")
        pages.append(_PAGE.unpack_from(view, off))
        off += _PAGE.size
    if off != len(data):
        raise MalformedBytes(off, "trailing bytes")
    return PodRecord(members=members, pages=pages)


@dataclass
class SaveResult:
    """Everything one podding pass produces, before change detection."""

    pods: List[Pod]
    pod_graph: PodGraph
    memo_table: VirtualMemoTable  # save-wide: union of per-pod pages/assignments
    placements: Dict[int, Tuple[PodId, int]]  # object id -> (pod, member index)
    actions: Dict[int, Action]  # action applied per first-visited object
    pod_tables: Dict[PodId, VirtualMemoTable]
    root_pod: Optional[PodId]
    global_index: Dict[int, Tuple[PodId, int]]  # global page number -> (pod, base member)


def pod_save(
    graph: ObjectGraph,
    roots: Set[str],
    decide: PoddingStrategy,
    *,
    time_id: int,
    pages: PageRegistry,
) -> SaveResult:
    """Partition the closure of ``roots`` into pods and encode them.

    Traversal starts at the namespace root object, which always opens the
    depth-0 pod; every other first-visited object gets the strategy's
    action. Split-final bundles the object's entire unvisited subtree into
    the new pod without consulting the strategy again.
    """
    targets: List[int] = []
    seen_targets: Set[int] = set()
    for name in sorted(roots):
        t = graph.target(name)
        if t not in seen_targets:
            seen_targets.add(t)
            targets.append(t)

    pods: List[Pod] = []
    stats: List[PodStats] = []
    members_of: List[List[int]] = []
    placements: Dict[int, Tuple[PodId, int]] = {}
    actions: Dict[int, Action] = {}

    def open_pod(depth: int) -> int:
        pid = PodId(time_id, len(pods))
        pods.append(Pod(pid, members := [], depth=depth))
        members_of.append(members)
        stats.append(PodStats(depth=depth))
        return len(pods) - 1

    def place(oid: int, pod_idx: int, s_u: float, lam_u: float) -> None:
        members = members_of[pod_idx]
        placements[oid] = (pods[pod_idx].id, len(members))
        members.append(oid)
        stats[pod_idx].admit(s_u, lam_u)

    root_idx = open_pod(0)
    root_node = graph.nodes[graph.root]
    place(graph.root, root_idx, object_size(root_node), decide.rate(root_node))
    actions[graph.root] = Action.SPLIT_CONTINUE

    # (object, pod index of the traversal parent, swallow flag)
    stack: List[Tuple[int, int, bool]] = [(t, root_idx, False) for t in reversed(targets)]
    while stack:
        oid, parent_pod, swallow = stack.pop()
        if oid in placements:
            continue
        node = graph.nodes[oid]
        s_u = float(object_size(node))
        lam_u = decide.rate(node)
        if swallow:
            pod_idx = parent_pod
        else:
            action = decide.choose(node, s_u, lam_u, stats[parent_pod])
            actions[oid] = action
            if action is Action.BUNDLE:
                pod_idx = parent_pod
            else:
                pod_idx = open_pod(stats[parent_pod].depth + 1)
        place(oid, pod_idx, s_u, lam_u)
        descend_swallow = swallow or actions.get(oid) is Action.SPLIT_FINAL
        for child in reversed(node.children):
            stack.append((child, pod_idx, descend_swallow))

    # The encoded root member's children are the traversal targets (the
    # active variables' objects in sorted-name order), not the live root's.
    pruned_children: Dict[int, List[int]] = {graph.root: targets}

    # Lazy page allocation: only members actually referenced across pods
    # get global ids; variables are addressed by (pod, member) instead.
    page_size = pages.page_size
    pod_tables: Dict[PodId, VirtualMemoTable] = {
        pod.id: VirtualMemoTable(page_size) for pod in pods
    }
    # Save-wide view: pages keyed by global page number, plus all assignments.
    save_table = VirtualMemoTable(page_size)
    global_index: Dict[int, Tuple[PodId, int]] = {}
    edges: Set[Tuple[PodId, PodId]] = set()

    def global_id_for(oid: int) -> int:
        pid, member_idx = placements[oid]
        head = members_of[pid.serial][0]
        page_index, r = divmod(member_idx, page_size)
        table = pod_tables[pid]
        base = table.pages.get(page_index)
        if base is None:
            base = pages.base_for(head, page_index)
            table.pages[page_index] = base
            save_table.pages[base // page_size] = base
            global_index[base // page_size] = (pid, page_index * page_size)
        gid = base + r
        table.assignments[gid] = oid
        save_table.assignments[gid] = oid
        return gid

    for pod_idx, pod in enumerate(pods):
        for oid in members_of[pod_idx]:
            for child in pruned_children.get(oid, graph.nodes[oid].children):
                child_pid, _ = placements[child]
                if child_pid != pod.id:
                    edges.add((pod.id, child_pid))
                    global_id_for(child)

    for pod_idx, pod in enumerate(pods):
        local_index = {o: i for i, o in enumerate(members_of[pod_idx])}

        def resolve(child: int, _local=local_index, _pid=pod.id) -> int:
            child_pid, member_idx = placements[child]
            if child_pid == _pid:
                return _local[child]
            table = pod_tables[child_pid]
            page_index, r = divmod(member_idx, table.page_size)
            return CROSS_POD_BASE + table.pages[page_index] + r

        member_nodes = [
            ObjectNode(
                o,
                graph.nodes[o].kind,
                graph.nodes[o].payload,
                pruned_children.get(o, graph.nodes[o].children),
            )
            for o in members_of[pod_idx]
        ]
        pod.members = list(members_of[pod_idx])
        pod.page_offsets = sorted(pod_tables[pod.id].pages.items())
        pod.bytes = encode_pod(member_nodes, resolve, pod.page_offsets)

    graph_of_pods = PodGraph(pods={p.id for p in pods}, edges=edges)
    return SaveResult(
        pods=pods,
        pod_graph=graph_of_pods,
        memo_table=save_table,
        placements=placements,
        actions=actions,
        pod_tables=pod_tables,
        root_pod=pods[0].id if pods else None,
        global_index=global_index,
    )


@dataclass
class UnpoddedFragment:
    """Decoded pods wired back into object nodes."""

    nodes: Dict[int, ObjectNode]
    entries: Dict[Tuple[PodId, int], int]  # (pod, member index) -> node id
    pods_fetched: int = 0


def unpod(
    root_pod_ids: Iterable[PodId],
    fetch: Callable[[PodId], bytes],
    *,
    page_size: int,
    global_index: Mapping[int, Tuple[PodId, int]],
) -> UnpoddedFragment:
    """Decode the given pods plus everything they transitively reference.

    ``fetch`` must already see through synonyms. ``global_index`` maps a
    global page number to (pod, base member index); bases are multiples of
    the page size, so a global id g lives at member base + g mod B.
    """
    records: Dict[PodId, PodRecord] = {}
    worklist: List[PodId] = list(dict.fromkeys(root_pod_ids))

    def locate(gid: int) -> Tuple[PodId, int]:
        entry = global_index.get(gid // page_size)
        if entry is None:
            raise UnresolvedGlobalId(gid)
        pid, base_member = entry
        return pid, base_member + gid % page_size

    while worklist:
        pid = worklist.pop()
        if pid in records:
            continue
        try:
            data = fetch(pid)
        except (KeyError, NotFound):
            raise MissingPod(pid) from None
        records[pid] = record = decode_pod(data)
        for _, _, children in record.members:
            for vid in children:
                if vid >= CROSS_POD_BASE:
                    target_pid, _ = locate(vid - CROSS_POD_BASE)
                    if target_pid not in records:
                        worklist.append(target_pid)

    nodes: Dict[int, ObjectNode] = {}
    entries: Dict[Tuple[PodId, int], int] = {}
    next_id = 0
    for pid in sorted(records):
        record = records[pid]
        for member_idx, (kind, payload, _) in enumerate(record.members):
            nodes[next_id] = ObjectNode(next_id, Kind(kind), payload, [])
            entries[(pid, member_idx)] = next_id
            next_id += 1

    for pid in sorted(records):
        record = records[pid]
        for member_idx, (_, _, children) in enumerate(record.members):
            node = nodes[entries[(pid, member_idx)]]
            for vid in children:
                if vid >= CROSS_POD_BASE:
                    target = locate(vid - CROSS_POD_BASE)
                else:
                    if vid >= len(record.members):
                        raise MalformedBytes(0, f"local ref {vid} out of range in {pid}")
                    target = (pid, vid)
                if target not in entries:
                    raise UnresolvedGlobalId(vid)
                node.children.append(entries[target])

    return UnpoddedFragment(nodes=nodes, entries=entries, pods_fetched=len(records))

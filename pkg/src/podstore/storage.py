"""Durable keyed storage for pod bytes and per-save manifests.

Directory layout (stable):

    pods/<time>_<serial>.pod    written pod bytes, append-only
    manifests/<time>.mft        one manifest per save
    store.meta                  JSON echo of the store configuration

Manifests use a canonical binary encoding (magic ``MFT1``): encoding the
same manifest twice yields identical bytes, and decode(encode(m)) == m.
"""

from __future__ import annotations

import json
import struct
import time as _time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from .errors import DuplicatePodId, IoFailure, MalformedManifest, NotFound
from .podding import PodId

MANIFEST_MAGIC = b"MFT1"

_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")


@dataclass
class SaveManifest:
    time_id: int
    root_pod: Optional[PodId] = None
    variable_roots: Dict[str, PodId] = field(default_factory=dict)
    variable_members: Dict[str, int] = field(default_factory=dict)
    carried_forward: Dict[str, Tuple[int, PodId]] = field(default_factory=dict)
    pod_edges: List[Tuple[PodId, PodId]] = field(default_factory=list)
    synonyms: List[Tuple[PodId, PodId]] = field(default_factory=list)
    page_tables: Dict[PodId, List[Tuple[int, int]]] = field(default_factory=dict)
    global_index: Dict[int, Tuple[PodId, int]] = field(default_factory=dict)


def _pack_str(out: bytearray, s: str) -> None:
    raw = s.encode("utf-8")
    out += _U32.pack(len(raw))
    out += raw


def _pack_pod_id(out: bytearray, pid: PodId) -> None:
    out += _U64.pack(pid.time_id)
    out += _U64.pack(pid.serial)


def encode_manifest(m: SaveManifest) -> bytes:
    out = bytearray(MANIFEST_MAGIC)
    out += _U64.pack(m.time_id)
    out.append(1 if m.root_pod is not None else 0)
    if m.root_pod is not None:
        _pack_pod_id(out, m.root_pod)

    out += _U32.pack(len(m.variable_roots))
    for name in sorted(m.variable_roots):
        _pack_str(out, name)
        _pack_pod_id(out, m.variable_roots[name])
        out += _U32.pack(m.variable_members[name])

    out += _U32.pack(len(m.carried_forward))
    for name in sorted(m.carried_forward):
        origin, pid = m.carried_forward[name]
        _pack_str(out, name)
        out += _U64.pack(origin)
        _pack_pod_id(out, pid)

    out += _U32.pack(len(m.pod_edges))
    for a, b in sorted(m.pod_edges):
        _pack_pod_id(out, a)
        _pack_pod_id(out, b)

    out += _U32.pack(len(m.synonyms))
    for alias, canonical in sorted(m.synonyms):
        _pack_pod_id(out, alias)
        _pack_pod_id(out, canonical)

    out += _U32.pack(len(m.page_tables))
    for pid in sorted(m.page_tables):
        _pack_pod_id(out, pid)
        pages = m.page_tables[pid]
        out += _U32.pack(len(pages))
        for page_index, base in sorted(pages):
            out += _U32.pack(page_index)
            out += _U64.pack(base)

    out += _U32.pack(len(m.global_index))
    for page_no in sorted(m.global_index):
        pid, base_member = m.global_index[page_no]
        out += _U64.pack(page_no)
        _pack_pod_id(out, pid)
        out += _U32.pack(base_member)

    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.off = 0

    def u8(self) -> int:
        if self.off + 1 > len(self.data):
            raise MalformedManifest(f"truncated at {self.off}")
        v = self.data[self.off]
        self.off += 1
        return v

    def u32(self) -> int:
        if self.off + 4 > len(self.data):
            raise MalformedManifest(f"truncated at {self.off}")
        (v,) = _U32.unpack_from(self.data, self.off)
        self.off += 4
        return v

    def u64(self) -> int:
        if self.off + 8 > len(self.data):
            raise MalformedManifest(f"truncated at {self.off}")
        (v,) = _U64.unpack_from(self.data, self.off)
        self.off += 8
        return v

    def string(self) -> str:
        n = self.u32()
        if self.off + n > len(self.data):
            raise MalformedManifest(f"truncated at {self.off}")
        s = self.data[self.off : self.off + n].decode("utf-8")
        self.off += n
        return s

    def pod_id(self) -> PodId:
        return PodId(self.u64(), self.u64())


def decode_manifest(data: bytes) -> SaveManifest:
    if data[:4] != MANIFEST_MAGIC:
        raise MalformedManifest("bad magic")
    r = _Reader(data)
    r.off = 4
    m = SaveManifest(time_id=r.u64())
    if r.u8():
        m.root_pod = r.pod_id()
    for _ in range(r.u32()):
        name = r.string()
        m.variable_roots[name] = r.pod_id()
        m.variable_members[name] = r.u32()
    for _ in range(r.u32()):
        name = r.string()
        origin = r.u64()
        m.carried_forward[name] = (origin, r.pod_id())
    for _ in range(r.u32()):
        m.pod_edges.append((r.pod_id(), r.pod_id()))
    for _ in range(r.u32()):
        m.synonyms.append((r.pod_id(), r.pod_id()))
    for _ in range(r.u32()):
        pid = r.pod_id()
        pages = [(r.u32(), r.u64()) for _ in range(r.u32())]
        m.page_tables[pid] = pages
    for _ in range(r.u32()):
        page_no = r.u64()
        pid = r.pod_id()
        m.global_index[page_no] = (pid, r.u32())
    if r.off != len(data):
        raise MalformedManifest("trailing bytes")
    return m


class StorageBackend:
    """Append-only pod/manifest store. Pods are never rewritten or deleted."""

    def write_pod(self, pod_id: PodId, data: bytes) -> None:
        raise NotImplementedError

    def read_pod(self, pod_id: PodId) -> bytes:
        raise NotImplementedError

    def has_pod(self, pod_id: PodId) -> bool:
        raise NotImplementedError

    def write_manifest(self, manifest: SaveManifest) -> int:
        """Persist a manifest; returns its encoded size in bytes."""
        raise NotImplementedError

    def read_manifest(self, time_id: int) -> SaveManifest:
        raise NotImplementedError

    def list_time_ids(self) -> List[int]:
        raise NotImplementedError

    def write_meta(self, meta: dict) -> None:
        raise NotImplementedError

    def pod_bytes_total(self) -> int:
        raise NotImplementedError

    def manifest_bytes_total(self) -> int:
        raise NotImplementedError

    def pod_count(self) -> int:
        raise NotImplementedError


class MemoryBackend(StorageBackend):
    def __init__(self) -> None:
        self._pods: Dict[PodId, bytes] = {}
        self._manifests: Dict[int, bytes] = {}
        self.meta: dict = {}

    def write_pod(self, pod_id: PodId, data: bytes) -> None:
        if pod_id in self._pods:
            raise DuplicatePodId(pod_id)
        self._pods[pod_id] = data

    def read_pod(self, pod_id: PodId) -> bytes:
        try:
            return self._pods[pod_id]
        except KeyError:
            raise NotFound(pod_id) from None

    def has_pod(self, pod_id: PodId) -> bool:
        return pod_id in self._pods

    def write_manifest(self, manifest: SaveManifest) -> int:
        data = encode_manifest(manifest)
        self._manifests[manifest.time_id] = data
        return len(data)

    def read_manifest(self, time_id: int) -> SaveManifest:
        try:
            return decode_manifest(self._manifests[time_id])
        except KeyError:
            raise NotFound(time_id) from None

    def list_time_ids(self) -> List[int]:
        return sorted(self._manifests)

    def write_meta(self, meta: dict) -> None:
        self.meta = dict(meta)

    def pod_bytes_total(self) -> int:
        return sum(len(b) for b in self._pods.values())

    def manifest_bytes_total(self) -> int:
        return sum(len(b) for b in self._manifests.values())

    def pod_count(self) -> int:
        return len(self._pods)


class DirectoryBackend(StorageBackend):
    def __init__(self, root: str):
        self.root = Path(root)
        self.pods_dir = self.root / "pods"
        self.manifests_dir = self.root / "manifests"
        try:
            self.pods_dir.mkdir(parents=True, exist_ok=True)
            self.manifests_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise IoFailure(str(exc)) from exc

    def _pod_path(self, pod_id: PodId) -> Path:
        return self.pods_dir / f"{pod_id.time_id}_{pod_id.serial}.pod"

    def write_pod(self, pod_id: PodId, data: bytes) -> None:
        path = self._pod_path(pod_id)
        if path.exists():
            raise DuplicatePodId(pod_id)
        try:
            path.write_bytes(data)
        except OSError as exc:
            raise IoFailure(str(exc)) from exc

    def read_pod(self, pod_id: PodId) -> bytes:
        path = self._pod_path(pod_id)
        if not path.exists():
            raise NotFound(pod_id)
        return path.read_bytes()

    def has_pod(self, pod_id: PodId) -> bool:
        return self._pod_path(pod_id).exists()

    def write_manifest(self, manifest: SaveManifest) -> int:
        data = encode_manifest(manifest)
        try:
            (self.manifests_dir / f"{manifest.time_id}.mft").write_bytes(data)
        except OSError as exc:
            raise IoFailure(str(exc)) from exc
        return len(data)

    def read_manifest(self, time_id: int) -> SaveManifest:
        path = self.manifests_dir / f"{time_id}.mft"
        if not path.exists():
            raise NotFound(time_id)
        return decode_manifest(path.read_bytes())

    def list_time_ids(self) -> List[int]:
        return sorted(int(p.stem) for p in self.manifests_dir.glob("*.mft"))

    def write_meta(self, meta: dict) -> None:
        (self.root / "store.meta").write_text(json.dumps(meta, indent=2, sort_keys=True))

    def pod_bytes_total(self) -> int:
        return sum(p.stat().st_size for p in self.pods_dir.glob("*.pod"))

    def manifest_bytes_total(self) -> int:
        return sum(p.stat().st_size for p in self.manifests_dir.glob("*.mft"))

    def pod_count(self) -> int:
        return sum(1 for _ in self.pods_dir.glob("*.pod"))


class DelayInjectingBackend:
    """Wraps a backend, sleeping before each pod write (for async tests).

    Duck-typed on purpose: everything except write_pod passes through.
    """

    def __init__(self, inner: StorageBackend, write_delay_s: float):
        self.inner = inner
        self.write_delay_s = write_delay_s

    def write_pod(self, pod_id: PodId, data: bytes) -> None:
        if self.write_delay_s > 0:
            _time.sleep(self.write_delay_s)
        self.inner.write_pod(pod_id, data)

    def __getattr__(self, item):
        return getattr(self.inner, item)

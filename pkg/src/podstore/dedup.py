"""Change detection: skip writing pods whose bytes were seen before.

A capacity-bounded thesaurus maps pod-byte digests to the pod id that was
actually written. Re-encountered bytes are skipped and recorded as
synonyms pointing at the written pod. Eviction is LIFO: making room pops
the most recently inserted prior entries.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Set, Union

import xxhash

from .errors import CapacityTooSmall, UnknownPodId
from .podding import PodId

# Accounting per entry: 16-byte digest + fixed-size pod id (two u64s).
ENTRY_BYTES = 32

DigestFn = Callable[[bytes], bytes]


def xxh3_128(data: bytes) -> bytes:
    return xxhash.xxh3_128_digest(data)


def blake2b_128(data: bytes) -> bytes:
    return hashlib.blake2b(data, digest_size=16).digest()


def truncated_8bit(data: bytes) -> bytes:
    """Deliberately collision-prone digest for exercising the failure path."""
    return xxhash.xxh3_128_digest(data)[:1]


DIGESTS: Dict[str, DigestFn] = {
    "xxh3-128": xxh3_128,
    "blake2b-128": blake2b_128,
    "trunc-8": truncated_8bit,
}


def digest(pod_bytes: bytes, algorithm: str = "xxh3-128") -> bytes:
    return DIGESTS[algorithm](pod_bytes)


@dataclass(frozen=True)
class MustWrite:
    pass


@dataclass(frozen=True)
class Skip:
    canonical: PodId


WriteDecision = Union[MustWrite, Skip]


class PodThesaurus:
    def __init__(self, capacity_bytes: int, digest_fn: DigestFn = xxh3_128):
        if capacity_bytes < ENTRY_BYTES:
            raise CapacityTooSmall(
                f"capacity {capacity_bytes} cannot hold one {ENTRY_BYTES}-byte entry"
            )
        self.capacity_bytes = capacity_bytes
        self.digest_fn = digest_fn
        self.entries: Dict[bytes, PodId] = {}
        self.insertion_order: List[bytes] = []

    @property
    def footprint_bytes(self) -> int:
        return len(self.entries) * ENTRY_BYTES

    def lookup(self, digest_value: bytes) -> Optional[PodId]:
        return self.entries.get(digest_value)

    def insert(self, digest_value: bytes, pod_id: PodId) -> None:
        while self.footprint_bytes + ENTRY_BYTES > self.capacity_bytes:
            evicted = self.insertion_order.pop()
            del self.entries[evicted]
        self.entries[digest_value] = pod_id
        self.insertion_order.append(digest_value)


class SynonymTable:
    """One-hop links from never-written pod ids to the written pod holding
    their bytes."""

    def __init__(self) -> None:
        self.links: Dict[PodId, PodId] = {}
        self.written: Set[PodId] = set()

    def register_written(self, pod_id: PodId) -> None:
        self.written.add(pod_id)

    def record(self, alias: PodId, canonical: PodId) -> None:
        assert canonical in self.written, "synonym must target a written pod"
        self.links[alias] = canonical


def resolve(syn: SynonymTable, pod_id: PodId) -> PodId:
    if pod_id in syn.written:
        return pod_id
    try:
        return syn.links[pod_id]
    except KeyError:
        raise UnknownPodId(pod_id) from None


def check_and_register(th: PodThesaurus, syn: SynonymTable, pod) -> WriteDecision:
    """Decide whether a freshly encoded pod's bytes must hit storage.

    On a miss the digest is inserted (evicting LIFO to fit) and the caller
    must write the bytes. On a hit nothing is written; the pod id becomes a
    synonym of the stored, already-written pod id.
    """
    d = th.digest_fn(pod.bytes)
    hit = th.lookup(d)
    if hit is not None:
        syn.record(pod.id, hit)
        return Skip(hit)
    th.insert(d, pod.id)
    syn.register_written(pod.id)
    return MustWrite()

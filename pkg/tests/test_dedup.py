import random

import pytest

from podstore.errors import CapacityTooSmall, UnknownPodId
from podstore.dedup import (
    ENTRY_BYTES,
    MustWrite,
    PodThesaurus,
    Skip,
    SynonymTable,
    blake2b_128,
    check_and_register,
    digest,
    resolve,
    truncated_8bit,
    xxh3_128,
)
from podstore.podding import Pod, PodId


def make_pod(time_id, serial, data):
    return Pod(PodId(time_id, serial), members=[0], bytes=data)


class TestDigest:
    def test_equal_inputs_equal_digests(self):
        assert digest(b"same bytes") == digest(b"same bytes")
        assert len(digest(b"x")) == 16
        assert len(blake2b_128(b"x")) == 16

    def test_single_byte_flip_changes_digest(self):
        rng = random.Random(1)
        for _ in range(10_000):
            data = bytearray(rng.randbytes(rng.randint(1, 64)))
            before = xxh3_128(bytes(data))
            data[rng.randrange(len(data))] ^= 1 << rng.randrange(8)
            assert xxh3_128(bytes(data)) != before

    def test_no_collisions_in_large_sample(self):
        rng = random.Random(2)
        seen = set()
        for i in range(100_000):
            d = xxh3_128(i.to_bytes(8, "little") + rng.randbytes(4))
            assert d not in seen
            seen.add(d)


class TestThesaurus:
    def test_first_pod_must_write(self):
        th = PodThesaurus(1024)
        syn = SynonymTable()
        assert isinstance(check_and_register(th, syn, make_pod(1, 0, b"abc")), MustWrite)

    def test_unchanged_pod_skips(self):
        th = PodThesaurus(1024)
        syn = SynonymTable()
        check_and_register(th, syn, make_pod(1, 0, b"abc"))
        decision = check_and_register(th, syn, make_pod(2, 0, b"abc"))
        assert decision == Skip(PodId(1, 0))
        assert syn.links[PodId(2, 0)] == PodId(1, 0)

    def test_lifo_eviction_trace(self):
        th = PodThesaurus(ENTRY_BYTES)  # exactly one entry
        syn = SynonymTable()
        assert isinstance(check_and_register(th, syn, make_pod(1, 0, b"first")), MustWrite)
        assert isinstance(check_and_register(th, syn, make_pod(1, 1, b"second")), MustWrite)
        # first was evicted to admit second, so it must be rewritten
        assert isinstance(check_and_register(th, syn, make_pod(2, 0, b"first")), MustWrite)

    def test_footprint_never_exceeds_capacity(self):
        th = PodThesaurus(ENTRY_BYTES * 3)
        syn = SynonymTable()
        for i in range(50):
            check_and_register(th, syn, make_pod(1, i, i.to_bytes(4, "little")))
            assert th.footprint_bytes <= th.capacity_bytes

    def test_capacity_below_one_entry(self):
        with pytest.raises(CapacityTooSmall):
            PodThesaurus(ENTRY_BYTES - 1)

    def test_unbounded_capacity_counts_distinct_byte_sequences(self):
        th = PodThesaurus(1 << 20)
        syn = SynonymTable()
        rng = random.Random(3)
        blobs = [rng.randbytes(8) for _ in range(40)]
        writes = 0
        picked = set()
        for i in range(200):
            data = rng.choice(blobs)
            picked.add(data)
            if isinstance(check_and_register(th, syn, make_pod(1, i, data)), MustWrite):
                writes += 1
        assert writes == len(picked)


class TestResolve:
    def test_written_pod_is_identity(self):
        syn = SynonymTable()
        syn.register_written(PodId(1, 0))
        assert resolve(syn, PodId(1, 0)) == PodId(1, 0)

    def test_synonym_one_hop(self):
        syn = SynonymTable()
        syn.register_written(PodId(1, 0))
        syn.record(PodId(2, 0), PodId(1, 0))
        assert resolve(syn, PodId(2, 0)) == PodId(1, 0)

    def test_synonyms_always_target_written_pods(self):
        th = PodThesaurus(1 << 16)
        syn = SynonymTable()
        rng = random.Random(4)
        blobs = [rng.randbytes(6) for _ in range(10)]
        for i in range(100):
            check_and_register(th, syn, make_pod(1, i, rng.choice(blobs)))
        for canonical in syn.links.values():
            assert canonical in syn.written  # one hop, never a chain

    def test_unknown_pod(self):
        with pytest.raises(UnknownPodId):
            resolve(SynonymTable(), PodId(9, 9))


class TestSkipImpliesEqualBytes:
    def test_shadow_byte_map(self):
        th = PodThesaurus(1 << 16)
        syn = SynonymTable()
        shadow = {}
        rng = random.Random(5)
        blobs = [rng.randbytes(16) for _ in range(12)]
        for i in range(300):
            data = rng.choice(blobs)
            pod = make_pod(1, i, data)
            decision = check_and_register(th, syn, pod)
            if isinstance(decision, MustWrite):
                shadow[pod.id] = data
            else:
                assert shadow[decision.canonical] == data


class TestTruncatedDigestCollision:
    def test_wrong_skip_surfaces_error_on_load(self):
        """With a deliberately collision-prone digest, a wrong skip breaks
        reference resolution at load time instead of silently returning
        other data.

        Construction: the container's children are replaced with fresh leaf
        objects each round, so every round's container pod references
        different memo pages. When two container pods collide in the 8-bit
        digest, the survivor's references point at pages the newer manifest
        never allocated.
        """
        from podstore.errors import MalformedBytes, UnresolvedGlobalId
        from podstore.graph import ObjectGraph
        from podstore.storage import MemoryBackend
        from podstore.store import CheckpointStore, StoreConfig

        graph = ObjectGraph()
        container = graph.new_container([graph.new_leaf(b"const")])
        graph.bind("x", container)
        store = CheckpointStore(
            graph, MemoryBackend(), StoreConfig(digest="trunc-8", optimizer="split-all")
        )
        saw_reference_failure = False
        for step in range(400):
            node = graph.nodes[container]
            node.children = [graph.new_leaf(b"const") for _ in range(1 + step % 3)]
            t = store.save({"x"})
            try:
                store.load({"x"}, t)
            except (MalformedBytes, UnresolvedGlobalId):
                saw_reference_failure = True
                break
        assert saw_reference_failure, "8-bit digest never collided in 400 rounds"

import math
import random

import numpy as np
import pytest
from hypothesis import example, given, settings, strategies as st

from seqoram.blockstore import BlockStore
from seqoram.crypto import BlockCipher, IvSource
from seqoram.errors import CorruptionError
from seqoram.levelmap import (INTERNAL, LEAF, MapBuilder, MapLeaf, NodeIO, SequentialPlacement,
                              decode_node, encode_leaf, map_lookup, scan_lookup,
                              tree_write_count)
from seqoram.params import SENTINEL

KEY = bytes(32)


def node_io(blocks=4096, block_size=512):
    store = BlockStore.in_memory(block_size, blocks)
    return NodeIO(store, BlockCipher(KEY, "test"), IvSource(KEY)), store


def buckets_from(addrs, beta):
    """Sorted addresses cut into beta-wide buckets, padded with fakes."""
    addrs = sorted(addrs)
    out = []
    for i in range(0, max(len(addrs), 1), beta):
        chunk = addrs[i:i + beta]
        out.append(chunk + [SENTINEL] * (beta - len(chunk)))
    return out


def build(buckets, beta):
    io, store = node_io(write_count_oracle(len(buckets), beta) + 1, 4096 if beta > 32 else 512)
    b = MapBuilder(io, beta, SequentialPlacement(1))
    for n, addrs in enumerate(buckets):
        b.append_leaf(MapLeaf([(a, n) for a in addrs]))
    return b, io, store


class _Fixed:
    """Leaves at 1.., internal nodes after them, per height."""

    def __init__(self, leaves, fanout):
        self.base = 1 + leaves
        self.counts, n = [], leaves
        while n > 1:
            n = -(-n // fanout)
            self.counts.append(n)

    def leaf(self, m):
        return 1 + m

    def internal(self, h, m):
        return self.base + sum(self.counts[:h - 1]) + m


def write_count_oracle(leaves, fanout):
    """Nodes of a complete bottom-up tree: leaves plus every level above."""
    total = 0
    level = leaves
    while True:
        total += level
        if level == 1:
            return total
        level = math.ceil(level / fanout)


@pytest.mark.parametrize("k", [2, 4])
@pytest.mark.parametrize("fanout", [2, 4, 256])
@pytest.mark.parametrize("i", range(7))
def test_build_write_count(k, fanout, i):
    leaves = k ** i
    b, _, store = build(buckets_from(range(leaves), 1), fanout)
    b.finalize()
    expected = write_count_oracle(leaves, fanout)
    assert b.writes == expected == store.stats.physical_writes
    assert tree_write_count(leaves, fanout) == expected
    assert b.writes <= 2 * leaves


@given(st.sets(st.integers(0, 10**6), min_size=1, max_size=300), st.sampled_from([2, 4, 8]))
@example(set(range(17)), 2)  # odd leaf counts make a taller fanout-2 tree
@settings(max_examples=40, deadline=None)
def test_lookup_matches_scan(addrs, beta):
    buckets = buckets_from(addrs, beta)
    b, io, _ = build(buckets, beta)
    root = b.finalize()
    probe = list(addrs) + [a + 1 for a in addrs] + [0, 10**6 + 7]
    for a in probe:
        assert map_lookup(io, root, a) == scan_lookup(lambda: buckets, a)


def test_checkpoint_partial_lookups():
    rng = random.Random(3)
    beta = 4
    addrs = rng.sample(range(10_000), 150)
    buckets = buckets_from(addrs, beta)
    io, store = node_io()
    b = MapBuilder(io, beta, _Fixed(len(buckets), beta), checkpoint=True,
                   total_leaves=len(buckets))
    heights = b.internal_heights
    for n, bucket in enumerate(buckets):
        before = b.writes
        b.append_leaf(MapLeaf([(a, n) for a in bucket]))
        # constant cost per leaf: the leaf plus one open node per height
        assert b.writes - before == 1 + heights
        done = buckets[:n + 1]
        for a in rng.sample(addrs, 10):
            assert b.lookup(a) == scan_lookup(lambda: done, a)
    root = b.finalize()
    for a in addrs:
        assert map_lookup(io, root, a) == scan_lookup(lambda: buckets, a)


def test_resume_rebuilds_open_nodes():
    beta = 4
    buckets = buckets_from(range(0, 400, 3), beta)
    io, _ = node_io()
    place = _Fixed(len(buckets), beta)
    b = MapBuilder(io, beta, place, checkpoint=True, total_leaves=len(buckets))
    half = len(buckets) // 2
    for n in range(half):
        b.append_leaf(MapLeaf([(a, n) for a in buckets[n]]))
    r = MapBuilder.resume(io, beta, place, len(buckets), half, place.leaf(0))
    for n in range(half, len(buckets)):
        r.append_leaf(MapLeaf([(a, n) for a in buckets[n]]))
    root = r.finalize()
    for a in range(0, 400):
        assert map_lookup(io, root, a) == scan_lookup(lambda: buckets, a)


def test_leaf_encoding_rules():
    kind, entries = decode_node(encode_leaf([3, 7, SENTINEL, SENTINEL], 5))
    assert kind == LEAF and list(entries["value"]) == [5] * 4
    with pytest.raises(CorruptionError):
        encode_leaf([7, 3, SENTINEL], 0)
    with pytest.raises(CorruptionError):
        encode_leaf([SENTINEL, 3], 0)


def test_unsorted_leaves_rejected():
    io, _ = node_io()
    b = MapBuilder(io, 4, SequentialPlacement(1))
    b.append_leaf(MapLeaf([(10, 0), (20, 0)]))
    with pytest.raises(CorruptionError):
        b.append_leaf(MapLeaf([(15, 1)]))


def test_bad_node_type():
    with pytest.raises(CorruptionError):
        decode_node(bytes(64))
    assert INTERNAL != LEAF

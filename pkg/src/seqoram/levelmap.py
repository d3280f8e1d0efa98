"""Per-run B+ tree from logical address to bucket number.

Trees are written once, bottom-up, while the run they index is written.
Leaf ``m`` indexes bucket ``m`` and holds one entry per record slot, fakes
carrying the sentinel address, so the rank of an address inside its leaf is
its offset inside the bucket.  Internal entries hold the maximum address
below each child and the child's physical block index.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from .errors import CapacityError, CorruptionError
from .params import MAP_ENTRY, MAP_HEADER, SENTINEL

LEAF, INTERNAL = 1, 2
ENTRY = np.dtype([("key", "<u8"), ("value", "<u4")])
assert ENTRY.itemsize == MAP_ENTRY
_HEADER = struct.Struct("<BBHI")


@dataclass
class MapLeaf:
    entries: list[tuple[int, int]]

    @property
    def max_key(self) -> int:
        real = [a for a, _ in self.entries if a != SENTINEL]
        return real[-1] if real else SENTINEL

    @property
    def min_key(self) -> int:
        return self.entries[0][0] if self.entries else SENTINEL


@dataclass
class MapInternal:
    keys: list[tuple[int, int]]


def encode_node(kind: int, keys, values) -> bytes:
    arr = np.zeros(len(keys), dtype=ENTRY)
    arr["key"] = keys
    arr["value"] = values
    return _HEADER.pack(kind, 0, len(keys), 0) + arr.tobytes()


def encode_leaf(addrs, bucket: int) -> bytes:
    addrs = np.asarray(addrs, dtype=np.uint64)
    real = addrs[addrs != np.uint64(SENTINEL)]
    if real.size and (np.any(real[1:] <= real[:-1])
                      or np.any(addrs[:real.size] == np.uint64(SENTINEL))):
        raise CorruptionError("leaf addresses must be strictly increasing with fakes last")
    return encode_node(LEAF, addrs, np.full(len(addrs), bucket, dtype=np.uint32))


def decode_node(payload: bytes) -> tuple[int, np.ndarray]:
    kind, _, count, _ = _HEADER.unpack_from(payload)
    if kind not in (LEAF, INTERNAL):
        raise CorruptionError(f"bad map node type {kind}")
    end = MAP_HEADER + count * MAP_ENTRY
    if end > len(payload):
        raise CorruptionError("map node entry count overflows block")
    return kind, np.frombuffer(payload[MAP_HEADER:end], dtype=ENTRY)


class Placement(Protocol):
    def leaf(self, m: int) -> int: ...
    def internal(self, height: int, m: int) -> int: ...


class SequentialPlacement:
    """Nodes laid out in write order from ``start``: leaves, then a parent
    right after its children, as in a streaming bulk load."""

    def __init__(self, start: int, end: int | None = None):
        self.cursor = start
        self.end = end

    def _next(self) -> int:
        if self.end is not None and self.cursor >= self.end:
            raise CapacityError("map region full")
        self.cursor += 1
        return self.cursor - 1

    def leaf(self, m: int) -> int:
        return self._next()

    def internal(self, height: int, m: int) -> int:
        return self._next()


class NodeIO:
    """Seal/unseal map nodes to single physical blocks."""

    def __init__(self, store, cipher, ivsrc):
        self.store = store
        self.cipher = cipher
        self.ivsrc = ivsrc

    def seal(self, payload: bytes) -> bytes:
        return self.cipher.seal(payload, self.ivsrc.take(1)[0], self.store.block_size)

    def write(self, index: int, payload: bytes) -> None:
        self.store.write_block(index, self.seal(payload))

    def read(self, index: int) -> tuple[int, np.ndarray]:
        return decode_node(self.cipher.unseal(self.store.read_block(index)))


@dataclass
class MapRoot:
    index: int
    height: int  # node levels; 1 means the root is the only leaf
    leaves: int
    node: tuple[int, np.ndarray] | None = field(default=None, repr=False)


def _descend(io: NodeIO, node: tuple[int, np.ndarray], addr: int):
    kind, entries = node
    while kind == INTERNAL:
        pos = int(np.searchsorted(entries["key"], np.uint64(addr), side="left"))
        if pos == len(entries):
            return None
        kind, entries = io.read(int(entries["value"][pos]))
    keys = entries["key"]
    pos = int(np.searchsorted(keys, np.uint64(addr), side="left"))
    if pos == len(keys) or int(keys[pos]) != addr:
        return None
    return int(entries["value"][pos]), pos


def map_lookup(io: NodeIO, root: MapRoot, addr: int):
    """Return ``(bucket_number, offset_in_bucket)`` or ``None``."""
    if addr == SENTINEL:
        return None
    if root.node is None:
        root.node = io.read(root.index)
    return _descend(io, root.node, addr)


class MapBuilder:
    """Bottom-up tree construction.

    In the default mode an internal node is written once it holds ``fanout``
    entries and leftovers are written by :meth:`finalize`.  With
    ``checkpoint=True`` (and the final leaf count known up front) every leaf
    append rewrites the one open node per internal height, so each append
    costs the same number of block writes and the partial tree is always on
    disk.
    """

    def __init__(self, io: NodeIO, fanout: int, placement: Placement,
                 checkpoint: bool = False, total_leaves: int | None = None):
        if checkpoint and total_leaves is None:
            raise ValueError("checkpoint mode needs the final leaf count")
        self.io = io
        self.fanout = fanout
        self.placement = placement
        self.checkpoint = checkpoint
        self.total_leaves = total_leaves
        self.leaves = 0
        self.first_leaf: int | None = None
        self.last_key: int | None = None
        self.finalized: MapRoot | None = None
        self.writes = 0
        if checkpoint:
            h, n = 0, total_leaves
            while n > 1:
                n = -(-n // fanout)
                h += 1
            self.internal_heights = h
            self.open: list[list[list[int]]] = [[] for _ in range(h + 1)]
            self.open_index = [-1] * (h + 1)
        else:
            self.pending: list[list[tuple[int, int]]] = [[]]
            self.written_at: list[int] = [0]

    # construction --------------------------------------------------------

    def append_leaf(self, leaf: MapLeaf) -> None:
        index = self.placement.leaf(self.leaves)
        addrs = [a for a, _ in leaf.entries]
        bucket = leaf.entries[0][1] if leaf.entries else self.leaves
        self.io.write(index, encode_leaf(addrs, bucket))
        self.writes += 1
        self.note_leaf(leaf.max_key, index, leaf.min_key)

    def note_leaf(self, max_key: int, index: int, min_key: int | None = None) -> None:
        """Register a leaf that the caller already wrote at ``index``."""
        if self.finalized is not None:
            raise RuntimeError("builder already finalized")
        if (min_key is not None and min_key != SENTINEL and self.last_key is not None
                and self.last_key != SENTINEL and min_key <= self.last_key):
            raise CorruptionError("duplicate or unsorted address across leaves")
        if self.first_leaf is None:
            self.first_leaf = index
        if max_key != SENTINEL:
            self.last_key = max_key
        ell = self.leaves
        self.leaves += 1
        if self.checkpoint:
            if self.leaves > self.total_leaves:
                raise CapacityError("more leaves than the run holds")
            self._checkpoint(ell, max_key, index)
        else:
            self._push(0, max_key, index)

    def _push(self, h: int, key: int, index: int) -> None:
        level = self.pending[h]
        level.append((key, index))
        if len(level) == self.fanout:
            self._emit(h)

    def _emit(self, h: int) -> None:
        level = self.pending[h]
        if len(self.pending) == h + 1:
            self.pending.append([])
            self.written_at.append(0)
        index = self.placement.internal(h + 1, self.written_at[h + 1])
        self.written_at[h + 1] += 1
        keys = [k for k, _ in level]
        self.io.write(index, encode_node(INTERNAL, keys, [i for _, i in level]))
        self.writes += 1
        self.pending[h] = []
        self._push(h + 1, keys[-1], index)

    def _checkpoint(self, ell: int, key: int, leaf_index: int) -> None:
        f = self.fanout
        for h in range(1, self.internal_heights + 1):
            m = ell // f ** h
            if self.open_index[h] != m:
                self.open[h] = []
                self.open_index[h] = m
            child = leaf_index if h == 1 else self.placement.internal(h - 1, ell // f ** (h - 1))
            node = self.open[h]
            if node and node[-1][1] == child:
                node[-1][0] = key
            else:
                node.append([key, child])
            self.io.write(self.placement.internal(h, m),
                          encode_node(INTERNAL, [k for k, _ in node], [c for _, c in node]))
            self.writes += 1

    def finalize(self) -> MapRoot:
        if self.finalized is not None:
            return self.finalized
        if self.leaves == 0:
            raise CorruptionError("cannot finalize an empty tree")
        if self.checkpoint:
            h = self.internal_heights
            if h == 0:
                root = MapRoot(self.first_leaf, 1, self.leaves)
            else:
                node = self.open[h]
                root = MapRoot(self.placement.internal(h, 0), h + 1, self.leaves,
                               (INTERNAL, _entries(node)))
        else:
            h = 0
            while True:
                above = any(self.pending[j] for j in range(h + 1, len(self.pending)))
                if len(self.pending[h]) == 1 and not above:
                    break
                if self.pending[h]:
                    self._emit(h)
                h += 1
            key, index = self.pending[h][0]
            root = MapRoot(index, h + 1, self.leaves)
        self.finalized = root
        return root

    @classmethod
    def resume(cls, io: NodeIO, fanout: int, placement, total_leaves: int,
               leaves: int, first_leaf: int) -> "MapBuilder":
        """Rebuild a checkpoint-mode builder from the open nodes on disk."""
        b = cls(io, fanout, placement, checkpoint=True, total_leaves=total_leaves)
        b.leaves = leaves
        b.first_leaf = first_leaf
        for h in range(1, b.internal_heights + 1):
            m = (leaves - 1) // fanout ** h
            _, entries = io.read(placement.internal(h, m))
            b.open[h] = [[int(k), int(v)] for k, v in zip(entries["key"], entries["value"])]
            b.open_index[h] = m
        if b.internal_heights and b.open[1] and b.open[1][-1][0] != SENTINEL:
            b.last_key = b.open[1][-1][0]
        return b

    # reads against a partial tree ------------------------------------------

    def partial_root(self) -> tuple[int, np.ndarray] | None:
        """In-memory root of the tree built so far (checkpoint mode)."""
        if not self.checkpoint or self.leaves == 0:
            return None
        h = self.internal_heights
        if h == 0:
            return None
        return INTERNAL, _entries(self.open[h])

    def lookup(self, addr: int):
        if self.finalized is not None:
            return map_lookup(self.io, self.finalized, addr)
        if self.leaves == 0 or addr == SENTINEL:
            return None
        root = self.partial_root()
        if root is None:
            return _descend(self.io, self.io.read(self.first_leaf), addr)
        return _descend(self.io, root, addr)

    @property
    def memory_blocks(self) -> int:
        if self.checkpoint:
            return sum(1 for node in self.open if node)
        return sum(1 for level in self.pending if level)


def _entries(node) -> np.ndarray:
    arr = np.zeros(len(node), dtype=ENTRY)
    arr["key"] = [k for k, _ in node]
    arr["value"] = [c for _, c in node]
    return arr


def tree_write_count(leaves: int, fanout: int) -> int:
    """Blocks written by a default-mode build over ``leaves`` leaves."""
    total, n = leaves, leaves
    while n > 1:
        n = -(-n // fanout)
        total += n
    return total


def scan_lookup(records: Callable[[], list[list[int]]], addr: int):
    """Brute-force oracle: linear scan of per-bucket address lists."""
    for b, addrs in enumerate(records()):
        for off, a in enumerate(addrs):
            if a == addr and a != SENTINEL:
                return b, off
    return None

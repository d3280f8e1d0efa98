"""Amortized construction: a write queue over ``m`` levels of ``k^i``
buckets and a direct-offset last level.

A full level is merged into the level below it; merges cascade
deepest-first so every level is emptied before it receives new buckets.
A level's run sits right-aligned in its region, so an in-place ascending
merge of ``A`` new buckets into ``O`` old ones writes output slot ``s`` only
after the old bucket stored there has been read.  Small levels whose total
size fits the ``c``-bucket memory budget are mirrored in memory and written
as whole regions in one sweep right after the superblock.
"""
from __future__ import annotations

import struct

import numpy as np

from .core import FAKE, U64, OramBase, RecordStream, pad_bucket, pull
from .levelmap import INTERNAL, MapBuilder, MapRoot, NodeIO, encode_node, map_lookup
from .params import internal_node_counts


class LevelPlacement:
    """Leaves in the occupied slots, internal nodes packed from the start of
    the level's internal area."""

    def __init__(self, run, first_slot: int, leaves: int, beta: int, leaf_offset: int):
        self.run = run
        self.first_slot = first_slot
        self.leaf_offset = leaf_offset
        self.counts = internal_node_counts(leaves, beta)

    def leaf(self, m: int) -> int:
        return self.run.slot(self.first_slot + m) + self.leaf_offset

    def internal(self, height: int, m: int) -> int:
        return self.run.internal_base + sum(self.counts[:height - 1]) + m

    def root(self, leaves: int) -> MapRoot:
        h = len(self.counts)
        if h == 0:
            return MapRoot(self.leaf(0), 1, leaves)
        return MapRoot(self.internal(h, 0), h + 1, leaves)


class _Collect(NodeIO):
    """NodeIO that keeps sealed nodes in memory instead of writing them."""

    def __init__(self, io: NodeIO):
        super().__init__(io.store, io.cipher, io.ivsrc)
        self.blocks: dict[int, bytes] = {}

    def write(self, index: int, payload: bytes) -> None:
        self.blocks[index] = self.seal(payload)


class AmortizedOram(OramBase):
    mode = "amortized"

    def _structs(self) -> None:
        p, lay = self.params, self.layout
        self.m = lay.buffered_levels
        self.caps = [p.k ** i for i in range(self.m)]
        self.occ = [0] * self.m
        self.roots: list[MapRoot | None] = [None] * self.m
        self.mem: list[tuple[np.ndarray, np.ndarray] | None] = [None] * self.m
        self.cached = 0
        total = 0
        for cap in self.caps:
            if total + cap > p.c:
                break
            total += cap
            self.cached += 1
        self.leaf_offset = p.beta + lay.iv_blocks
        self.merges = 0
        self.last_merges = 0

    def _fresh(self) -> None:
        self._structs()

    def state_extra(self) -> bytes:
        return struct.pack(f"<{self.m}I", *self.occ)

    def _restore(self, extra: bytes, state) -> None:
        self._structs()
        self.occ = list(struct.unpack_from(f"<{self.m}I", extra))
        for i in range(self.m):
            if self.occ[i] == 0:
                continue
            self.roots[i] = self._placement(i, self.occ[i]).root(self.occ[i])
            if i < self.cached:
                got = self.io.read_buckets(self.layout.levels[i].slot(self.caps[i] - self.occ[i]),
                                           self.occ[i])
                self.mem[i] = (np.concatenate([a for a, _ in got]),
                               np.concatenate([q for _, q in got]))

    def _placement(self, level: int, leaves: int) -> LevelPlacement:
        return LevelPlacement(self.layout.levels[level], self.caps[level] - leaves, leaves,
                              self.params.beta, self.leaf_offset)

    def _stream(self, level: int) -> RecordStream:
        n = self.occ[level]
        run = self.layout.levels[level]
        return RecordStream(self.io, run, self.caps[level] - n, n, live=n > 0,
                            batch=self.params.c, memory=self.mem[level])

    # flush -----------------------------------------------------------------

    def _flush(self):
        addrs, payloads, _ = self.queue.drain()
        d = 0
        while d < self.m and self.occ[d] == self.caps[d]:
            d += 1
        if d == self.m:
            self._merge_last(self.m - 1)
            d = self.m - 1
        for j in range(d, 0, -1):
            self._merge(j - 1, j)
        self.occ[0] = 1
        self.mem[0] = (addrs, payloads)
        self.roots[0] = self._placement(0, 1).root(1)
        return self._sweep(min(d, self.cached - 1))

    def _clear(self, level: int) -> None:
        self.occ[level] = 0
        self.roots[level] = None
        self.mem[level] = None

    def _merge(self, src: int, dst: int) -> None:
        """Merge full level ``src`` into ``dst`` (a plain copy if empty)."""
        beta, B, c = self.params.beta, self.params.block_size, self.params.c
        A, O = self.occ[src], self.occ[dst]
        out_n = A + O
        first = self.caps[dst] - out_n
        newer, older = self._stream(src), self._stream(dst)
        self.merges += 1
        if dst < self.cached:
            parts = [pad_bucket(*pull(older, newer, beta), beta, B) for _ in range(out_n)]
            self._clear(src)
            self.occ[dst] = out_n
            self.mem[dst] = (np.concatenate([a for a, _ in parts]),
                             np.concatenate([p for _, p in parts]))
            self.roots[dst] = self._placement(dst, out_n).root(out_n)
            return
        run = self.layout.levels[dst]
        place = self._placement(dst, out_n)
        builder = MapBuilder(self.io.nodes, beta, place)
        w = 0
        while w < out_n:
            n = min(c, out_n - w)
            batch = []
            for j in range(n):
                a, p = pad_bucket(*pull(older, newer, beta), beta, B)
                batch.append((a, p, w + j))
            # old buckets under this output batch must be in memory first
            older.read_until(w + n - A)
            self.io.write_buckets(run.slot(first + w), batch)
            for a, _, j in batch:
                real = a[a != FAKE]
                builder.note_leaf(int(real[-1]) if real.size else int(FAKE),
                                  place.leaf(j), int(real[0]) if real.size else None)
            w += n
        self.roots[dst] = builder.finalize()
        self._clear(src)
        self.occ[dst] = out_n

    def _merge_last(self, src: int) -> None:
        beta, c = self.params.beta, self.params.c
        newer = self._stream(src)
        empty = RecordStream(self.io, None, 0, 0, live=False)
        last = self.layout.last
        L = self.layout.last_buckets
        blank = np.full(beta, FAKE, dtype=U64)
        self.last_merges += 1
        for b in range(0, L, c):
            n = min(c, L - b)
            got = self.io.read_buckets(last.slot(b), n, leaves=False)
            payloads = np.concatenate([p for _, p in got])
            a, p = pull(empty, newer, n * beta, (b + n) * beta)
            if a.size:
                payloads[a.astype(np.int64) - b * beta] = p
            self.io.write_buckets(last.slot(b), [(blank, payloads[j * beta:(j + 1) * beta], b + j)
                                                 for j in range(n)], leaves=False)
        self._clear(src)

    def _sweep(self, upto: int) -> np.ndarray:
        """Whole regions of cached levels ``0..upto``, contiguous from block 1."""
        beta, B = self.params.beta, self.params.block_size
        parts = []
        for i in range(upto + 1):
            run, cap, n = self.layout.levels[i], self.caps[i], self.occ[i]
            buckets = [self.io.fake_bucket() + (s,) for s in range(cap - n)]
            if n:
                addrs, payloads = self.mem[i]
                buckets += [(addrs[j * beta:(j + 1) * beta], payloads[j * beta:(j + 1) * beta], j)
                            for j in range(n)]
            parts.append(self.io._encode(buckets, leaves=True))
            area = sum(run.internal_counts)
            if area:
                nodes = _Collect(self.io.nodes)
                if n:
                    place = self._placement(i, n)
                    builder = MapBuilder(nodes, beta, place)
                    for j in range(n):
                        a = addrs[j * beta:(j + 1) * beta]
                        real = a[a != FAKE]
                        builder.note_leaf(int(real[-1]) if real.size else int(FAKE),
                                          place.leaf(j), int(real[0]) if real.size else None)
                    builder.finalize()
                blocks = np.zeros((area, B), dtype=np.uint8)
                for x in range(area):
                    sealed = nodes.blocks.get(run.internal_base + x)
                    if sealed is None:
                        sealed = nodes.seal(encode_node(INTERNAL, [], []))
                    blocks[x] = np.frombuffer(sealed, np.uint8)
                parts.append(blocks)
        return np.concatenate(parts)

    # reads -----------------------------------------------------------------

    def locate(self, addr: int):
        if addr in self.queue:
            return ("write_queue",)
        for i in range(self.m):
            if self._find(i, addr) is not None:
                return ("level", i)
        return ("last_level",)

    def _find(self, level: int, addr: int):
        n = self.occ[level]
        if n == 0:
            return None
        if self.mem[level] is not None:
            addrs, payloads = self.mem[level]
            pos = int(np.searchsorted(addrs, U64(addr)))
            if pos < len(addrs) and int(addrs[pos]) == addr:
                return payloads[pos].tobytes()
            return None
        hit = map_lookup(self.io.nodes, self.roots[level], addr)
        if hit is None:
            return None
        bucket, off = hit
        run = self.layout.levels[level]
        return self.io.read_record(run.slot(self.caps[level] - n + bucket), off)

    def _read(self, addr: int) -> bytes:
        hit = self.queue.get(addr)
        if hit is not None:
            return hit
        for i in range(self.m):
            hit = self._find(i, addr)
            if hit is not None:
                return hit
        beta = self.params.beta
        return self.io.read_record(self.layout.last.slot(addr // beta), addr % beta)

    def _read_range(self, start: int, count: int) -> list[bytes]:
        beta = self.params.beta
        out: list = [None] * count
        groups: dict = {}
        for i, a in enumerate(range(start, start + count)):
            hit = self.queue.get(a)
            if hit is not None:
                out[i] = hit
                continue
            for lv in range(self.m):
                n = self.occ[lv]
                if n == 0:
                    continue
                if self.mem[lv] is not None:
                    hit = self._find(lv, a)
                    if hit is not None:
                        out[i] = hit
                        break
                    continue
                found = map_lookup(self.io.nodes, self.roots[lv], a)
                if found is not None:
                    run = self.layout.levels[lv]
                    key = (run.slot(self.caps[lv] - n + found[0]), True)
                    groups.setdefault(key, []).append((i, a, None))
                    break
            else:
                groups.setdefault((self.layout.last.slot(a // beta), False), []).append(
                    (i, a, a % beta))
        return self._gather(out, groups, self._read)

    def _write(self, addr: int, data: bytes) -> None:
        self.queue.put(addr, data)
        if self.queue.full:
            self.flush()

    def level_occupancy(self, level: int) -> int:
        return self.occ[level]

    def stats(self) -> dict:
        st = super().stats()
        st.update(levels=self.m + 1, cached_levels=self.cached, merges=self.merges,
                  last_merges=self.last_merges)
        return st

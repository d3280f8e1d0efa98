"""Strictly deamortized construction (k = 2).

Every buffered level has two buffers of two generations each.  One buffer
takes writes from the level above while the other is merged, one output
bucket per flush, into the next level.  The last level is a direct-offset
array refreshed two buckets per flush.  The set of blocks written by flush
``t`` depends only on ``t`` and the parameters.

Schedule, with clock ``tau = t + 2`` for flush ``t``: level ``j`` writes
buffer ``(tau >> (j+1)) & 1``, generation ``(tau >> j) & 1``, bucket
``tau mod 2^j``.  Level 0 takes the sorted write queue; level ``j > 0`` takes
the next merged bucket of level ``j-1``'s other buffer.  The deepest
buffered level's merge buffer is overlaid onto last-level buckets
``2u, 2u+1`` at step ``u = tau mod 2^(top+1)``.
"""
from __future__ import annotations

import struct

import numpy as np

from .atm import AtmGeometry, AtmNode, PathCache, predict_location
from .core import FAKE, U64, OramBase, RecordStream, pad_bucket, pull
from .levelmap import INTERNAL, MapBuilder, MapRoot, encode_node, map_lookup
from .params import NEVER, SENTINEL


class GenState:
    __slots__ = ("valid", "builder", "root", "built", "written", "addrs")

    def __init__(self):
        self.addrs: dict[int, int] = {}  # addr -> flush counter, when tracking
        self.valid = False
        self.builder: MapBuilder | None = None
        self.root: MapRoot | None = None
        self.built = 0
        self.written = 0


def target(level: int, tau: int) -> tuple[int, int, int]:
    """(buffer, generation, bucket) that level ``level`` receives at ``tau``."""
    return (tau >> (level + 1)) & 1, (tau >> level) & 1, tau & ((1 << level) - 1)


def written_count(level: int, buf: int, gen: int, g: int) -> int:
    """Buckets written into the current instance of (buf, gen) after ``g``
    flushes, from the schedule alone."""
    tau_last = g + 1
    for d in range(1 << (level + 2)):
        tau = tau_last - d
        if tau < 2:
            return 0
        b, e, idx = target(level, tau)
        if (b, e) == (buf, gen):
            return idx + 1
    return 0


class DeamortizedOram(OramBase):
    mode = "deamortized"

    def _structs(self) -> None:
        lay = self.layout
        self.top = lay.buffered_levels - 1
        self.gens = [[[GenState() for _ in range(2)] for _ in range(2)]
                     for _ in range(lay.buffered_levels)]
        self.cursors = [[0, 0] for _ in range(lay.buffered_levels)]
        self.streams: list[list[RecordStream] | None] = [None] * lay.buffered_levels
        self.atm = self.params.atm
        self.atm_root_ctr = NEVER
        self.misses = 0
        self.predictions = 0
        # instrumentation: remember which addresses each generation holds
        self.track = False
        self.last_addrs: dict[int, int] = {}
        if self.atm:
            self.geo = AtmGeometry(self.params.N, self.params.beta)
            self.cache = PathCache(self.geo.height + 1)

    def _fresh(self) -> None:
        self._structs()

    def root_ctr(self) -> int:
        return self.atm_root_ctr

    # persistence -----------------------------------------------------------

    def state_extra(self) -> bytes:
        out = []
        for i in range(self.layout.buffered_levels):
            flags = 0
            for b in range(2):
                for e in range(2):
                    if self.gens[i][b][e].valid:
                        flags |= 1 << (2 * b + e)
            out.append(struct.pack("<BII", flags, *self.cursors[i]))
        return b"".join(out)

    def _restore(self, extra: bytes, state) -> None:
        self._structs()
        self.atm_root_ctr = state.root_ctr
        lay = self.layout
        size = struct.calcsize("<BII")
        for i in range(lay.buffered_levels):
            flags, c0, c1 = struct.unpack_from("<BII", extra, i * size)
            self.cursors[i] = [c0, c1]
            for b in range(2):
                for e in range(2):
                    st = self.gens[i][b][e]
                    st.written = written_count(i, b, e, self.g)
                    st.valid = bool(flags >> (2 * b + e) & 1)
                    if not st.valid:
                        continue
                    run = lay.runs[i][b][e]
                    st.built = st.written
                    if st.built == run.slots:
                        st.root = self._root_of(run)
                    else:
                        st.builder = MapBuilder.resume(self.io.nodes, self.params.beta, run,
                                                       run.slots, st.built, self._leaf_block(run, 0))

    def _leaf_block(self, run, idx: int) -> int:
        return run.slot(idx) + self.params.beta + self.layout.iv_blocks

    def _root_of(self, run) -> MapRoot:
        h = len(run.internal_counts)
        if h == 0:
            return MapRoot(self._leaf_block(run, 0), 1, run.slots)
        return MapRoot(run.internal(h, 0), h + 1, run.slots)

    # flush -----------------------------------------------------------------

    def _flush(self) -> None:
        t = self.g
        tau = t + 2
        if self.atm:
            self._stamp_atm(t)
        addrs, payloads, _ = self.queue.drain()
        self._emit(0, tau, addrs, payloads, t)
        for i in range(self.top):
            self._merge_step(i, tau)
        self._last_step(tau)

    def _stamp_atm(self, t: int) -> None:
        geo, q = self.geo, self.queue
        nodes = [a for a in q.items if geo.is_node(a)]
        for a in nodes:
            h, m = geo.locate(a)
            node = AtmNode.decode(q.items[a], self.params.beta)
            for j in range(self.params.beta):
                if geo.child_addr(h, m, j) in q.items:
                    node.ctrs[j] = t
            q.items[a] = node.encode(self.params.block_size)
        if geo.root in q.items:
            self.atm_root_ctr = t
        self.cache.invalidate(nodes)

    def _emit(self, level: int, tau: int, addrs, payloads, ctr=None) -> None:
        """Write one bucket into ``level`` at its scheduled position."""
        buf, gen, idx = target(level, tau)
        run = self.layout.runs[level][buf][gen]
        st = self.gens[level][buf][gen]
        if idx == 0:
            st.valid = True
            st.root = None
            st.built = 0
            st.written = 0
            st.addrs = {}
            st.builder = MapBuilder(self.io.nodes, self.params.beta, run,
                                    checkpoint=True, total_leaves=run.slots)
            if gen == 0:
                other = self.gens[level][buf][1]
                other.valid, other.builder, other.root, other.built = False, None, None, 0
                other.addrs = {}
        st.written = idx + 1
        if st.valid:
            self.io.write_buckets(run.slot(idx), [(addrs, payloads, idx)])
            real = addrs[addrs != FAKE]
            if self.track:
                st.addrs.update((a, ctr if isinstance(ctr, int) else ctr[a])
                                for a in real.tolist())
            st.builder.note_leaf(int(real[-1]) if real.size else SENTINEL,
                                 self._leaf_block(run, idx),
                                 int(real[0]) if real.size else None)
            st.built = idx + 1
            if st.built == run.slots:
                st.root = st.builder.finalize()
                st.builder = None
        else:
            # generation started before the clock reached it: same blocks,
            # fake content, never consulted
            self.io.write_buckets(run.slot(idx), [self.io.fake_bucket() + (idx,)])
            for h in range(1, len(run.internal_counts) + 1):
                self.io.nodes.write(run.internal(h, idx // self.params.beta ** h),
                                    encode_node(INTERNAL, [], []))

    def _streams(self, level: int, tau: int, step: int) -> list[RecordStream]:
        mbuf = 1 - ((tau >> (level + 1)) & 1)
        if step == 0:
            self.cursors[level] = [0, 0]
            self.streams[level] = None
        if self.streams[level] is None:
            self.streams[level] = [
                RecordStream(self.io, self.layout.runs[level][mbuf][e], 0,
                             self.layout.runs[level][mbuf][e].slots, self.cursors[level][e],
                             self.gens[level][mbuf][e].valid)
                for e in range(2)]
        return self.streams[level]

    def _pull(self, level: int, streams, count: int, bound: int | None = None):
        a, p = pull(streams[0], streams[1], count, bound)
        self.cursors[level] = [streams[0].pos, streams[1].pos]
        return a, p

    def _merge_step(self, level: int, tau: int) -> None:
        step = tau & ((1 << (level + 1)) - 1)
        streams = self._streams(level, tau, step)
        a, p = self._pull(level, streams, self.params.beta)
        addrs, payloads = pad_bucket(a, p, self.params.beta, self.params.block_size)
        self._emit(level + 1, tau, addrs, payloads, self._source_ctrs(level, tau, a))

    def _source_ctrs(self, level: int, tau: int, addrs) -> dict | None:
        """Counters of merged records: the newer source copy wins."""
        if not self.track:
            return None
        mb = self.gens[level][1 - ((tau >> (level + 1)) & 1)]
        return {a: max(mb[0].addrs.get(a, -1), mb[1].addrs.get(a, -1)) for a in addrs.tolist()}

    def _last_step(self, tau: int) -> None:
        top, beta = self.top, self.params.beta
        u = tau & ((1 << (top + 1)) - 1)
        streams = self._streams(top, tau, u)
        L = self.layout.last_buckets
        b0 = (2 * u) % L
        start = self.layout.last.slot(b0)
        old = self.io.read_buckets(start, 2, leaves=False)
        payloads = np.concatenate([old[0][1], old[1][1]])
        if 2 * u < L:
            a, p = self._pull(top, streams, 2 * beta, (b0 + 2) * beta)
            if a.size:
                payloads[a.astype(np.int64) - b0 * beta] = p
            if self.track:
                self.last_addrs.update(self._source_ctrs(top, tau, a))
        blank = np.full(beta, FAKE, dtype=U64)
        self.io.write_buckets(start, [(blank, payloads[:beta], b0),
                                      (blank, payloads[beta:], b0 + 1)], leaves=False)

    # reads -----------------------------------------------------------------

    def read_order(self):
        """(level, buffer, generation) in newest-first search order."""
        tau_last = self.g + 1
        for i in range(self.top + 1):
            w = (tau_last >> (i + 1)) & 1
            for b, e in ((w, 1), (w, 0), (1 - w, 1), (1 - w, 0)):
                yield i, b, e

    def _lookup_gen(self, level: int, buf: int, gen: int, addr: int):
        st = self.gens[level][buf][gen]
        if not st.valid or st.built == 0:
            return None
        if st.root is not None:
            hit = map_lookup(self.io.nodes, st.root, addr)
        else:
            hit = st.builder.lookup(addr)
        if hit is None:
            return None
        bucket, off = hit
        return self.io.read_record(self.layout.runs[level][buf][gen].slot(bucket), off)

    def _route(self, level: int, buf: int, gen: int, addr: int, memo: dict | None = None):
        """Leaf block of the generation's map that would hold ``addr``.
        ``memo`` keeps decoded nodes across calls within one range read."""
        st = self.gens[level][buf][gen]
        if not st.valid or st.built == 0:
            return None
        run = self.layout.runs[level][buf][gen]
        if st.root is not None:
            if st.root.height == 1:
                return st.root.index
            if st.root.node is None:
                st.root.node = self.io.nodes.read(st.root.index)
            node = st.root.node
        else:
            node = st.builder.partial_root()
            if node is None:
                return st.builder.first_leaf
        while True:
            _, entries = node
            pos = int(np.searchsorted(entries["key"], U64(addr)))
            if pos == len(entries):
                return None
            child = int(entries["value"][pos])
            if child < run.internal_base:
                return child
            if memo is None:
                node = self.io.nodes.read(child)
            else:
                if child not in memo:
                    memo[child] = self.io.nodes.read(child)
                node = memo[child]

    def _extent_lookup(self, level: int, buf: int, gen: int, addr: int):
        """One sequential read of the whole bucket extent (data, IVs and
        leaf) instead of three scattered block reads."""
        leaf = self._route(level, buf, gen, addr)
        if leaf is None:
            return None
        run = self.layout.runs[level][buf][gen]
        bucket = (leaf - run.base) // run.slot_blocks
        return self.io.read_extent_record(run.slot(bucket), addr)

    def _read_last(self, addr: int, whole: bool = False) -> bytes:
        if whole:
            beta = self.params.beta
            return self.io.read_extent_record(self.layout.last.slot(addr // beta), addr,
                                              leaves=False, offset=addr % beta)
        beta = self.params.beta
        return self.io.read_record(self.layout.last.slot(addr // beta), addr % beta)

    def locate(self, addr: int):
        """Ground truth: where the newest copy of ``addr`` is found by a
        full search.  Returns ``("write_queue",)``, ``("level", i, b, e)``
        or ``("last_level",)``."""
        if addr in self.queue:
            return ("write_queue",)
        for i, b, e in self.read_order():
            if self._lookup_gen(i, b, e, addr) is not None:
                return ("level", i, b, e)
        return ("last_level",)

    def tracked_holds(self, addr: int, ctr: int, loc) -> bool:
        """Whether the copy of ``addr`` flushed at ``ctr`` sits at ``loc``
        (a :class:`PredictResult`), from the tracking record of what each
        generation was written.  Needs ``track`` set before the first
        write."""
        if loc.location == "write_queue":
            return addr in self.queue
        if loc.location == "last_level":
            return self.last_addrs.get(addr) == ctr
        st = self.gens[loc.level][loc.buffer][loc.generation]
        return st.valid and st.addrs.get(addr) == ctr

    def _scan(self, addr: int) -> bytes:
        for i, b, e in self.read_order():
            hit = self._lookup_gen(i, b, e, addr)
            if hit is not None:
                return hit
        return self._read_last(addr)

    def _fetch(self, addr: int, ctr: int, whole: bool = False) -> bytes:
        """Read the record ``addr`` last flushed at ``ctr`` via prediction."""
        self.predictions += 1
        loc = predict_location(ctr, self.g, self.top)
        hit = None
        if loc.location == "write_queue":
            hit = self.queue.get(addr)
        elif loc.location == "level":
            lookup = self._extent_lookup if whole else self._lookup_gen
            hit = lookup(loc.level, loc.buffer, loc.generation, addr)
        else:
            return self._read_last(addr, whole)
        if hit is None:
            self.misses += 1
            hit = self._scan(addr)
        return hit

    def _node(self, addr: int, ctr: int, whole: bool = False) -> AtmNode:
        q = self.queue.get(addr)
        if q is not None:
            return AtmNode.decode(q, self.params.beta)
        cached = self.cache.get(addr)
        if cached is not None:
            return cached
        if ctr == NEVER:
            node = self.geo.blank(addr)
        else:
            node = AtmNode.decode(self._fetch(addr, ctr, whole), self.params.beta)
        self.cache.put(addr, node)
        return node

    def atm_lookup(self, addr: int) -> int | None:
        """Last flush counter of data address ``addr``, or None."""
        ctr = self._leaf_ctr(addr)
        return None if ctr == NEVER else ctr

    def _leaf_ctr(self, addr: int) -> int:
        path = self.geo.path(addr)
        leaf = path[0]
        if leaf in self.queue or self.cache.get(leaf) is not None:
            self.cache.hits += 1
            node = self._node(leaf, NEVER)
            return int(node.ctrs[self.geo.slot_of(addr)])
        self.cache.walks += 1
        nodes = path[::-1]
        ctr = self.atm_root_ctr
        for k, a in enumerate(nodes):
            node = self._node(a, ctr)
            child = nodes[k + 1] if k + 1 < len(nodes) else addr
            ctr = int(node.ctrs[self.geo.slot_of(child)])
        return ctr

    def _read(self, addr: int) -> bytes:
        hit = self.queue.get(addr)
        if hit is not None:
            return hit
        if not self.atm:
            return self._scan(addr)
        ctr = self._leaf_ctr(addr)
        if ctr == NEVER:
            return bytes(self.params.block_size)
        return self._fetch(addr, ctr)

    def _read_range(self, start: int, count: int) -> list[bytes]:
        if not self.atm:
            return super()._read_range(start, count)
        beta = self.params.beta
        out: list = [None] * count
        groups: dict = {}
        memo: dict = {}
        for i, a in enumerate(range(start, start + count)):
            hit = self.queue.get(a)
            if hit is not None:
                out[i] = hit
                continue
            ctr = self._leaf_ctr(a)
            if ctr == NEVER:
                out[i] = bytes(self.params.block_size)
                continue
            loc = predict_location(ctr, self.g, self.top)
            if loc.location == "last_level":
                groups.setdefault((self.layout.last.slot(a // beta), False), []).append(
                    (i, a, a % beta))
                continue
            leaf = None
            if loc.location == "level":
                self.predictions += 1
                leaf = self._route(loc.level, loc.buffer, loc.generation, a, memo)
            if leaf is None:
                out[i] = self._fetch(a, ctr)
                continue
            run = self.layout.runs[loc.level][loc.buffer][loc.generation]
            bucket = (leaf - run.base) // run.slot_blocks
            groups.setdefault((run.slot(bucket), True), []).append((i, a, None))

        def miss(a):
            self.misses += 1
            return self._scan(a)
        return self._gather(out, groups, miss)

    # writes ----------------------------------------------------------------

    def _write(self, addr: int, data: bytes) -> None:
        q = self.queue
        if addr in q:
            q.put(addr, data)
            return
        if self.atm:
            path = self.geo.path(addr)
            new = [a for a in path if a not in q]
            if len(q) + 1 + len(new) > self.params.beta:
                self.flush()
                new = path
            ctr = self.atm_root_ctr
            for k, a in enumerate(path[::-1]):
                # loading for an update is seek-bound: fetch whole extents
                node = self._node(a, ctr, whole=True)
                if a not in q:
                    q.put(a, node.encode(self.params.block_size))
                child = path[::-1][k + 1] if k + 1 < len(path) else addr
                ctr = int(node.ctrs[self.geo.slot_of(child)])
        q.put(addr, data)
        if q.full:
            self.flush()

    # introspection ---------------------------------------------------------

    def level_occupancy(self, level: int) -> dict[tuple[int, int], int]:
        """Buckets written per (buffer, generation), from the clock alone."""
        return {(b, e): written_count(level, b, e, self.g) for b in range(2) for e in range(2)}

    def true_occupancy(self, level: int) -> dict[tuple[int, int], int]:
        return {(b, e): self.gens[level][b][e].written for b in range(2) for e in range(2)}

    def stats(self) -> dict:
        st = super().stats()
        st.update(levels=self.top + 2, prediction_misses=self.misses,
                  predictions=self.predictions)
        if self.atm:
            st.update(cache_hits=self.cache.hits, atm_walks=self.cache.walks)
        return st

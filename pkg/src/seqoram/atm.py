"""Access time map: a B+ tree over logical addresses that records the flush
counter at which each block was last written, stored inside the ORAM itself.

Knowing a block's counter and the current clock, its level, buffer and
generation follow from the merge schedule alone, so a read touches one
level map instead of searching every level.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UsageError
from .params import NEVER, atm_level_counts


@dataclass(frozen=True)
class PredictResult:
    location: str  # write_queue | level | last_level
    level: int | None = None
    role: str | None = None  # write | merge, relative to the next flush
    buffer: int | None = None  # physical buffer index
    generation: int | None = None
    # intermediates: arrival time at the level, time spent there, and the
    # arrival position within the level's fill period
    i: int | None = None
    val: int | None = None
    r: int | None = None
    b: int | None = None


def predict_location(c: int, g: int, top: int) -> PredictResult:
    """Where a record flushed at counter ``c`` lives after ``g`` flushes.

    ``top`` is the deepest buffered level; the schedule clock for flush
    ``t`` is ``t + 2``.  Level ``i`` receives the record when its level
    ``i-1`` merge period starts, keeps it in the write buffer until that
    buffer's fill period ends, then serves it from the merge buffer for one
    more period while it is merged downward.
    """
    if c > g:
        raise UsageError(f"counter {c} is ahead of the clock {g}")
    if g == c:
        return PredictResult("write_queue")
    tau = g + 2
    arrive = c + 2
    for i in range(top + 1):
        span = 1 << (i + 1)
        end = (arrive // span + 1) * span
        buffer = (arrive // span) % 2
        gen = (arrive >> i) & 1
        if tau < end:
            return PredictResult("level", i, "write", buffer, gen,
                                 i, arrive, tau - arrive, arrive % span)
        if tau < end + span:
            return PredictResult("level", i, "merge", buffer, gen,
                                 i, arrive, tau - arrive, arrive % span)
        arrive = end
    return PredictResult("last_level", i=top + 1, val=arrive, r=tau - arrive)


def paper_bracket(c: int, g: int, top: int) -> PredictResult:
    """The phase-blind closed form: choose ``i`` by bracketing ``g - c``
    between partial sums of ``2^(j+1)``, then derive ``val``, ``r`` and
    ``b``.  Kept for comparison; it ignores the clock phase at which the
    record entered level 0 and so cannot be exact (see the tests)."""
    d = g - c
    if d <= 0:
        return PredictResult("write_queue")

    def partial(i):
        return sum(1 << (j + 1) for j in range(i + 1))

    for i in range(top + 1):
        if partial(i - 1) <= d < partial(i):
            span = 1 << (i + 1)
            val = c % span
            r = d - partial(i - 1)
            b = (val + d - r) % span
            if b + r > span:
                return PredictResult("level", i, "merge", None, None, i, val, r, b)
            if i > 0 and b + r <= span // 2:
                return PredictResult("level", i - 1, "merge", None, None, i, val, r, b)
            return PredictResult("level", i, "write", None, 0 if b < span // 2 else 1,
                                 i, val, r, b)
    return PredictResult("last_level")


class AtmGeometry:
    """Node addressing: node ``(h, m)`` covers children ``m*beta ..`` at
    height ``h-1`` (height 0 leaves cover data addresses) and lives at
    logical address ``N + offset(h) + m``."""

    def __init__(self, n: int, beta: int):
        self.n = n
        self.beta = beta
        self.counts = atm_level_counts(n, beta)
        self.height = len(self.counts)
        self.offsets = [n + sum(self.counts[:h]) for h in range(self.height)]
        self.root = self.offsets[-1]
        self.end = self.offsets[-1] + 1

    def addr(self, h: int, m: int) -> int:
        return self.offsets[h] + m

    def locate(self, addr: int) -> tuple[int, int]:
        for h in range(self.height - 1, -1, -1):
            if addr >= self.offsets[h]:
                return h, addr - self.offsets[h]
        raise UsageError(f"{addr} is not an ATM node")

    def is_node(self, addr: int) -> bool:
        return self.n <= addr < self.end

    def path(self, data_addr: int) -> list[int]:
        """Node addresses from leaf to root."""
        out, m = [], data_addr
        for h in range(self.height):
            m //= self.beta
            out.append(self.addr(h, m))
        return out

    def slot_of(self, child: int) -> int:
        """Entry index of a data address or node inside its parent."""
        if child < self.n:
            return child % self.beta
        _, m = self.locate(child)
        return m % self.beta

    def child_addr(self, h: int, m: int, j: int) -> int:
        idx = m * self.beta + j
        return idx if h == 0 else self.addr(h - 1, idx)

    def blank(self, node: int) -> "AtmNode":
        h, m = self.locate(node)
        keys = np.array([self.child_addr(h, m, j) for j in range(self.beta)], dtype=np.uint64)
        return AtmNode(keys, np.full(self.beta, NEVER, dtype=np.uint64))


@dataclass
class AtmNode:
    keys: np.ndarray
    ctrs: np.ndarray

    def encode(self, block_size: int) -> bytes:
        arr = np.empty((len(self.keys), 2), dtype="<u8")
        arr[:, 0] = self.keys
        arr[:, 1] = self.ctrs
        return arr.tobytes().ljust(block_size, b"\0")

    @classmethod
    def decode(cls, payload: bytes, beta: int) -> "AtmNode":
        arr = np.frombuffer(payload[:16 * beta], dtype="<u8").reshape(beta, 2)
        return cls(arr[:, 0].copy(), arr[:, 1].copy())


def atm_enqueue_updates(dirty_addrs, geo: AtmGeometry) -> list[int]:
    """ATM nodes to rewrite for ``dirty_addrs``, leaf-to-root by height,
    each shared node once."""
    nodes: set[int] = set()
    for a in dirty_addrs:
        nodes.update(geo.path(a))
    return sorted(nodes, key=lambda x: (geo.locate(x)[0], x))


class PathCache:
    """Holds the nodes of the most recently walked root-to-leaf path."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.nodes: dict[int, AtmNode] = {}
        self.hits = 0
        self.walks = 0

    def get(self, node: int):
        return self.nodes.get(node)

    def put(self, node: int, content: AtmNode) -> None:
        if node not in self.nodes and len(self.nodes) >= self.capacity:
            self.nodes.pop(next(iter(self.nodes)))
        self.nodes[node] = content

    def invalidate(self, nodes) -> None:
        for n in nodes:
            self.nodes.pop(n, None)

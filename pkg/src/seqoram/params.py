"""ORAM parameters and the physical layout derived from them."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

from .crypto import PROFILES, slot_size
from .errors import ParameterError

MODES = ("deamortized", "amortized")
SENTINEL = (1 << 64) - 1  # fake-record address, sorts after every real one
NEVER = (1 << 64) - 1  # ATM counter of a never-written address
MAP_HEADER = 8
MAP_ENTRY = 12  # u64 key + u32 value


def _pow2(x: int) -> bool:
    return x > 0 and x & (x - 1) == 0


def ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def internal_node_counts(leaves: int, fanout: int) -> list[int]:
    """Node count per internal height (height 1 first) of a bottom-up tree."""
    counts = []
    n = leaves
    while n > 1:
        n = ceil_div(n, fanout)
        counts.append(n)
    return counts


def atm_level_counts(n: int, beta: int) -> list[int]:
    """Node count per ATM height, leaves first, root last."""
    counts = [max(1, ceil_div(n, beta))]
    while counts[-1] > 1:
        counts.append(ceil_div(counts[-1], beta))
    return counts


@dataclass(frozen=True)
class OramParams:
    N: int
    block_size: int = 4096
    beta: int | None = None
    k: int = 2
    c: int | None = None
    mode: str = "deamortized"
    atm: bool = True
    profile: str = "ctr"

    def __post_init__(self):
        if self.beta is None:
            object.__setattr__(self, "beta", self.block_size // 16)
        if self.c is None:
            object.__setattr__(self, "c", max(2, math.ceil(math.log2(self.N))))
        if self.mode == "deamortized" and self.k != 2:
            raise ParameterError("the deamortized construction fixes k = 2")
        if self.mode == "amortized":
            object.__setattr__(self, "atm", False)
        self.validate()

    def validate(self) -> None:
        B, beta = self.block_size, self.beta
        if self.mode not in MODES:
            raise ParameterError(f"mode must be one of {MODES}")
        if self.profile not in PROFILES:
            raise ParameterError(f"profile must be one of {PROFILES}")
        if B < 512 or not _pow2(B):
            raise ParameterError("block_size must be a power of two >= 512")
        for name in ("N", "beta", "k"):
            if not _pow2(getattr(self, name)):
                raise ParameterError(f"{name} must be a power of two")
        if beta < 2:
            raise ParameterError("beta must be >= 2")
        if self.k < 2:
            raise ParameterError("k must be >= 2")
        if self.N // beta < self.k:
            raise ParameterError("N / beta must be >= k")
        if self.c < 2:
            raise ParameterError("memory budget c must be >= 2")
        if MAP_HEADER + MAP_ENTRY * beta + slot_size(self.profile) > B:
            raise ParameterError("a map node of beta entries does not fit a block")
        if self.atm and 16 * beta > B:
            raise ParameterError("an ATM node of beta entries does not fit a block")
        if self.atm and beta < len(atm_level_counts(self.N, beta)) + 1:
            raise ParameterError("beta too small to queue one write plus its ATM path")

    def as_dict(self) -> dict:
        return asdict(self)

    @property
    def atm_node_count(self) -> int:
        return sum(atm_level_counts(self.N, self.beta)) if self.atm else 0

    @property
    def atm_height(self) -> int:
        return len(atm_level_counts(self.N, self.beta))

    @property
    def address_space(self) -> int:
        """Logical addresses stored in the ORAM: data plus ATM nodes."""
        return self.N + self.atm_node_count

    @property
    def level_count(self) -> int:
        """Buffered levels plus the last level."""
        return Layout(self).buffered_levels + 1


@dataclass(frozen=True)
class Region:
    name: str
    start: int
    length: int
    kind: str  # superblock | run | last


@dataclass
class Run:
    """A sorted run of bucket slots followed by its internal map node area.

    Each slot is ``[beta data][iv blocks][map leaf]`` (the last level has no
    leaf), so one bucket write touches one contiguous extent.
    """
    base: int
    slots: int
    slot_blocks: int
    has_leaf: bool
    internal_base: int
    internal_counts: list[int] = field(default_factory=list)

    def slot(self, b: int) -> int:
        return self.base + b * self.slot_blocks

    def internal(self, height: int, index: int) -> int:
        return self.internal_base + sum(self.internal_counts[:height - 1]) + index

    @property
    def end(self) -> int:
        return self.internal_base + sum(self.internal_counts)


class Layout:
    """Pure function of :class:`OramParams`: where every structure lives."""

    def __init__(self, params: OramParams):
        self.params = p = params
        self.block_size = p.block_size
        self.beta = p.beta
        self.slot_bytes = slot_size(p.profile)
        self.iv_blocks = ceil_div(p.beta * self.slot_bytes, p.block_size)
        self.leaf_slot_blocks = p.beta + self.iv_blocks + 1
        self.last_slot_blocks = p.beta + self.iv_blocks
        self.regions: list[Region] = [Region("superblock", 0, 1, "superblock")]
        cursor = 1
        L = ceil_div(p.address_space, p.beta)
        if p.mode == "deamortized":
            L += L % 2
            self.last_buckets = L
            self.buffered_levels = max(0, math.ceil(math.log2(L)) - 2) + 1
            # runs[i][buffer][generation]
            self.runs: list[list[list[Run]]] = []
            for i in range(self.buffered_levels):
                per_level = []
                for buf in range(2):
                    gens = []
                    for gen in range(2):
                        run, cursor = self._run(cursor, 2 ** i, 2 ** i)
                        self.regions.append(Region(f"L{i}.B{buf}.G{gen}", run.base,
                                                   run.end - run.base, "run"))
                        gens.append(run)
                    per_level.append(gens)
                self.runs.append(per_level)
        else:
            self.last_buckets = L
            m = max(1, math.ceil(round(math.log(L, p.k), 9)))
            self.buffered_levels = m
            self.levels: list[Run] = []
            for i in range(m):
                run, cursor = self._run(cursor, p.k ** i, p.k ** i)
                self.regions.append(Region(f"L{i}", run.base, run.end - run.base, "run"))
                self.levels.append(run)
        self.last = Run(cursor, L, self.last_slot_blocks, False,
                        cursor + L * self.last_slot_blocks)
        self.regions.append(Region("last", cursor, L * self.last_slot_blocks, "last"))
        self.block_count = self.last.end

    def _run(self, cursor: int, slots: int, leaves: int) -> tuple[Run, int]:
        counts = internal_node_counts(leaves, self.beta)
        internal_base = cursor + slots * self.leaf_slot_blocks
        run = Run(cursor, slots, self.leaf_slot_blocks, True, internal_base, counts)
        return run, run.end

    def capacity(self, level: int) -> int:
        return self.params.k ** level

    def classify(self, index: int) -> str:
        """Kind of physical block: superblock, data, iv, map or invalid."""
        if index == 0:
            return "superblock"
        if not 0 < index < self.block_count:
            return "invalid"
        for region in self.regions[1:]:
            if region.start <= index < region.start + region.length:
                rel = index - region.start
                slot_blocks = (self.last_slot_blocks if region.kind == "last"
                               else self.leaf_slot_blocks)
                if region.kind == "run" and rel >= self._slots_in(region) * slot_blocks:
                    return "map"
                off = rel % slot_blocks
                if off < self.beta:
                    return "data"
                if off < self.beta + self.iv_blocks:
                    return "iv"
                return "map"
        return "invalid"

    def _slots_in(self, region: Region) -> int:
        if self.params.mode == "deamortized":
            return 2 ** int(region.name[1:].split(".")[0])
        return self.params.k ** int(region.name[1:])

    def validate(self) -> None:
        spans = sorted((r.start, r.start + r.length) for r in self.regions)
        for (a0, a1), (b0, _) in zip(spans, spans[1:]):
            if a1 > b0:
                raise ParameterError("overlapping regions")
        if spans[-1][1] > self.block_count:
            raise ParameterError("region beyond device end")

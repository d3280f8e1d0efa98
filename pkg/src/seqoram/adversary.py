"""The multi-snapshot adversary game, made executable.

A pattern runs on a fresh device while the store records every physical
write; the recording is cut at flush boundaries.  Two patterns of equal
length are indistinguishable when their flush-aligned position sequences
match and every flush changes the same number of blocks.  The number of
flushes a pattern triggers is reported separately: with the ATM enabled,
path records share the write queue, so the logical-write-to-flush ratio
depends on the pattern even though each flush looks the same.
"""
from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .blockstore import Snapshot, WriteTrace
from .device import CLASSES
from .errors import UsageError
from .params import OramParams

TEST_KEY = bytes(range(32))


@dataclass
class AccessPattern:
    ops: list[tuple[int, int]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.ops)

    def validate(self, n: int) -> None:
        for addr, _ in self.ops:
            if not 0 <= addr < n:
                raise UsageError(f"pattern address {addr} outside [0, {n})")

    @classmethod
    def from_addrs(cls, addrs, seed: int = 0) -> "AccessPattern":
        return cls([(int(a), seed + i) for i, a in enumerate(addrs)])

    @classmethod
    def parse(cls, text: str) -> "AccessPattern":
        ops = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise UsageError(f"line {lineno}: expected 'addr payload_seed'")
            try:
                ops.append((int(parts[0]), int(parts[1])))
            except ValueError:
                raise UsageError(f"line {lineno}: not integers: {line!r}") from None
        return cls(ops)

    @classmethod
    def load(cls, path) -> "AccessPattern":
        return cls.parse(Path(path).read_text())

    def dump(self) -> str:
        return "".join(f"{a} {s}\n" for a, s in self.ops)


def payload(seed: int, block_size: int) -> bytes:
    digest = hashlib.sha256(f"payload:{seed}".encode()).digest()
    return (digest * (block_size // len(digest) + 1))[:block_size]


@dataclass
class SnapshotDiff:
    indices: frozenset

    def __len__(self) -> int:
        return len(self.indices)


@dataclass
class PatternRun:
    trace: WriteTrace
    flushes: list[list[int]]
    logical_writes: int
    diffs: list[int] | None = None
    snapshots: list[Snapshot] | None = None


def run_pattern(pattern: AccessPattern, params: OramParams, seed=0, key: bytes = TEST_KEY,
                snapshots: bool = False, keep_snapshots: bool = False,
                pad_to: int = 0) -> PatternRun:
    """Execute ``pattern`` on a fresh in-memory device, recording writes.

    With ``snapshots`` the device is imaged at every flush boundary and
    the per-flush changed-block counts are kept.  ``pad_to`` forces
    fake-padded flushes after the pattern until that many have happened.
    """
    pattern.validate(params.N)
    dev = CLASSES[params.mode].create(params, key, seed=seed)
    store = dev.store
    trace = store.start_recording()
    cuts = [0]
    snaps = [store.snapshot()] if snapshots else []
    diffs: list[int] = []

    def ops():
        for addr, s in pattern.ops:
            yield lambda: dev.write(addr, payload(s, params.block_size))
        while len(cuts) - 1 < pad_to:
            yield dev.flush

    for op in ops():
        g = dev.g
        op()
        # one logical write can trigger at most one flush
        if dev.g != g:
            cuts.append(len(trace))
            if snapshots:
                snaps.append(store.snapshot())
                diffs.append(len(diff_snapshots(snaps[-2], snaps[-1])))
                if not keep_snapshots:
                    snaps.pop(0)
    store.stop_recording()
    flushes = [trace.entries[a:b] for a, b in zip(cuts, cuts[1:])]
    return PatternRun(trace, flushes, len(pattern), diffs if snapshots else None,
                      snaps if keep_snapshots else None)


def diff_snapshots(a: Snapshot, b: Snapshot) -> SnapshotDiff:
    if (a.block_size, a.block_count) != (b.block_size, b.block_count):
        raise UsageError("snapshots come from different geometries")
    x = np.frombuffer(a.image, np.uint8).reshape(a.block_count, a.block_size)
    y = np.frombuffer(b.image, np.uint8).reshape(b.block_count, b.block_size)
    changed = np.flatnonzero(np.any(x != y, axis=1))
    return SnapshotDiff(frozenset(int(i) for i in changed))


@dataclass
class Verdict:
    passed: bool
    compared_flushes: int
    flushes_a: int
    flushes_b: int
    flush_rate_a: float
    flush_rate_b: float
    first_divergence: int | None = None
    reason: str = ""

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def compare_runs(a: PatternRun, b: PatternRun, flushes_a: int | None = None,
                 flushes_b: int | None = None) -> Verdict:
    n = min(len(a.flushes), len(b.flushes))
    fa = len(a.flushes) if flushes_a is None else flushes_a
    fb = len(b.flushes) if flushes_b is None else flushes_b
    v = Verdict(True, n, fa, fb, a.logical_writes / max(1, fa), b.logical_writes / max(1, fb))
    for t in range(n):
        if a.flushes[t] != b.flushes[t]:
            v.passed, v.first_divergence, v.reason = False, t, "write positions differ"
            return v
        if a.diffs is not None and b.diffs is not None and a.diffs[t] != b.diffs[t]:
            v.passed, v.first_divergence, v.reason = False, t, "changed-block counts differ"
            return v
    return v


def assert_indistinguishable(p0: AccessPattern, p1: AccessPattern, params: OramParams,
                             seed=0, snapshots: bool = True) -> Verdict:
    if len(p0) != len(p1):
        raise UsageError(f"patterns differ in length ({len(p0)} vs {len(p1)})")
    a = run_pattern(p0, params, seed, snapshots=snapshots)
    b = run_pattern(p1, params, seed, snapshots=snapshots)
    fa, fb = len(a.flushes), len(b.flushes)
    # continue the shorter run with forced flushes so every flush the
    # longer run made is compared
    if fa < fb:
        a = run_pattern(p0, params, seed, snapshots=snapshots, pad_to=fb)
    elif fb < fa:
        b = run_pattern(p1, params, seed, snapshots=snapshots, pad_to=fa)
    return compare_runs(a, b, fa, fb)


def freshness(before: Snapshot, after: Snapshot, positions) -> tuple[float, int]:
    """Fraction of ``positions`` whose ciphertext changed, and the number
    of changed blocks outside ``positions``."""
    diff = diff_snapshots(before, after).indices
    pos = set(positions)
    changed = len(pos & diff) / len(pos) if pos else 1.0
    return changed, len(diff - pos)


def monobit(data: bytes) -> float:
    """Frequency test p-value; small values mean too many ones or zeros."""
    bits = np.unpackbits(np.frombuffer(data, np.uint8))
    s = abs(2 * int(bits.sum()) - bits.size)
    return math.erfc(s / math.sqrt(bits.size) / math.sqrt(2))


def fuzz_pattern(rng: random.Random, length: int, n: int, beta: int) -> AccessPattern:
    kind = rng.choice(["repeat", "sequential", "random", "hammer", "strided", "mixed"])
    if kind == "repeat":
        a = rng.randrange(n)
        addrs = [a] * length
    elif kind == "sequential":
        start = rng.randrange(n)
        addrs = [(start + i) % n for i in range(length)]
    elif kind == "random":
        addrs = [rng.randrange(n) for _ in range(length)]
    elif kind == "hammer":
        # everything under one ATM leaf
        base = rng.randrange(n // beta) * beta
        addrs = [base + rng.randrange(beta) for _ in range(length)]
    elif kind == "strided":
        stride = rng.choice([beta, beta * beta, n // 2 or 1])
        addrs = [(i * stride) % n for i in range(length)]
    else:
        addrs = [rng.randrange(n) if rng.random() < 0.5 else i % n for i in range(length)]
    return AccessPattern([(a, rng.randrange(1 << 30)) for a in addrs])

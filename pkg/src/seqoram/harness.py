"""Workloads and benchmark reports.

Throughput is reported twice: wall-clock on whatever backend the device
uses, and modeled for a 7200 RPM disk (9 ms average seek, 4.17 ms
rotational latency, 300 MB/s transfer) charged from the store's own
counters.  An in-memory store has no positioning cost, so only the
modeled figure says anything about seeks.
"""
from __future__ import annotations

import csv
import hashlib
import random
import time
from collections import Counter
from dataclasses import asdict, dataclass, field

from .errors import ParameterError

KINDS = ("seq_read", "seq_write", "rand_read", "rand_write", "mixed")


@dataclass(frozen=True)
class DiskModel:
    seek_ms: float = 9.0
    rotation_ms: float = 4.17
    transfer_mb_s: float = 300.0

    def seconds(self, seeks: int, blocks: int, block_size: int) -> float:
        return (seeks * (self.seek_ms + self.rotation_ms) / 1000.0
                + blocks * block_size / (self.transfer_mb_s * 1e6))


HDD = DiskModel()


@dataclass
class WorkloadSpec:
    kind: str
    op_count: int
    io_size_blocks: int = 1
    addr_lo: int = 0
    addr_hi: int | None = None  # exclusive; defaults to N
    seed: int = 0
    read_fraction: float = 0.5  # mixed only
    skip: int = 0  # ops of the same stream already run (resume)

    def validate(self, n: int) -> None:
        if self.kind not in KINDS:
            raise ParameterError(f"kind must be one of {KINDS}")
        if self.io_size_blocks < 1:
            raise ParameterError("io_size_blocks must be >= 1")
        hi = n if self.addr_hi is None else self.addr_hi
        if not 0 <= self.addr_lo < hi <= n:
            raise ParameterError(f"address range [{self.addr_lo}, {hi}) not within [0, {n})")
        if hi - self.addr_lo < self.io_size_blocks:
            raise ParameterError("address range smaller than one I/O")

    def ops(self, n: int):
        """Yield ``(is_read, start)`` for ops ``skip .. skip+op_count``."""
        self.validate(n)
        hi = n if self.addr_hi is None else self.addr_hi
        io = self.io_size_blocks
        span = hi - self.addr_lo
        rng = random.Random(self.seed)
        for j in range(self.skip + self.op_count):
            if self.kind.startswith("seq"):
                start = self.addr_lo + (j * io) % (span // io * io)
                read = self.kind == "seq_read"
            else:
                start = self.addr_lo + rng.randrange(span - io + 1)
                read = (self.kind == "rand_read" if self.kind != "mixed"
                        else rng.random() < self.read_fraction)
            if j >= self.skip:
                yield read, start


def bench_payload(seed: int, addr: int, op: int, block_size: int) -> bytes:
    head = hashlib.sha256(f"bench:{seed}:{addr}:{op}".encode()).digest()
    return head.ljust(block_size, b"\0")


@dataclass
class BenchReport:
    kind: str
    ops: int
    io_size_blocks: int
    logical_blocks: int
    logical_bytes: int
    elapsed: float
    throughput: float  # logical bytes / wall second
    modeled_seconds: float
    modeled_throughput: float  # logical bytes / modeled disk second
    physical_reads: int
    physical_writes: int
    seeks: int
    physical_reads_per_op: float  # per logical block
    physical_writes_per_op: float
    seeks_per_op: float
    flushes: int
    flush_histogram: dict = field(default_factory=dict)
    verified: int = 0
    verify_failures: int = 0

    def as_dict(self) -> dict:
        d = asdict(self)
        d["flush_histogram"] = {str(k): v for k, v in self.flush_histogram.items()}
        return d


class Bench:
    """Runs workloads on one device, remembering what it wrote so later
    reads can be verified."""

    def __init__(self, dev, disk: DiskModel = HDD):
        self.dev = dev
        self.disk = disk
        self.expected: dict[int, bytes] = {}

    def run(self, spec: WorkloadSpec) -> BenchReport:
        dev = self.dev
        B = dev.params.block_size
        before = dev.store.stats.copy()
        flushes_before = len(dev.flush_writes)
        verified = failures = 0
        t0 = time.perf_counter()
        for j, (read, start) in enumerate(spec.ops(dev.params.N), spec.skip):
            n = spec.io_size_blocks
            if read:
                got = dev.read_range(start, n) if n > 1 else [dev.read(start)]
                for a, data in zip(range(start, start + n), got):
                    want = self.expected.get(a)
                    if want is not None:
                        verified += 1
                        failures += data != want
            else:
                for a in range(start, start + n):
                    data = bench_payload(spec.seed, a, j, B)
                    dev.write(a, data)
                    self.expected[a] = data
        elapsed = time.perf_counter() - t0
        d = dev.store.stats - before
        logical = spec.op_count * spec.io_size_blocks
        nbytes = logical * B
        modeled = self.disk.seconds(d.seeks, d.physical_reads + d.physical_writes, B)
        hist = Counter(dev.flush_writes[flushes_before:])
        return BenchReport(
            spec.kind, spec.op_count, spec.io_size_blocks, logical, nbytes, elapsed,
            nbytes / elapsed if elapsed > 0 else float("inf"), modeled,
            nbytes / modeled if modeled > 0 else float("inf"),
            d.physical_reads, d.physical_writes, d.seeks,
            d.physical_reads / logical, d.physical_writes / logical, d.seeks / logical,
            len(dev.flush_writes) - flushes_before, dict(sorted(hist.items())),
            verified, failures)


def run_bench(dev, spec: WorkloadSpec, disk: DiskModel = HDD) -> BenchReport:
    return Bench(dev, disk).run(spec)


def sweep(dev, kind: str, io_sizes, total_blocks: int, seed: int = 0, csv_path=None,
          bench: Bench | None = None) -> list[BenchReport]:
    """One report per I/O size, each moving the same ``total_blocks``,
    optionally written as CSV rows."""
    bench = bench or Bench(dev)
    reports = [bench.run(WorkloadSpec(kind, max(1, total_blocks // io), io, seed=seed))
               for io in io_sizes]
    if csv_path is not None:
        write_csv(csv_path, reports)
    return reports


CSV_FIELDS = ("kind", "io_size_blocks", "ops", "throughput", "modeled_throughput",
              "physical_reads_per_op", "physical_writes_per_op", "seeks_per_op", "flushes")


def write_csv(path, reports) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS, extrasaction="ignore")
        w.writeheader()
        for r in reports:
            w.writerow(r.as_dict())

"""Decrypt every live structure and check the device invariants."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import FAKE
from .errors import SeqOramError


@dataclass
class FsckReport:
    ok: bool = True
    runs: int = 0
    buckets: int = 0
    records: int = 0
    problems: list[str] = field(default_factory=list)

    def fail(self, msg: str) -> None:
        self.ok = False
        self.problems.append(msg)

    def as_dict(self) -> dict:
        return {"ok": self.ok, "runs": self.runs, "buckets": self.buckets,
                "records": self.records, "problems": self.problems}


def _runs(dev):
    """(label, run, first slot, buckets, lookup) for every live run."""
    if dev.mode == "deamortized":
        for i, b, e in dev.read_order():
            st = dev.gens[i][b][e]
            yield (f"level {i} buf {b} gen {e}", dev.layout.runs[i][b][e], 0, st.built,
                   lambda a, i=i, b=b, e=e: dev._lookup_gen(i, b, e, a))
    else:
        for i in range(dev.m):
            n = dev.occ[i]
            if n:
                yield (f"level {i}", dev.layout.levels[i], dev.caps[i] - n, n,
                       lambda a, i=i: dev._find(i, a))


def _check_run(dev, report: FsckReport, label, run, first, n, lookup, limit) -> None:
    limit_space = dev.params.address_space
    got = dev.io.read_buckets(run.slot(first), n) if n else []
    for j, (addrs, payloads) in enumerate(got):
        report.buckets += 1
        real = addrs[addrs != FAKE]
        if real.size and not np.all(addrs[:real.size] == real):
            report.fail(f"{label} bucket {j}: fake records before real ones")
        if real.size > 1 and np.any(np.diff(real.astype(np.int64)) <= 0):
            report.fail(f"{label} bucket {j}: addresses not strictly increasing")
        if real.size and int(real[-1]) >= limit_space:
            report.fail(f"{label} bucket {j}: address {int(real[-1])} outside the address space")
        for pos, a in enumerate(real[:limit]):
            report.records += 1
            hit = lookup(int(a))
            if hit is None:
                report.fail(f"{label}: map does not find address {int(a)}")
            elif hit != payloads[pos].tobytes() and dev.mode == "amortized":
                report.fail(f"{label}: map leads to a different copy of {int(a)}")


def fsck(dev, sample: int | None = None) -> FsckReport:
    """Walk every live run, its level map and the last level.

    ``sample`` bounds the per-bucket records checked through the map.
    """
    report = FsckReport()
    limit = dev.params.beta if sample is None else sample
    try:
        for label, run, first, n, lookup in _runs(dev):
            report.runs += 1
            _check_run(dev, report, label, run, first, n, lookup, limit)
        L = dev.layout.last_buckets
        step = max(1, dev.params.c)
        for b in range(0, L, step):
            dev.io.read_buckets(dev.layout.last.slot(b), min(step, L - b), leaves=False)
            report.buckets += min(step, L - b)
    except SeqOramError as exc:
        report.fail(f"{type(exc).__name__}: {exc}")
    if dev.mode == "deamortized":
        for i in range(dev.layout.buffered_levels):
            if dev.level_occupancy(i) != dev.true_occupancy(i):
                report.fail(f"level {i}: occupancy disagrees with the schedule")
    else:
        for i in range(dev.m):
            if not 0 <= dev.occ[i] <= dev.caps[i]:
                report.fail(f"level {i}: occupancy {dev.occ[i]} outside capacity")
    return report

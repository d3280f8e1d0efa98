import csv

import pytest

from seqoram.device import create_device, open_device
from seqoram.errors import ParameterError
from seqoram.harness import HDD, Bench, WorkloadSpec, run_bench, sweep

from conftest import KEY, fresh, small


def test_rand_write_then_read_verifies():
    dev = fresh(small(N=1024, beta=8))
    b = Bench(dev)
    w = b.run(WorkloadSpec("rand_write", 800, seed=3))
    r = b.run(WorkloadSpec("rand_read", 800, seed=3))
    assert w.verify_failures == 0 and r.verify_failures == 0
    assert r.verified == 800


def test_report_arithmetic():
    dev = fresh(small(N=1024, beta=8))
    before = dev.store.stats.copy()
    r = run_bench(dev, WorkloadSpec("mixed", 1000, io_size_blocks=2, seed=1))
    d = dev.store.stats - before
    assert r.logical_blocks == 2000
    assert r.throughput * r.elapsed == pytest.approx(r.logical_bytes)
    assert (r.physical_reads, r.physical_writes, r.seeks) == (
        d.physical_reads, d.physical_writes, d.seeks)
    assert r.modeled_seconds == pytest.approx(
        HDD.seconds(d.seeks, d.physical_reads + d.physical_writes, 512))
    assert sum(r.flush_histogram.values()) == r.flushes


def test_histogram_single_valued_for_deamortized():
    dev = fresh(small(N=1024, beta=8))
    r = run_bench(dev, WorkloadSpec("rand_write", 3000, seed=2))
    assert r.flushes > 20 and len(r.flush_histogram) == 1


@pytest.mark.parametrize("kw", [dict(kind="nope"), dict(io_size_blocks=0),
                                dict(addr_lo=10, addr_hi=5), dict(addr_hi=2000)])
def test_spec_validation(kw):
    spec = WorkloadSpec(**{"kind": "seq_write", "op_count": 1, **kw})
    with pytest.raises(ParameterError):
        spec.validate(1024)


def test_sequential_ops_stay_in_range():
    spec = WorkloadSpec("seq_write", 50, io_size_blocks=3, addr_lo=10, addr_hi=20)
    for _, start in spec.ops(64):
        assert 10 <= start and start + 3 <= 20


def test_sweep_shape_and_csv(tmp_path):
    dev = fresh(small(N=4096, beta=8, profile="ctr"))
    b = Bench(dev)
    b.run(WorkloadSpec("seq_write", 4096))
    out = tmp_path / "sweep.csv"
    reports = sweep(dev, "seq_read", [1, 2, 4, 8, 16, 32, 64], 512, csv_path=out, bench=b)
    modeled = [r.modeled_throughput for r in reports]
    assert all(y >= x for x, y in zip(modeled, modeled[1:]))
    assert all(r.verify_failures == 0 for r in reports)
    rows = list(csv.DictReader(out.open()))
    assert [int(r["io_size_blocks"]) for r in rows] == [1, 2, 4, 8, 16, 32, 64]


def test_reopen_mid_benchmark_is_deterministic(tmp_path):
    params = small(N=256, beta=8)
    spec_all = WorkloadSpec("rand_write", 1000, seed=9)

    a = create_device(params, KEY, path=tmp_path / "a.img", seed=4)
    Bench(a).run(spec_all)
    a.close()

    b = create_device(params, KEY, path=tmp_path / "b.img", seed=4)
    Bench(b).run(WorkloadSpec("rand_write", 437, seed=9))
    b.close()
    b = open_device(tmp_path / "b.img", KEY)
    Bench(b).run(WorkloadSpec("rand_write", 563, seed=9, skip=437))
    b.close()

    assert (tmp_path / "a.img").read_bytes() == (tmp_path / "b.img").read_bytes()

import random

import pytest
from hypothesis import given, settings, strategies as st

from seqoram.device import load_memory
from seqoram.errors import IntegrityError, RangeError
from seqoram.oram_deamortized import DeamortizedOram, target, written_count

from conftest import KEY, drive, fresh, small


@pytest.mark.parametrize("atm", [True, False])
@pytest.mark.parametrize("geom", [dict(N=64, beta=4), dict(N=1024, beta=8)])
def test_matches_dict_oracle(atm, geom):
    dev = fresh(small(atm=atm, **geom))
    assert drive(dev, 6000, seed=2) == 0
    assert dev.misses == 0


@given(st.lists(st.tuples(st.booleans(), st.integers(0, 63), st.binary(max_size=16)),
                max_size=300))
@settings(max_examples=30, deadline=None)
def test_any_sequence_reads_back(ops):
    dev = fresh(small())
    ref = {}
    for is_read, a, v in ops:
        if is_read:
            assert dev.read(a) == ref.get(a, bytes(512))
        else:
            dev.write(a, v)
            ref[a] = v.ljust(512, b"\0")


@pytest.mark.parametrize("atm", [True, False])
def test_every_flush_writes_the_same_number_of_blocks(atm):
    dev = fresh(small(atm=atm))
    drive(dev, 3000, seed=4, read_ratio=0.2)
    assert len(dev.flush_writes) > 50
    assert len(set(dev.flush_writes)) == 1


def test_schedule_targets():
    # level j gets bucket tau mod 2^j of buffer bit j+1, generation bit j
    assert target(0, 5) == (0, 1, 0)
    assert target(2, 13) == (1, 1, 1)
    assert target(3, 7) == (0, 0, 7)
    assert written_count(0, 1, 0, 0) == 0
    assert written_count(0, 1, 0, 1) == 1


def test_schedule_occupancy_matches_device():
    dev = fresh(small())
    drive(dev, 2000, seed=5, read_ratio=0.0)
    for i in range(dev.layout.buffered_levels):
        assert dev.level_occupancy(i) == dev.true_occupancy(i)


def test_last_level_holds_block_j_at_offset_j():
    dev = fresh(small(atm=False))
    for a in range(64):
        dev.write(a, bytes([a]) * 4)
    # push everything through every buffered level
    for _ in range(4 << dev.layout.buffered_levels):
        dev.sync() or dev.flush()
    beta = dev.params.beta
    for a in range(64):
        base = dev.layout.last.slot(a // beta)
        assert dev.io.read_record(base, a % beta)[:4] == bytes([a]) * 4
        assert dev.locate(a) == ("last_level",)


def test_range_errors():
    dev = fresh(small())
    with pytest.raises(RangeError):
        dev.write(64, b"x")
    with pytest.raises(RangeError):
        dev.read(-1)


def test_reopen_continues(tmp_path):
    from seqoram.device import create_device, open_device
    p = tmp_path / "d.img"
    dev = create_device(small(N=256, beta=8), KEY, path=p, seed=3)
    ref = {}
    drive(dev, 1500, seed=6, read_ratio=0.0, oracle=ref)
    queued = len(dev.queue)
    dev.close()
    dev = open_device(p, KEY)
    assert len(dev.queue) == queued
    assert all(dev.read(a) == v for a, v in ref.items())
    assert drive(dev, 1500, seed=7, oracle=ref) == 0


def test_reopen_in_memory_after_sync():
    dev = fresh(small())
    ref = {}
    drive(dev, 500, seed=8, read_ratio=0.0, oracle=ref)
    dev.sync()
    again = load_memory(dev.store, KEY)
    assert isinstance(again, DeamortizedOram) and again.g == dev.g
    assert all(again.read(a) == v for a, v in ref.items())


def test_wrong_key_is_rejected():
    dev = fresh(small(profile="ctr"))
    with pytest.raises(IntegrityError):
        load_memory(dev.store, bytes(31) + b"\1")


def test_read_range_matches_single_reads():
    dev = fresh(small(N=1024, beta=8))
    drive(dev, 3000, seed=9, read_ratio=0.0)
    rng = random.Random(1)
    for _ in range(30):
        s = rng.randrange(1000)
        n = rng.randrange(1, 24)
        assert dev.read_range(s, n) == [dev.read(a) for a in range(s, s + n)]


def test_atm_reads_stay_within_path_bound():
    dev = fresh(small(N=1024, beta=8, profile="ctr"))
    drive(dev, 4000, seed=10, read_ratio=0.0)
    dev.sync()
    before = dev.store.stats.physical_reads
    dev.cache.invalidate(list(dev.cache.nodes))
    dev.read(513)
    h = dev.params.atm_height
    assert dev.store.stats.physical_reads - before <= (h + 1) ** 2

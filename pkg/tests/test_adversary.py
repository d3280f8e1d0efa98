import random

import pytest

from seqoram.adversary import (AccessPattern, assert_indistinguishable, diff_snapshots,
                               freshness, fuzz_pattern, monobit, payload, run_pattern)
from seqoram.blockstore import BlockStore
from seqoram.device import create_device
from seqoram.errors import UsageError
from seqoram.params import OramParams

from conftest import KEY

P = OramParams(N=256, block_size=512, beta=8, profile="ctr")


def test_sequential_and_random_same_positions():
    seq = AccessPattern.from_addrs([i % 256 for i in range(600)])
    rnd = AccessPattern.from_addrs(random.Random(1).choices(range(256), k=600))
    a, b = run_pattern(seq, P, seed=1), run_pattern(rnd, P, seed=1)
    n = min(len(a.flushes), len(b.flushes))
    assert n > 0 and a.flushes[:n] == b.flushes[:n]


def test_different_seeds_same_positions_different_bytes():
    pat = AccessPattern.from_addrs([i % 256 for i in range(300)])
    a = run_pattern(pat, P, seed=1, snapshots=True, keep_snapshots=True)
    b = run_pattern(pat, P, seed=2, snapshots=True, keep_snapshots=True)
    assert a.flushes == b.flushes
    assert a.snapshots[-1].image != b.snapshots[-1].image


def test_different_lengths_give_different_traces():
    a = run_pattern(AccessPattern.from_addrs(range(200)), P)
    b = run_pattern(AccessPattern.from_addrs([i % 256 for i in range(400)]), P)
    assert len(a.trace) < len(b.trace)
    with pytest.raises(UsageError):
        assert_indistinguishable(AccessPattern.from_addrs([1]), AccessPattern.from_addrs([]), P)


def test_repeat_one_address_versus_distinct():
    n = 500
    p0 = AccessPattern.from_addrs([0] * n)
    p1 = AccessPattern.from_addrs(random.Random(2).choices(range(256), k=n))
    v = assert_indistinguishable(p0, p1, P)
    assert v.passed and v.compared_flushes == max(v.flushes_a, v.flushes_b) > 0
    # repeating one address never fills the queue: the flush rate differs
    assert v.flushes_a == 0 < v.flushes_b


def test_flush_rate_side_channel_is_reported():
    n = 1500
    seq = AccessPattern.from_addrs([i % 256 for i in range(n)])
    rnd = AccessPattern.from_addrs(random.Random(3).choices(range(256), k=n))
    v = assert_indistinguishable(seq, rnd, P, snapshots=False)
    assert v.passed
    assert v.flush_rate_a > v.flush_rate_b


def test_hammering_one_atm_leaf():
    addrs = [16 + i % 8 for i in range(700)]
    other = random.Random(4).choices(range(256), k=700)
    assert assert_indistinguishable(AccessPattern.from_addrs(addrs),
                                    AccessPattern.from_addrs(other), P).passed


def test_diff_snapshots():
    s = BlockStore.in_memory(512, 8)
    a = s.snapshot()
    assert len(diff_snapshots(a, s.snapshot())) == 0
    s.write_blocks(2, bytes([1]) * 1024)
    assert diff_snapshots(a, s.snapshot()).indices == {2, 3}
    with pytest.raises(UsageError):
        diff_snapshots(a, BlockStore.in_memory(512, 9).snapshot())


def test_diff_across_one_flush_equals_trace():
    dev = create_device(P, KEY, seed=1)
    for a in range(40):
        dev.write(a, b"q")
    before = dev.store.snapshot()
    trace = dev.store.start_recording()
    dev.flush()
    after = dev.store.snapshot()
    assert diff_snapshots(before, after).indices == set(trace.entries)


def test_diff_of_format_is_the_superblock():
    p = P
    from seqoram.params import Layout
    blank = BlockStore.in_memory(512, Layout(p).block_count).snapshot()
    dev = create_device(p, KEY, seed=1)
    assert diff_snapshots(blank, dev.store.snapshot()).indices == {0}


def test_freshness_and_monobit():
    dev = create_device(P, KEY, seed=9)
    for a in range(100):
        dev.write(a, bytes(512))
    before = dev.store.snapshot()
    trace = dev.store.start_recording()
    dev.flush()
    after = dev.store.snapshot()
    changed, outside = freshness(before, after, trace.entries)
    assert changed == 1.0 and outside == 0
    # data bodies only: the superblock header is plaintext by design and
    # IV blocks carry zero padding past the last slot
    data = [i for i in sorted(set(trace.entries)) if dev.layout.classify(i) == "data"]
    assert len(data) >= 8 * 7
    blob = b"".join(after.block(i) for i in data)
    assert monobit(blob) > 1e-4
    assert monobit(bytes(4096)) < 1e-6


def test_pattern_file_format(tmp_path):
    pat = AccessPattern.parse("# comment\n3 10\n\n7 11  # trailing\n")
    assert pat.ops == [(3, 10), (7, 11)]
    f = tmp_path / "p.txt"
    f.write_text(pat.dump())
    assert AccessPattern.load(f).ops == pat.ops
    with pytest.raises(UsageError):
        AccessPattern.parse("1 2 3\n")
    with pytest.raises(UsageError):
        AccessPattern.parse("x y\n")
    with pytest.raises(UsageError):
        run_pattern(AccessPattern([(256, 0)]), P)


def test_payload_is_deterministic():
    assert payload(5, 512) == payload(5, 512) != payload(6, 512)
    assert len(payload(5, 4096)) == 4096


@pytest.mark.parametrize("mode", ["amortized", "deamortized"])
def test_fuzzed_pairs(mode):
    p = OramParams(N=256, block_size=512, beta=8, mode=mode, profile="test")
    rng = random.Random(5)
    for _ in range(8):
        a, b = fuzz_pattern(rng, 300, 256, 8), fuzz_pattern(rng, 300, 256, 8)
        assert assert_indistinguishable(a, b, p).passed

import random

import numpy as np
import pytest
from hypothesis import given, strategies as st

from seqoram.atm import (AtmGeometry, AtmNode, PathCache, atm_enqueue_updates, paper_bracket,
                         predict_location)
from seqoram.errors import UsageError
from seqoram.oram_deamortized import target
from seqoram.params import NEVER

from conftest import fresh, small


def test_fresh_record_is_in_the_queue():
    assert predict_location(7, 7, 3).location == "write_queue"
    with pytest.raises(UsageError):
        predict_location(8, 7, 3)


def test_first_steps_by_hand():
    # flushed at 0 (clock 2): level 0, buffer 1, generation 0
    assert target(0, 2) == (1, 0, 0)
    r = predict_location(0, 1, 3)
    assert (r.level, r.role, r.buffer, r.generation) == (0, "write", 1, 0)
    r = predict_location(0, 2, 3)
    assert (r.level, r.role, r.buffer) == (0, "merge", 1)
    # merged into level 1 during clocks 4..5, which is written at 4..7
    r = predict_location(0, 4, 3)
    assert (r.level, r.role, r.buffer, r.generation) == (1, "write", 1, 0)
    assert target(1, 4) == (1, 0, 0)


def test_past_the_top_level_is_last_level():
    assert predict_location(0, 1000, 2).location == "last_level"


@given(st.integers(0, 5000), st.integers(0, 5000), st.integers(0, 6))
def test_prediction_is_monotone_in_level(c, d, top):
    """A record never moves back up: its level only grows with time."""
    g = c + d
    a = predict_location(c, g, top)
    b = predict_location(c, g + 1, top)
    rank = {"write_queue": -1, "last_level": 99}
    la = a.level if a.location == "level" else rank[a.location]
    lb = b.level if b.location == "level" else rank[b.location]
    assert lb >= la


def test_closed_form_is_phase_blind():
    """The bracket form depends only on g - c, so it must miss records
    that entered level 0 at different clock phases."""
    top, agree, total = 4, 0, 0
    for g in range(200):
        for c in range(g + 1):
            a, b = predict_location(c, g, top), paper_bracket(c, g, top)
            agree += (a.location, a.level) == (b.location, b.level)
            total += 1
    assert 0 < agree < total
    assert predict_location(0, 3, top).level != paper_bracket(0, 3, top).level


@pytest.mark.parametrize("n,beta", [(64, 4), (1024, 8), (2**15, 256)])
def test_geometry(n, beta):
    geo = AtmGeometry(n, beta)
    assert geo.counts[-1] == 1
    assert geo.root == n + sum(geo.counts) - 1
    for a in random.Random(0).sample(range(n), 20):
        path = geo.path(a)
        assert len(path) == geo.height and path[-1] == geo.root
        h, m = geo.locate(path[0])
        assert h == 0 and m == a // beta
        assert geo.child_addr(0, m, geo.slot_of(a)) == a
        for child, parent in zip(path, path[1:]):
            ph, pm = geo.locate(parent)
            assert geo.child_addr(ph, pm, geo.slot_of(child)) == child
    assert not geo.is_node(n - 1) and geo.is_node(n) and not geo.is_node(geo.end)


def test_blank_node_and_codec():
    geo = AtmGeometry(64, 4)
    node = geo.blank(geo.addr(0, 3))
    assert list(node.keys) == [12, 13, 14, 15]
    assert np.all(node.ctrs == NEVER)
    node.ctrs[1] = 42
    back = AtmNode.decode(node.encode(512), 4)
    assert list(back.keys) == [12, 13, 14, 15] and back.ctrs[1] == 42


def test_enqueue_updates_shares_path_prefixes():
    geo = AtmGeometry(64, 4)
    nodes = atm_enqueue_updates([0, 1, 2, 3], geo)
    assert nodes == geo.path(0)
    nodes = atm_enqueue_updates([0, 63], geo)
    assert len(nodes) == 2 * geo.height - 1
    heights = [geo.locate(x)[0] for x in nodes]
    assert heights == sorted(heights)


def test_path_cache_evicts_oldest():
    c = PathCache(2)
    c.put(1, "a")
    c.put(2, "b")
    c.put(3, "c")
    assert c.get(1) is None and c.get(3) == "c"
    c.invalidate([2, 99])
    assert c.get(2) is None


def test_prediction_agrees_with_tracked_device():
    dev = fresh(small())
    dev.track = True
    rng = random.Random(11)
    checked = 0
    g = 0
    while dev.g < 400:
        dev.write(rng.randrange(64), b"v")
        if dev.g != g:
            g = dev.g
            for a in range(64):
                c = dev.atm_lookup(a)
                if c is None or a in dev.queue:
                    continue
                assert dev.tracked_holds(a, c, predict_location(c, dev.g, dev.top)), (a, c, g)
                checked += 1
    assert checked > 1000
    assert dev.misses == 0

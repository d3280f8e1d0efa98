import random

import pytest

from seqoram.device import create_device
from seqoram.params import OramParams

KEY = bytes(range(32))


def small(mode="deamortized", atm=True, N=64, beta=4, B=512, profile="test", **kw):
    return OramParams(N=N, block_size=B, beta=beta, mode=mode, atm=atm, profile=profile, **kw)


def fresh(params, seed=1):
    return create_device(params, KEY, seed=seed)


def drive(dev, ops, seed=0, read_ratio=0.5, oracle=None):
    """Random mixed workload checked against a dict; returns mismatches."""
    rng = random.Random(seed)
    oracle = {} if oracle is None else oracle
    B, n = dev.params.block_size, dev.params.N
    bad = 0
    for _ in range(ops):
        a = rng.randrange(n)
        if rng.random() < read_ratio:
            bad += dev.read(a) != oracle.get(a, bytes(B))
        else:
            v = rng.randbytes(8)
            dev.write(a, v)
            oracle[a] = v.ljust(B, b"\0")
    return bad


@pytest.fixture
def key():
    return KEY


CONFIGS = [("deamortized", True), ("deamortized", False), ("amortized", False)]


@pytest.fixture(params=CONFIGS, ids=["deam-atm", "deam-noatm", "amortized"])
def config(request):
    return request.param


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)

import base64
import socket
import threading
import time

import httpx
import pytest

from seqoram.cli import InProcessClient
from seqoram.service import create_app

KEY = ("11" * 32)
OTHER = ("22" * 32)


@pytest.fixture
def client():
    return InProcessClient(create_app())


def post(client, path, **body):
    return client.post(path, json=body)


def init_mem(client, name="mem:t", **kw):
    body = dict(device=name, key_hex=KEY, N=256, block_size=512, beta=8, seed=1)
    body.update(kw)
    r = post(client, "/v1/init", **body)
    assert r.status_code == 200, r.text
    return r.json()


def b64(data: bytes) -> str:
    return base64.b64encode(data).decode()


def test_roundtrip_and_sync(client):
    info = init_mem(client)
    assert info["params"]["N"] == 256 and info["levels"] >= 2
    r = post(client, "/v1/write", device="mem:t", key_hex=KEY, addr=5, data_b64=b64(b"hello"))
    assert r.json() == {"addr": 5, "buffered": True, "flushes": 0}
    r = post(client, "/v1/read", device="mem:t", key_hex=KEY, addr=5).json()
    assert base64.b64decode(r["data_b64"])[:5] == b"hello" and r["unwritten"] is False
    r = post(client, "/v1/read", device="mem:t", key_hex=KEY, addr=6).json()
    assert r["unwritten"] is True and not any(base64.b64decode(r["data_b64"]))
    r = post(client, "/v1/sync", device="mem:t", key_hex=KEY).json()
    assert r == {"flushed": True, "g": 1}
    st = post(client, "/v1/stats", device="mem:t", key_hex=KEY).json()
    assert st["g"] == 1 and st["logical_writes"] == 1 and st["flush_writes_last"] > 0


def test_error_mapping(client):
    init_mem(client)
    r = post(client, "/v1/write", device="mem:t", key_hex=KEY, addr=256, data_b64=b64(b"x"))
    assert r.status_code == 416 and r.json()["error"] == "RangeError"
    r = post(client, "/v1/read", device="mem:t", key_hex=OTHER, addr=0)
    assert r.status_code == 403
    r = post(client, "/v1/read", device="mem:nope", key_hex=KEY, addr=0)
    assert r.status_code == 404
    r = post(client, "/v1/init", device="mem:x", key_hex=KEY, N=100)
    assert r.status_code == 422 and r.json()["error"] == "ParameterError"
    r = post(client, "/v1/read", device="mem:t", key_hex="abc", addr=0)
    assert r.status_code == 422
    r = post(client, "/v1/write", device="mem:t", key_hex=KEY, addr=1, data_b64="***")
    assert r.status_code == 400


def test_fsck_bench_adversary(client):
    init_mem(client)
    r = post(client, "/v1/bench", device="mem:t", key_hex=KEY, kind="rand_write",
             op_count=400, seed=3).json()
    rep = r["reports"][0]
    assert rep["logical_blocks"] == 400 and len(rep["flush_histogram"]) == 1
    r = post(client, "/v1/bench", device="mem:t", key_hex=KEY, kind="seq_read",
             op_count=8, sweep=[1, 4]).json()
    assert [x["io_size_blocks"] for x in r["reports"]] == [1, 4]
    assert post(client, "/v1/fsck", device="mem:t", key_hex=KEY).json()["ok"]
    pat = "".join(f"{i} {i}\n" for i in range(100))
    r = post(client, "/v1/adversary", pattern_a=pat, pattern_b=pat.replace("\n", "\n", 1))
    assert r.json()["passed"]


def test_file_device_survives_close(client, tmp_path):
    path = str(tmp_path / "d.img")
    init_mem(client, name=path)
    post(client, "/v1/write", device=path, key_hex=KEY, addr=9, data_b64=b64(b"keep"))
    assert post(client, "/v1/close", device=path, key_hex=KEY).json() == {"closed": True}
    # a new server opens the file on first use
    other = InProcessClient(create_app())
    r = post(other, "/v1/read", device=path, key_hex=KEY, addr=9).json()
    assert base64.b64decode(r["data_b64"])[:4] == b"keep"
    assert post(other, "/v1/read", device=path, key_hex=OTHER, addr=9).status_code == 403
    r = post(other, "/v1/init", device=path, key_hex=KEY, N=256, block_size=512, beta=8)
    assert r.status_code == 400 and "force" in r.json()["detail"]


def _free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_real_server():
    import uvicorn
    port = _free_port()
    server = uvicorn.Server(uvicorn.Config(create_app(), host="127.0.0.1", port=port,
                                           log_level="warning"))
    t = threading.Thread(target=server.run, daemon=True)
    t.start()
    try:
        with httpx.Client(base_url=f"http://127.0.0.1:{port}") as c:
            for _ in range(100):
                try:
                    if c.get("/v1/health").status_code == 200:
                        break
                except httpx.TransportError:
                    time.sleep(0.05)
            init_mem(c)
            assert c.get("/v1/health").json()["open"] == ["mem:t"]
    finally:
        server.should_exit = True
        t.join(timeout=10)

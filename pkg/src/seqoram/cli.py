"""Command line client.

Every subcommand is a request to the HTTP API.  Without ``--url`` the app
runs in-process for the duration of the command; with it, the CLI talks to
a ``seqoram serve`` instance.

Settings resolve as flags > config file > defaults; the config file is
flat ``key=value`` text.  The key comes from ``--key-file``, then
``SEQORAM_KEY`` (64 hex digits), then ``key_file`` in the config.
"""
from __future__ import annotations

import argparse
import asyncio
import base64
import csv
import json
import os
import sys
from pathlib import Path

import httpx

from .harness import CSV_FIELDS

DEFAULTS = {
    "N": 4096, "block_size": 4096, "beta": None, "k": 2, "c": None,
    "mode": "deamortized", "atm": "on", "profile": "ctr", "backend": "file",
    "seed": None, "url": None, "key_file": None,
}
INTS = {"N", "block_size", "beta", "k", "c", "seed"}

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class CliError(Exception):
    def __init__(self, msg: str, code: int = EXIT_FAIL):
        super().__init__(msg)
        self.code = code


def read_config(path) -> dict:
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{lineno}: expected key=value", EXIT_USAGE)
        k, v = (s.strip() for s in line.split("=", 1))
        k = k.replace("-", "_")
        if k not in DEFAULTS:
            raise CliError(f"{path}:{lineno}: unknown setting {k!r}", EXIT_USAGE)
        out[k] = int(v, 0) if k in INTS else v
    return out


def settings(args) -> dict:
    cfg_path = args.config or os.environ.get("SEQORAM_CONFIG")
    cfg = read_config(cfg_path) if cfg_path else {}
    out = {}
    for k, default in DEFAULTS.items():
        flag = getattr(args, k, None)
        out[k] = flag if flag is not None else cfg.get(k, default)
    return out


def parse_key(raw: bytes) -> bytes:
    text = raw.strip()
    if len(raw) == 32:
        return raw
    try:
        key = bytes.fromhex(text.decode())
    except (UnicodeDecodeError, ValueError):
        key = b""
    if len(key) != 32:
        raise CliError("key must be 32 raw bytes or 64 hex digits", EXIT_USAGE)
    return key


def load_key(args, conf: dict) -> bytes:
    if args.key_file:
        return parse_key(Path(args.key_file).read_bytes())
    env = os.environ.get("SEQORAM_KEY")
    if env:
        return parse_key(env.encode())
    if conf.get("key_file"):
        return parse_key(Path(conf["key_file"]).read_bytes())
    raise CliError("no key: set SEQORAM_KEY or pass --key-file", EXIT_USAGE)


class InProcessClient:
    """Just enough of ``httpx.Client`` to drive the app without a socket."""

    def __init__(self, app):
        self.app = app

    async def _post(self, path: str, body: dict):
        transport = httpx.ASGITransport(app=self.app)
        async with httpx.AsyncClient(transport=transport, base_url="http://seqoram") as c:
            return await c.post(path, json=body)

    def post(self, path: str, json=None):
        return asyncio.run(self._post(path, json))

    def close(self) -> None:
        pass


def make_client(url):
    if url:
        return httpx.Client(base_url=url, timeout=None)
    from .service.app import create_app
    return InProcessClient(create_app())


def call(client, path: str, body: dict) -> dict:
    resp = client.post(path, json=body)
    if resp.status_code >= 400:
        try:
            err = resp.json()
        except ValueError:
            err = {"error": "HTTPError", "detail": resp.text}
        name = err.get("error", "HTTPError")
        detail = err.get("detail", err)
        code = EXIT_USAGE if name in ("RangeError", "UsageError") or resp.status_code == 422 \
            else EXIT_FAIL
        raise CliError(f"{name}: {detail}", code)
    return resp.json()


def _device(args, conf) -> str:
    if conf["backend"] == "mem":
        return f"mem:{args.device}"
    return args.device


def _emit(args, payload, human=None) -> None:
    if args.json or human is None:
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        print(human)


def _init_body(device, conf, key, force) -> dict:
    return {"device": device, "key_hex": key.hex(), "N": conf["N"],
            "block_size": conf["block_size"], "beta": conf["beta"], "k": conf["k"],
            "c": conf["c"], "mode": conf["mode"], "atm": conf["atm"] == "on",
            "profile": conf["profile"], "seed": conf["seed"], "force": force}


def cmd_init(args, conf, client, key):
    info = call(client, "/v1/init", _init_body(_device(args, conf), conf, key, args.force))
    p = info["params"]
    _emit(args, info, f"formatted {info['device']}: N={p['N']} B={p['block_size']} "
                      f"beta={p['beta']} mode={p['mode']} atm={p['atm']} "
                      f"{info['block_count']} blocks, {info['levels']} levels")
    return EXIT_OK


def cmd_write(args, conf, client, key):
    data = sys.stdin.buffer.read() if args.file == "-" else Path(args.file).read_bytes()
    res = call(client, "/v1/write", {"device": _device(args, conf), "key_hex": key.hex(),
                                     "addr": args.addr, "sync": args.sync,
                                     "data_b64": base64.b64encode(data).decode()})
    note = " (buffered in the write queue; use --sync to force a flush)" if res["buffered"] else ""
    _emit(args, res, f"wrote block {args.addr}{note}")
    return EXIT_OK


def cmd_read(args, conf, client, key):
    res = call(client, "/v1/read", {"device": _device(args, conf), "key_hex": key.hex(),
                                    "addr": args.addr})
    data = base64.b64decode(res["data_b64"])
    if res["unwritten"] or (res["unwritten"] is None and not any(data)):
        print("unwritten" if res["unwritten"] else "zero block (unwritten or zero-filled)",
              file=sys.stderr)
    if args.json:
        _emit(args, res)
    elif args.output:
        Path(args.output).write_bytes(data)
    else:
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
    return EXIT_OK


def cmd_sync(args, conf, client, key):
    res = call(client, "/v1/sync", {"device": _device(args, conf), "key_hex": key.hex()})
    _emit(args, res, f"flushed, g={res['g']}" if res["flushed"] else "queue empty")
    return EXIT_OK


def cmd_stats(args, conf, client, key):
    _emit(args, call(client, "/v1/stats", {"device": _device(args, conf), "key_hex": key.hex()}))
    return EXIT_OK


def cmd_fsck(args, conf, client, key):
    res = call(client, "/v1/fsck", {"device": _device(args, conf), "key_hex": key.hex(),
                                    "sample": args.sample})
    human = (f"clean: {res['runs']} runs, {res['buckets']} buckets, {res['records']} records"
             if res["ok"] else "\n".join(["PROBLEMS:"] + res["problems"]))
    _emit(args, res, human)
    return EXIT_OK if res["ok"] else EXIT_FAIL


def cmd_bench(args, conf, client, key):
    device = _device(args, conf)
    if conf["backend"] == "mem":
        # a fresh in-memory device per run
        call(client, "/v1/init", _init_body(device, conf, key, True))
    sweep = [int(x) for x in args.sweep.split(",")] if args.sweep else None
    res = call(client, "/v1/bench", {"device": device, "key_hex": key.hex(), "kind": args.kind,
                                     "op_count": args.ops, "io_size_blocks": args.io_size,
                                     "seed": conf["seed"] or 0, "sweep": sweep})
    reports = res["reports"]
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=CSV_FIELDS, extrasaction="ignore")
            w.writeheader()
            w.writerows(reports)
    lines = [f"{r['kind']} io={r['io_size_blocks']}: {r['throughput'] / 1e6:.2f} MB/s wall, "
             f"{r['modeled_throughput'] / 1e6:.3f} MB/s modeled disk, "
             f"{r['seeks_per_op']:.4f} seeks/op, {r['flushes']} flushes "
             f"{r['flush_histogram']}" for r in reports]
    _emit(args, res, "\n".join(lines))
    bad = sum(r["verify_failures"] for r in reports)
    return EXIT_FAIL if bad else EXIT_OK


def cmd_adversary(args, conf, client, key):
    body = {"pattern_a": Path(args.pattern_a).read_text(),
            "pattern_b": Path(args.pattern_b).read_text(),
            "seed": args.seed if args.seed is not None else (conf["seed"] or 0),
            "N": conf["N"], "block_size": conf["block_size"], "beta": conf["beta"],
            "mode": conf["mode"], "atm": conf["atm"] == "on"}
    res = call(client, "/v1/adversary", body)
    print(json.dumps(res, indent=2, sort_keys=True))
    return EXIT_OK if res["passed"] else EXIT_FAIL


def cmd_close(args, conf, client, key):
    res = call(client, "/v1/close", {"device": _device(args, conf), "key_hex": key.hex()})
    _emit(args, res, "closed" if res["closed"] else "not open")
    return EXIT_OK


def cmd_serve(args, conf):
    import uvicorn
    uvicorn.run("seqoram.service.app:app", host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="seqoram", description="Write-only ORAM block device")
    ap.add_argument("--config", help="key=value settings file (also SEQORAM_CONFIG)")
    ap.add_argument("--url", help="talk to a running server instead of an in-process one")
    ap.add_argument("--key-file", help="32 raw bytes or 64 hex digits")
    ap.add_argument("--json", action="store_true", help="machine-readable output")
    sub = ap.add_subparsers(dest="cmd", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", default=argparse.SUPPRESS)
    _add = sub.add_parser

    def add_parser(name, **kw):
        return _add(name, parents=[common], **kw)
    sub.add_parser = add_parser

    def geometry(p):
        p.add_argument("--N", type=int, help="logical blocks (power of two)")
        p.add_argument("--block-size", type=int)
        p.add_argument("--beta", type=int, help="bucket size in blocks")
        p.add_argument("--k", type=int, help="level growth factor (amortized)")
        p.add_argument("--c", type=int, help="memory budget in buckets")
        p.add_argument("--mode", choices=["amortized", "deamortized"])
        p.add_argument("--atm", choices=["on", "off"])
        p.add_argument("--profile", choices=["ctr", "gcm", "test"])
        p.add_argument("--seed", type=int)

    def backend(p):
        p.add_argument("--backend", choices=["file", "mem"])

    p = sub.add_parser("init", help="format a device")
    p.add_argument("device")
    geometry(p)
    backend(p)
    p.add_argument("--force", action="store_true", help="overwrite an existing file")

    p = sub.add_parser("write", help="write one block")
    p.add_argument("device")
    p.add_argument("addr", type=int)
    p.add_argument("file", help="payload file, or - for stdin")
    p.add_argument("--sync", action="store_true", help="force a fake-padded flush")
    backend(p)

    p = sub.add_parser("read", help="read one block")
    p.add_argument("device")
    p.add_argument("addr", type=int)
    p.add_argument("-o", "--output")
    backend(p)

    for name, text in (("sync", "flush the write queue"), ("stats", "device counters"),
                       ("close", "close a server-held device")):
        p = sub.add_parser(name, help=text)
        p.add_argument("device")
        backend(p)

    p = sub.add_parser("fsck", help="decrypt and verify invariants")
    p.add_argument("device")
    p.add_argument("--sample", type=int, help="records per bucket checked via the map")
    backend(p)

    p = sub.add_parser("bench", help="run a workload")
    p.add_argument("device", help="path, or a name with --backend mem")
    p.add_argument("--kind", default="seq_write",
                   choices=["seq_read", "seq_write", "rand_read", "rand_write", "mixed"])
    p.add_argument("--ops", type=int, default=1000)
    p.add_argument("--io-size", type=int, default=1, help="blocks per I/O")
    p.add_argument("--sweep", help="comma-separated I/O sizes")
    p.add_argument("--csv", help="write one row per I/O size")
    geometry(p)
    backend(p)

    p = sub.add_parser("adversary", help="compare the write traces of two patterns")
    p.add_argument("--pattern-a", required=True)
    p.add_argument("--pattern-b", required=True)
    geometry(p)

    p = sub.add_parser("serve", help="run the HTTP API")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8470)
    return ap


COMMANDS = {"init": cmd_init, "write": cmd_write, "read": cmd_read, "sync": cmd_sync,
            "stats": cmd_stats, "fsck": cmd_fsck, "bench": cmd_bench,
            "adversary": cmd_adversary, "close": cmd_close}


def main(argv=None, client=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        conf = settings(args)
        if args.cmd == "serve":
            return cmd_serve(args, conf)
        key = load_key(args, conf) if args.cmd != "adversary" else bytes(32)
        local = client is None and not conf["url"]
        own = client is None
        client = client or make_client(conf["url"])
        try:
            code = COMMANDS[args.cmd](args, conf, client, key)
        finally:
            # an in-process server dies with us: close to persist the queue
            if local and args.cmd not in ("adversary", "close"):
                try:
                    call(client, "/v1/close", {"device": _device(args, conf),
                                               "key_hex": key.hex()})
                except CliError:
                    pass
            if own:
                client.close()
        return code
    except CliError as exc:
        print(f"seqoram: {exc}", file=sys.stderr)
        return exc.code
    except OSError as exc:
        print(f"seqoram: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())

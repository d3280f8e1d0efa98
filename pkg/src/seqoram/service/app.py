"""HTTP front end.  Open devices live in a registry keyed by path; every
request carries the key, which is checked against the open device and
never written anywhere."""
from __future__ import annotations

import base64
import binascii
import hmac
import threading
from contextlib import asynccontextmanager
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import errors
from ..adversary import AccessPattern, assert_indistinguishable
from ..device import create_device, open_device
from ..fsck import fsck
from ..harness import Bench, WorkloadSpec
from ..params import OramParams
from .schemas import (AdversaryRequest, BenchRequest, BenchResponse, DeviceInfo,
                      DeviceRequest, FsckRequest, FsckResponse, InitRequest, ReadRequest,
                      ReadResponse, SyncResponse, VerdictResponse, WriteRequest,
                      WriteResponse)

STATUS = {
    errors.RangeError: 416,
    errors.ParameterError: 422,
    errors.UsageError: 400,
    errors.SizeError: 400,
    errors.ConcurrencyError: 409,
    errors.IntegrityError: 403,
    errors.CorruptionError: 422,
    errors.CapacityError: 507,
    errors.StorageError: 500,
}


class NotOpen(errors.SeqOramError):
    pass


class Registry:
    """Open devices plus one lock each; requests on a device serialize."""

    def __init__(self):
        self.devices: dict[str, tuple] = {}
        self.lock = threading.Lock()

    @staticmethod
    def name(device: str) -> str:
        return device if device.startswith("mem:") else str(Path(device).resolve())

    def add(self, device: str, dev) -> None:
        with self.lock:
            old = self.devices.pop(self.name(device), None)
            if old is not None:
                old[0].close()
            self.devices[self.name(device)] = (dev, threading.Lock())

    def get(self, device: str, key: bytes):
        name = self.name(device)
        with self.lock:
            entry = self.devices.get(name)
            if entry is None:
                if name.startswith("mem:"):
                    raise NotOpen(f"no in-memory device {device!r}")
                entry = (open_device(name, key), threading.Lock())
                self.devices[name] = entry
        if not hmac.compare_digest(entry[0].key, key):
            raise errors.IntegrityError("key does not match the open device")
        return entry

    def close(self, device: str, key: bytes) -> bool:
        name = self.name(device)
        with self.lock:
            entry = self.devices.get(name)
            if entry is None:
                return False
            if not hmac.compare_digest(entry[0].key, key):
                raise errors.IntegrityError("key does not match the open device")
            del self.devices[name]
        with entry[1]:
            entry[0].close()
        return True

    def close_all(self) -> None:
        with self.lock:
            for dev, lock in self.devices.values():
                with lock:
                    dev.close()
            self.devices.clear()


def _key(req: DeviceRequest) -> bytes:
    return bytes.fromhex(req.key_hex)


def _info(device: str, dev) -> DeviceInfo:
    return DeviceInfo(device=device, params=dev.params.as_dict(),
                      block_count=dev.layout.block_count,
                      levels=dev.layout.buffered_levels + 1, g=dev.g)


def create_app() -> FastAPI:
    reg = Registry()

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        yield
        reg.close_all()

    app = FastAPI(title="seqoram", version="0.1.0", lifespan=lifespan)
    app.state.registry = reg

    @app.exception_handler(errors.SeqOramError)
    async def _oram_error(request: Request, exc: errors.SeqOramError):
        status = 404 if isinstance(exc, NotOpen) else STATUS.get(type(exc), 400)
        return JSONResponse(status_code=status,
                            content={"error": type(exc).__name__, "detail": str(exc)})

    @app.get("/v1/health")
    def health():
        return {"ok": True, "open": sorted(reg.devices)}

    @app.post("/v1/init", response_model=DeviceInfo)
    def init(req: InitRequest):
        params = OramParams(N=req.N, block_size=req.block_size, beta=req.beta, k=req.k,
                            c=req.c, mode=req.mode, atm=req.atm, profile=req.profile)
        path = None if req.device.startswith("mem:") else req.device
        dev = create_device(params, _key(req), path=path, seed=req.seed, force=req.force)
        reg.add(req.device, dev)
        return _info(req.device, dev)

    @app.post("/v1/open", response_model=DeviceInfo)
    def open_(req: DeviceRequest):
        dev, _ = reg.get(req.device, _key(req))
        return _info(req.device, dev)

    @app.post("/v1/write", response_model=WriteResponse)
    def write(req: WriteRequest):
        try:
            data = base64.b64decode(req.data_b64, validate=True)
        except binascii.Error as exc:
            raise errors.UsageError(f"data is not base64: {exc}") from None
        dev, lock = reg.get(req.device, _key(req))
        with lock:
            before = dev.g
            dev.write(req.addr, data)
            if req.sync:
                dev.sync()
            return WriteResponse(addr=req.addr, buffered=req.addr in dev.queue,
                                 flushes=dev.g - before)

    @app.post("/v1/read", response_model=ReadResponse)
    def read(req: ReadRequest):
        dev, lock = reg.get(req.device, _key(req))
        with lock:
            data = dev.read(req.addr)
            unwritten = None
            if getattr(dev, "atm", False):
                unwritten = req.addr not in dev.queue and dev.atm_lookup(req.addr) is None
        return ReadResponse(addr=req.addr, data_b64=base64.b64encode(data).decode(),
                            unwritten=unwritten)

    @app.post("/v1/sync", response_model=SyncResponse)
    def sync(req: DeviceRequest):
        dev, lock = reg.get(req.device, _key(req))
        with lock:
            flushed = dev.sync()
            dev.store.flush()
            return SyncResponse(flushed=flushed, g=dev.g)

    @app.post("/v1/stats")
    def stats(req: DeviceRequest):
        dev, lock = reg.get(req.device, _key(req))
        with lock:
            st = dev.stats()
            st["flush_writes_last"] = dev.flush_writes[-1] if dev.flush_writes else None
            return st

    @app.post("/v1/fsck", response_model=FsckResponse)
    def check(req: FsckRequest):
        dev, lock = reg.get(req.device, _key(req))
        with lock:
            return FsckResponse(**fsck(dev, req.sample).as_dict())

    @app.post("/v1/bench", response_model=BenchResponse)
    def bench(req: BenchRequest):
        dev, lock = reg.get(req.device, _key(req))
        sizes = req.sweep or [req.io_size_blocks]
        with lock:
            b = Bench(dev)
            reports = [b.run(WorkloadSpec(req.kind, req.op_count, io, req.addr_lo, req.addr_hi,
                                          req.seed, req.read_fraction)) for io in sizes]
        return BenchResponse(reports=[r.as_dict() for r in reports])

    @app.post("/v1/adversary", response_model=VerdictResponse)
    def adversary(req: AdversaryRequest):
        params = OramParams(N=req.N, block_size=req.block_size, beta=req.beta,
                            mode=req.mode, atm=req.atm)
        v = assert_indistinguishable(AccessPattern.parse(req.pattern_a),
                                     AccessPattern.parse(req.pattern_b),
                                     params, req.seed, snapshots=req.snapshots)
        return VerdictResponse(**v.as_dict())

    @app.post("/v1/close")
    def close(req: DeviceRequest):
        return {"closed": reg.close(req.device, _key(req))}

    return app


app = create_app()

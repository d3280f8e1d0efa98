"""Request and response bodies for the HTTP API."""
from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field


class DeviceRequest(BaseModel):
    # a file path, or "mem:<name>" for a device held by the server
    device: str
    key_hex: str = Field(min_length=64, max_length=64, pattern="^[0-9a-fA-F]+$")


class InitRequest(DeviceRequest):
    N: int = Field(default=4096, ge=2)
    block_size: int = 4096
    beta: Optional[int] = None
    k: int = 2
    c: Optional[int] = None
    mode: Literal["amortized", "deamortized"] = "deamortized"
    atm: bool = True
    profile: Literal["ctr", "gcm", "test"] = "ctr"
    seed: Optional[int] = None
    force: bool = False


class DeviceInfo(BaseModel):
    device: str
    params: dict
    block_count: int
    levels: int
    g: int


class WriteRequest(DeviceRequest):
    addr: int
    data_b64: str
    sync: bool = False


class WriteResponse(BaseModel):
    addr: int
    buffered: bool  # still only in the write queue
    flushes: int


class ReadRequest(DeviceRequest):
    addr: int


class ReadResponse(BaseModel):
    addr: int
    data_b64: str
    # None when the construction keeps no record of write times
    unwritten: Optional[bool] = None


class SyncResponse(BaseModel):
    flushed: bool
    g: int


class FsckRequest(DeviceRequest):
    sample: Optional[int] = Field(default=None, ge=0)


class FsckResponse(BaseModel):
    ok: bool
    runs: int
    buckets: int
    records: int
    problems: list[str]


class BenchRequest(DeviceRequest):
    kind: Literal["seq_read", "seq_write", "rand_read", "rand_write", "mixed"] = "seq_write"
    op_count: int = Field(default=1000, ge=1)
    io_size_blocks: int = Field(default=1, ge=1)
    addr_lo: int = 0
    addr_hi: Optional[int] = None
    seed: int = 0
    read_fraction: float = Field(default=0.5, ge=0, le=1)
    sweep: Optional[list[int]] = None  # io sizes; overrides io_size_blocks


class BenchReportModel(BaseModel):
    kind: str
    ops: int
    io_size_blocks: int
    logical_blocks: int
    logical_bytes: int
    elapsed: float
    throughput: float
    modeled_seconds: float
    modeled_throughput: float
    physical_reads: int
    physical_writes: int
    seeks: int
    physical_reads_per_op: float
    physical_writes_per_op: float
    seeks_per_op: float
    flushes: int
    flush_histogram: dict[str, int]
    verified: int
    verify_failures: int


class BenchResponse(BaseModel):
    reports: list[BenchReportModel]


class AdversaryRequest(BaseModel):
    pattern_a: str  # "addr payload_seed" lines
    pattern_b: str
    seed: int = 0
    N: int = 256
    block_size: int = 512
    beta: Optional[int] = 8
    mode: Literal["amortized", "deamortized"] = "deamortized"
    atm: bool = True
    snapshots: bool = True


class VerdictResponse(BaseModel):
    passed: bool
    compared_flushes: int
    flushes_a: int
    flushes_b: int
    flush_rate_a: float
    flush_rate_b: float
    first_divergence: Optional[int] = None
    reason: str = ""


class ErrorResponse(BaseModel):
    error: str
    detail: str

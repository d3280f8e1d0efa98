"""Physical block device with seek/trace instrumentation.

Two backends share one interface: a bytearray held in memory and a raw file
accessed with positional I/O.  Every access goes through :class:`BlockStore`,
which keeps the counters an adversary-free observer would see (reads, writes,
modeled seeks) and the write trace a multi-snapshot adversary would infer.
"""
from __future__ import annotations

import os
import struct
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import ConcurrencyError, RangeError, SizeError, StorageError


@dataclass
class AccessStats:
    physical_reads: int = 0
    physical_writes: int = 0
    seeks: int = 0
    last_accessed_index: int | None = None

    def copy(self) -> "AccessStats":
        return AccessStats(self.physical_reads, self.physical_writes,
                           self.seeks, self.last_accessed_index)

    def __sub__(self, other: "AccessStats") -> "AccessStats":
        return AccessStats(self.physical_reads - other.physical_reads,
                           self.physical_writes - other.physical_writes,
                           self.seeks - other.seeks,
                           self.last_accessed_index)

    def as_dict(self) -> dict:
        return {"physical_reads": self.physical_reads,
                "physical_writes": self.physical_writes,
                "seeks": self.seeks}


@dataclass
class WriteTrace:
    entries: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[int]:
        return iter(self.entries)

    def __getitem__(self, item):
        return self.entries[item]


@dataclass(frozen=True)
class Snapshot:
    image: bytes
    block_size: int
    block_count: int
    seq: int

    def block(self, index: int) -> bytes:
        off = index * self.block_size
        return self.image[off:off + self.block_size]


def count_seeks(indices: Iterable[int], previous: int | None = None) -> int:
    """Replay an access sequence under the adjacency seek model."""
    seeks = 0
    last = previous
    for i in indices:
        if last is None or i != last + 1:
            seeks += 1
        last = i
    return seeks


class MemoryBackend:
    def __init__(self, block_size: int, block_count: int):
        self.block_size = block_size
        self.block_count = block_count
        self._buf = bytearray(block_size * block_count)

    def read(self, offset: int, length: int) -> bytes:
        return bytes(self._buf[offset:offset + length])

    def write(self, offset: int, data) -> None:
        self._buf[offset:offset + len(data)] = data

    def image(self) -> bytes:
        return bytes(self._buf)

    def flush(self) -> None:
        pass

    def close(self) -> None:
        pass


class FileBackend:
    def __init__(self, path: str | os.PathLike, block_size: int,
                 block_count: int, create: bool = False):
        self.path = Path(path)
        self.block_size = block_size
        self.block_count = block_count
        flags = os.O_RDWR | (os.O_CREAT if create else 0)
        try:
            self._fd = os.open(self.path, flags, 0o600)
            size = block_size * block_count
            if create:
                os.ftruncate(self._fd, 0)
                os.ftruncate(self._fd, size)
            elif os.fstat(self._fd).st_size < size:
                raise StorageError(f"{self.path}: file shorter than device")
        except OSError as exc:
            raise StorageError(str(exc)) from exc

    def read(self, offset: int, length: int) -> bytes:
        try:
            data = os.pread(self._fd, length, offset)
        except OSError as exc:
            raise StorageError(str(exc)) from exc
        if len(data) != length:
            raise StorageError("short read")
        return data

    def write(self, offset: int, data) -> None:
        try:
            n = os.pwrite(self._fd, data, offset)
        except OSError as exc:
            raise StorageError(str(exc)) from exc
        if n != len(data):
            raise StorageError("short write")

    def image(self) -> bytes:
        return self.read(0, self.block_size * self.block_count)

    def flush(self) -> None:
        os.fsync(self._fd)

    def close(self) -> None:
        if self._fd >= 0:
            os.close(self._fd)
            self._fd = -1


class BlockStore:
    """Block-granular access with stats, optional trace recording and a
    mutation guard.

    Reads and writes share one head position for the seek model.
    """

    def __init__(self, backend, block_size: int, block_count: int):
        if block_size < 512 or block_size & (block_size - 1):
            raise SizeError("block size must be a power of two >= 512")
        self.backend = backend
        self.block_size = block_size
        self.block_count = block_count
        self.stats = AccessStats()
        self.trace: WriteTrace | None = None
        self._guard = threading.Lock()
        self._snap_seq = 0

    @classmethod
    def in_memory(cls, block_size: int, block_count: int) -> "BlockStore":
        return cls(MemoryBackend(block_size, block_count), block_size, block_count)

    @classmethod
    def file(cls, path, block_size: int, block_count: int,
             create: bool = False) -> "BlockStore":
        return cls(FileBackend(path, block_size, block_count, create),
                   block_size, block_count)

    # instrumentation -----------------------------------------------------

    def start_recording(self) -> WriteTrace:
        self.trace = WriteTrace()
        return self.trace

    def stop_recording(self) -> WriteTrace | None:
        trace, self.trace = self.trace, None
        return trace

    def _account(self, start: int, count: int, write: bool) -> None:
        st = self.stats
        if st.last_accessed_index is None or start != st.last_accessed_index + 1:
            st.seeks += 1
        st.last_accessed_index = start + count - 1
        if write:
            st.physical_writes += count
            if self.trace is not None:
                self.trace.entries.extend(range(start, start + count))
        else:
            st.physical_reads += count

    def _check_range(self, start: int, count: int) -> None:
        if start < 0 or count < 0 or start + count > self.block_count:
            raise RangeError(
                f"blocks [{start}, {start + count}) outside device of "
                f"{self.block_count} blocks")

    # block I/O -----------------------------------------------------------

    def read_block(self, index: int) -> bytes:
        return self.read_blocks(index, 1)

    def read_blocks(self, start: int, count: int) -> bytes:
        self._check_range(start, count)
        if count == 0:
            return b""
        data = self.backend.read(start * self.block_size, count * self.block_size)
        self._account(start, count, write=False)
        return data

    def write_block(self, index: int, data) -> None:
        if len(data) != self.block_size:
            raise SizeError(f"expected {self.block_size} bytes, got {len(data)}")
        self.write_blocks(index, data)

    def write_blocks(self, start: int, data) -> None:
        if isinstance(data, np.ndarray):
            data = data.tobytes()
        if len(data) % self.block_size:
            raise SizeError("data is not a whole number of blocks")
        count = len(data) // self.block_size
        self._check_range(start, count)
        if count == 0:
            return
        if not self._guard.acquire(blocking=False):
            raise ConcurrencyError("interleaved mutation of the block store")
        try:
            self.backend.write(start * self.block_size, data)
            self._account(start, count, write=True)
        finally:
            self._guard.release()

    def snapshot(self) -> Snapshot:
        if not self._guard.acquire(blocking=False):
            raise ConcurrencyError("snapshot during mutation")
        try:
            self._snap_seq += 1
            return Snapshot(self.backend.image(), self.block_size,
                            self.block_count, self._snap_seq)
        finally:
            self._guard.release()

    def flush(self) -> None:
        self.backend.flush()

    def close(self) -> None:
        self.backend.close()


# trace files -------------------------------------------------------------

def write_trace_file(path, indices: Sequence[int], text: bool = False) -> None:
    with open(path, "w" if text else "wb") as fh:
        if text:
            fh.writelines(f"{i}\n" for i in indices)
        else:
            fh.write(struct.pack(f"<{len(indices)}Q", *indices))


def read_trace_file(path, text: bool = False) -> list[int]:
    if text:
        with open(path) as fh:
            return [int(line) for line in fh if line.strip()]
    raw = Path(path).read_bytes()
    if len(raw) % 8:
        raise StorageError("trace file is not a whole number of u64 entries")
    return list(struct.unpack(f"<{len(raw) // 8}Q", raw))

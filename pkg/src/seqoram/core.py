"""Pieces shared by both constructions: bucket I/O, the write queue, device
lifecycle and the common read/write surface."""
from __future__ import annotations

import hashlib
import os
import struct
from pathlib import Path

import numpy as np
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .blockstore import BlockStore
from .crypto import BlockCipher, IvSource, derive_key
from .errors import CorruptionError, RangeError, SizeError, UsageError
from .levelmap import NodeIO, decode_node, encode_leaf, LEAF
from .params import SENTINEL, Layout, OramParams
from .superblock import State, pack_superblock, unpack_superblock

U64 = np.uint64
FAKE = U64(SENTINEL)


def sort_records(addrs: np.ndarray, payloads: np.ndarray):
    order = np.argsort(addrs, kind="stable")
    return addrs[order], payloads[order]


class BucketIO:
    """Writes and reads bucket extents ``[beta data][iv blocks][leaf?]``."""

    def __init__(self, store: BlockStore, layout: Layout, cipher: BlockCipher,
                 ivsrc: IvSource):
        self.store = store
        self.layout = layout
        self.cipher = cipher
        self.ivsrc = ivsrc
        self.B = layout.block_size
        self.beta = layout.beta
        self.slot = layout.slot_bytes
        self.nodes = NodeIO(store, cipher, ivsrc)

    def fake_bucket(self):
        return (np.full(self.beta, FAKE, dtype=U64),
                np.zeros((self.beta, self.B), dtype=np.uint8))

    def _encode(self, buckets, leaves: bool) -> np.ndarray:
        beta, B, ivb = self.beta, self.B, self.layout.iv_blocks
        n = len(buckets)
        per = beta + ivb + (1 if leaves else 0)
        plain = np.concatenate([p for _, p, _ in buckets]) if n else np.zeros((0, B), np.uint8)
        bodies, slots = self.cipher.encrypt_many(plain, self.ivsrc.take(n * beta))
        out = np.zeros((n, per, B), dtype=np.uint8)
        out[:, :beta] = bodies.reshape(n, beta, B)
        ivbytes = np.zeros((n, ivb * B), dtype=np.uint8)
        ivbytes[:, :beta * self.slot] = slots.reshape(n, beta * self.slot)
        out[:, beta:beta + ivb] = ivbytes.reshape(n, ivb, B)
        if leaves:
            for j, (addrs, _, number) in enumerate(buckets):
                leaf = self.nodes.seal(encode_leaf(addrs, number))
                out[j, per - 1] = np.frombuffer(leaf, np.uint8)
        return out.reshape(n * per, B)

    def write_buckets(self, start: int, buckets, leaves: bool = True) -> None:
        """``buckets`` is a list of ``(addrs, payloads, bucket_number)``
        written as one contiguous extent from ``start``."""
        self.store.write_blocks(start, self._encode(buckets, leaves))

    def read_buckets(self, start: int, count: int, leaves: bool = True):
        """Return a list of ``(addrs | None, payloads)``."""
        beta, B, ivb = self.beta, self.B, self.layout.iv_blocks
        per = beta + ivb + (1 if leaves else 0)
        raw = np.frombuffer(self.store.read_blocks(start, count * per), np.uint8)
        raw = raw.reshape(count, per, B)
        bodies = raw[:, :beta].reshape(count * beta, B)
        slots = raw[:, beta:beta + ivb].reshape(count, ivb * B)[:, :beta * self.slot]
        plain = self.cipher.decrypt_many(bodies, slots.reshape(count * beta, self.slot))
        plain = plain.reshape(count, beta, B)
        out = []
        for j in range(count):
            addrs = None
            if leaves:
                kind, entries = decode_node(self.cipher.unseal(raw[j, per - 1].tobytes()))
                if kind != LEAF or len(entries) != beta:
                    raise CorruptionError("bucket leaf malformed")
                addrs = entries["key"].copy()
            out.append((addrs, plain[j].copy()))
        return out

    def read_extent_records(self, start: int, addrs, leaves: bool = True, offsets=None) -> dict:
        """One sequential read of a whole bucket extent, decrypting only the
        leaf and the wanted records.  Returns ``{addr: payload | None}``."""
        beta, B, ivb = self.beta, self.B, self.layout.iv_blocks
        per = beta + ivb + (1 if leaves else 0)
        raw = np.frombuffer(self.store.read_blocks(start, per), np.uint8).reshape(per, B)
        addrs = list(addrs)
        if offsets is None:
            kind, entries = decode_node(self.cipher.unseal(raw[per - 1].tobytes()))
            if kind != LEAF or len(entries) != beta:
                raise CorruptionError("bucket leaf malformed")
            keys = entries["key"]
            offsets = []
            for a in addrs:
                pos = int(np.searchsorted(keys, U64(a)))
                offsets.append(pos if pos < beta and int(keys[pos]) == a else None)
        out = {}
        slots = raw[beta:beta + ivb].reshape(-1)
        for a, off in zip(addrs, offsets):
            if off is None:
                out[a] = None
                continue
            slot = slots[off * self.slot:(off + 1) * self.slot]
            out[a] = self.cipher.decrypt_many(raw[off][None, :], slot[None, :])[0].tobytes()
        return out

    def read_extent_record(self, start: int, addr: int, leaves: bool = True,
                           offset: int | None = None):
        offsets = None if offset is None else [offset]
        return self.read_extent_records(start, [addr], leaves, offsets)[addr]

    def read_record(self, base: int, offset: int) -> bytes:
        """Two reads: the data block and the IV block holding its slot."""
        body = np.frombuffer(self.store.read_block(base + offset), np.uint8)[None, :]
        pos = offset * self.slot
        ivblk = self.store.read_block(base + self.beta + pos // self.B)
        slot = np.frombuffer(ivblk, np.uint8)[pos % self.B:pos % self.B + self.slot][None, :]
        return self.cipher.decrypt_many(body, slot)[0].tobytes()


class RecordStream:
    """Sorted record stream over a run of buckets, read ``batch`` buckets at
    a time from ``first_slot`` (or served from ``memory``).  Fakes trail, so
    the first fake ends the stream."""

    def __init__(self, io: BucketIO, run, first_slot: int, nbuckets: int, pos: int = 0,
                 live: bool = True, batch: int = 1, memory=None):
        self.io = io
        self.run = run
        self.first_slot = first_slot
        self.nbuckets = nbuckets
        self.pos = pos
        self.batch = batch
        self.beta = io.beta
        self.next_bucket = pos // self.beta
        self.skip = pos % self.beta
        self.addrs = np.zeros(0, dtype=U64)
        self.payloads = np.zeros((0, io.B), dtype=np.uint8)
        self.done = not live
        if memory is not None and live:
            self._take(memory[0][pos:], memory[1][pos:])
            self.done = True

    def _take(self, a, p) -> None:
        fake = np.flatnonzero(a == FAKE)
        if fake.size:
            self.done = True
            a, p = a[:fake[0]], p[:fake[0]]
        self.addrs = np.concatenate([self.addrs, a])
        self.payloads = np.concatenate([self.payloads, p])

    def _read_batch(self) -> None:
        n = min(self.batch, self.nbuckets - self.next_bucket)
        got = self.io.read_buckets(self.run.slot(self.first_slot + self.next_bucket), n)
        a = np.concatenate([x for x, _ in got])[self.skip:]
        p = np.concatenate([y for _, y in got])[self.skip:]
        self.skip = 0
        self.next_bucket += n
        self._take(a, p)

    def fill(self, need: int) -> None:
        while not self.done and len(self.addrs) < need:
            if self.next_bucket >= self.nbuckets:
                self.done = True
                break
            self._read_batch()

    def read_until(self, bucket: int) -> None:
        """Make sure every bucket before ``bucket`` (relative) is in memory."""
        while not self.done and self.next_bucket < min(bucket, self.nbuckets):
            self._read_batch()

    def consume(self, k: int) -> None:
        self.addrs = self.addrs[k:]
        self.payloads = self.payloads[k:]
        self.pos += k


def pull(older: RecordStream, newer: RecordStream, count: int, bound: int | None = None):
    """Next ``count`` distinct records of the merged streams in address
    order (below ``bound`` if given).  On duplicates the newer copy wins
    and the older one is dropped."""
    older.fill(count)
    newer.fill(count)
    A = np.concatenate([older.addrs, newer.addrs])
    if A.size == 0:
        return A, np.zeros((0, older.io.B), np.uint8)
    P = np.concatenate([older.payloads, newer.payloads])
    rank = np.concatenate([np.ones(len(older.addrs), np.int8), np.zeros(len(newer.addrs), np.int8)])
    order = np.lexsort((rank, A))
    As = A[order]
    first = np.ones(len(As), dtype=bool)
    first[1:] = As[1:] != As[:-1]
    sel = order[first]
    if bound is not None:
        sel = sel[A[sel] < U64(bound)]
    sel = sel[:count]
    if sel.size:
        last = A[sel[-1]]
        older.consume(int(np.searchsorted(older.addrs, last, side="right")))
        newer.consume(int(np.searchsorted(newer.addrs, last, side="right")))
    return A[sel], P[sel]


def pad_bucket(a, p, beta: int, block_size: int):
    addrs = np.full(beta, FAKE, dtype=U64)
    payloads = np.zeros((beta, block_size), dtype=np.uint8)
    addrs[:len(a)] = a
    payloads[:len(a)] = p
    return addrs, payloads


class WriteQueue:
    """Up to ``beta`` pending records; newest write to an address wins."""

    def __init__(self, capacity: int, block_size: int):
        self.capacity = capacity
        self.block_size = block_size
        self.items: dict[int, bytes] = {}

    def __len__(self) -> int:
        return len(self.items)

    def __contains__(self, addr: int) -> bool:
        return addr in self.items

    def get(self, addr: int):
        return self.items.get(addr)

    def put(self, addr: int, data: bytes) -> None:
        if addr not in self.items and len(self.items) >= self.capacity:
            raise RuntimeError("write queue overflow")
        self.items[addr] = data

    @property
    def full(self) -> bool:
        return len(self.items) >= self.capacity

    def drain(self):
        """Sorted ``(addrs, payloads)`` padded with fakes to capacity."""
        n = len(self.items)
        addrs = np.full(self.capacity, FAKE, dtype=U64)
        payloads = np.zeros((self.capacity, self.block_size), dtype=np.uint8)
        for j, a in enumerate(sorted(self.items)):
            addrs[j] = a
            payloads[j] = np.frombuffer(self.items[a], np.uint8)
        self.items = {}
        return addrs, payloads, n

    # sidecar persistence -------------------------------------------------

    def dump(self) -> bytes:
        parts = [struct.pack("<I", len(self.items))]
        for a in sorted(self.items):
            parts.append(struct.pack("<Q", a) + self.items[a])
        return b"".join(parts)

    def load(self, raw: bytes) -> None:
        (n,), pos = struct.unpack_from("<I", raw), 4
        self.items = {}
        for _ in range(n):
            (a,) = struct.unpack_from("<Q", raw, pos)
            self.items[a] = raw[pos + 8:pos + 8 + self.block_size]
            pos += 8 + self.block_size


def seed_salt(seed) -> bytes:
    if seed is None:
        return os.urandom(16)
    return hashlib.sha256(f"seqoram-seed:{seed}".encode()).digest()[:16]


def as_block(data, block_size: int) -> bytes:
    data = bytes(data)
    if len(data) > block_size:
        raise SizeError(f"payload of {len(data)} bytes exceeds block size {block_size}")
    return data.ljust(block_size, b"\0")


class OramBase:
    """Device lifecycle plus the logical read/write surface."""

    mode = ""

    def __init__(self, store: BlockStore, params: OramParams, key: bytes, salt: bytes,
                 state: State | None = None, path: str | None = None):
        self.store = store
        self.params = params
        self.layout = Layout(params)
        self.salt = salt
        self.key = key
        self.path = path
        self.cipher = BlockCipher(derive_key(key, b"seqoram-data", salt), params.profile)
        state = state or State()
        self.ivsrc = IvSource(derive_key(key, b"seqoram-iv", salt), state.iv_counter)
        self.io = BucketIO(store, self.layout, self.cipher, self.ivsrc)
        self.g = state.g
        self.queue = WriteQueue(params.beta, params.block_size)
        self.logical_reads = 0
        self.logical_writes = 0
        self.flush_writes: list[int] = []
        self.closed = False

    # construction --------------------------------------------------------

    @classmethod
    def create(cls, params: OramParams, key: bytes, store: BlockStore | None = None,
               seed=None, path: str | None = None):
        layout = Layout(params)
        if store is None:
            store = BlockStore.in_memory(params.block_size, layout.block_count)
        if store.block_count < layout.block_count:
            raise SizeError("store smaller than the layout needs")
        dev = cls(store, params, key, seed_salt(seed), path=path)
        dev._fresh()
        dev.write_superblock()
        return dev

    @classmethod
    def load(cls, store: BlockStore, key: bytes, path: str | None = None):
        header, state = unpack_superblock(store.read_block(0), _cipher_for(store, key))
        dev = cls(store, header.params, key, header.salt, state, path=path)
        dev._restore(state.extra, state)
        dev._load_queue()
        return dev

    def _fresh(self) -> None:
        raise NotImplementedError

    def _restore(self, extra: bytes, state: State) -> None:
        raise NotImplementedError

    def state_extra(self) -> bytes:
        return b""

    def root_ctr(self) -> int:
        return SENTINEL

    def superblock_bytes(self) -> bytes:
        state = State(self.g, self.root_ctr(), 0, self.state_extra())
        iv = self.ivsrc.take(1)[0]
        state.iv_counter = self.ivsrc.counter
        return pack_superblock(self.params, self.salt, state, self.cipher, iv)

    def write_superblock(self, tail=None) -> None:
        """Rewrite block 0, optionally followed by ``tail`` blocks from
        index 1 in the same sequential write."""
        sb = np.frombuffer(self.superblock_bytes(), np.uint8)
        if tail is None:
            self.store.write_block(0, sb.tobytes())
        else:
            self.store.write_blocks(0, np.concatenate([sb, np.asarray(tail).reshape(-1)]))

    # logical interface ---------------------------------------------------

    def check_addr(self, addr: int) -> None:
        if not 0 <= addr < self.params.N:
            raise RangeError(f"address {addr} outside [0, {self.params.N})")

    def write(self, addr: int, data) -> None:
        self.check_addr(addr)
        self.logical_writes += 1
        self._write(addr, as_block(data, self.params.block_size))

    def read(self, addr: int) -> bytes:
        self.check_addr(addr)
        self.logical_reads += 1
        return self._read(addr)

    def read_range(self, start: int, count: int) -> list[bytes]:
        """Read ``count`` consecutive addresses as one I/O."""
        self.check_addr(start)
        self.check_addr(start + count - 1)
        self.logical_reads += count
        return self._read_range(start, count)

    def _read_range(self, start: int, count: int) -> list[bytes]:
        return [self._read(a) for a in range(start, start + count)]

    def _gather(self, out: list, groups: dict, fallback) -> list[bytes]:
        """Fill ``out`` from ``groups`` of ``(extent start, leaves) -> [(i,
        addr, offset)]``, one read per extent in ascending order."""
        for (st, leaves) in sorted(groups):
            items = groups[(st, leaves)]
            offsets = None if leaves else [o for _, _, o in items]
            recs = self.io.read_extent_records(st, [a for _, a, _ in items], leaves, offsets)
            for i, a, _ in items:
                out[i] = recs[a] if recs[a] is not None else fallback(a)
        return out

    def sync(self) -> bool:
        """Force a fake-padded flush of a non-empty queue."""
        if len(self.queue) == 0:
            return False
        self.flush()
        return True

    def flush(self) -> None:
        before = self.store.stats.physical_writes
        tail = self._flush()
        self.g += 1
        self.write_superblock(tail)
        self.flush_writes.append(self.store.stats.physical_writes - before)

    def _write(self, addr: int, data: bytes) -> None:
        raise NotImplementedError

    def _read(self, addr: int) -> bytes:
        raise NotImplementedError

    def _flush(self):
        """Do the flush work; may return blocks to write right after the
        superblock."""
        raise NotImplementedError

    # sidecar queue ---------------------------------------------------------

    def _sidecar(self) -> Path | None:
        return Path(str(self.path) + ".queue") if self.path else None

    def _queue_key(self) -> bytes:
        return derive_key(self.key, b"seqoram-queue", self.salt)

    def _save_queue(self) -> None:
        side = self._sidecar()
        if side is None:
            return
        if len(self.queue) == 0:
            side.unlink(missing_ok=True)
            return
        nonce = os.urandom(12)
        side.write_bytes(nonce + AESGCM(self._queue_key()).encrypt(nonce, self.queue.dump(), None))

    def _load_queue(self) -> None:
        side = self._sidecar()
        if side is None or not side.exists():
            return
        raw = side.read_bytes()
        self.queue.load(AESGCM(self._queue_key()).decrypt(raw[:12], raw[12:], None))

    def close(self) -> None:
        if self.closed:
            return
        self._save_queue()
        self.store.flush()
        self.store.close()
        self.closed = True

    def stats(self) -> dict:
        st = self.store.stats.as_dict()
        st.update(g=self.g, logical_reads=self.logical_reads,
                  logical_writes=self.logical_writes, queued=len(self.queue),
                  mode=self.mode)
        return st


def _cipher_for(store: BlockStore, key: bytes) -> BlockCipher:
    from .superblock import unpack_header
    header = unpack_header(store.read_block(0))
    return BlockCipher(derive_key(key, b"seqoram-data", header.salt), header.params.profile)

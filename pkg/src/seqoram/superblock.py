"""Block 0: plaintext geometry header plus an encrypted state body."""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .crypto import PROFILES, BlockCipher
from .errors import CorruptionError, IntegrityError
from .params import MODES, OramParams

MAGIC = b"SQOR"
VERSION = 1
HEADER_SIZE = 128
_HEAD = struct.Struct("<4sHBBB3x5Q16s")
_BODY_MAGIC = b"SQORBODY"
_BODY = struct.Struct("<8sQQQI")


@dataclass
class Header:
    params: OramParams
    salt: bytes


@dataclass
class State:
    g: int = 0
    root_ctr: int = (1 << 64) - 1
    iv_counter: int = 0
    extra: bytes = b""


def pack_header(params: OramParams, salt: bytes) -> bytes:
    raw = _HEAD.pack(MAGIC, VERSION, MODES.index(params.mode),
                     PROFILES.index(params.profile), int(params.atm),
                     params.N, params.block_size, params.beta, params.k, params.c, salt)
    return raw.ljust(HEADER_SIZE, b"\0")


def unpack_header(block: bytes) -> Header:
    if block[:4] != MAGIC:
        raise CorruptionError("not a SeqORAM device (bad magic)")
    (_, version, mode, profile, atm, n, bsize, beta, k, c, salt) = _HEAD.unpack_from(block)
    if version != VERSION:
        raise CorruptionError(f"unsupported format version {version}")
    if mode >= len(MODES) or profile >= len(PROFILES):
        raise CorruptionError("bad mode or profile tag")
    # re-validated on construction; never trust raw geometry
    params = OramParams(N=n, block_size=bsize, beta=beta, k=k, c=c, mode=MODES[mode],
                        atm=bool(atm), profile=PROFILES[profile])
    return Header(params, salt)


def pack_superblock(params: OramParams, salt: bytes, state: State,
                    cipher: BlockCipher, iv: np.ndarray) -> bytes:
    body = _BODY.pack(_BODY_MAGIC, state.g, state.root_ctr, state.iv_counter,
                      len(state.extra)) + state.extra
    sealed = cipher.seal(body, iv, params.block_size - HEADER_SIZE)
    return pack_header(params, salt) + sealed


def unpack_superblock(block: bytes, cipher: BlockCipher) -> tuple[Header, State]:
    header = unpack_header(block)
    body = cipher.unseal(block[HEADER_SIZE:])
    magic, g, root_ctr, iv_counter, n = _BODY.unpack_from(body)
    if magic != _BODY_MAGIC:
        raise IntegrityError("superblock body did not decrypt (wrong key?)")
    start = _BODY.size
    return header, State(g, root_ctr, iv_counter, body[start:start + n])

"""Randomized per-block encryption.

Profiles:

``ctr``   AES-256-CTR, one random 128-bit IV per block (no integrity).
``gcm``   AES-256-GCM, 96-bit nonce plus 128-bit tag per block.
``test``  keystream = SHAKE-128(key || iv); insecure, deterministic, for
          debugging merge logic only.

IVs and tags live in fixed-size *slots* kept outside the block body.  A slot
of all zero bytes marks a block that was never written; it decrypts to zeros.
"""
from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass

import numpy as np
from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .errors import IntegrityError, SizeError, UsageError

KEY_SIZE = 32
PROFILES = ("ctr", "gcm", "test")
_SLOT = {"ctr": 16, "test": 16, "gcm": 32}
_IV = {"ctr": 16, "test": 16, "gcm": 12}
_TAG = 16


@dataclass(frozen=True)
class BlockCiphertext:
    body: bytes
    iv: bytes
    tag: bytes = b""


def slot_size(profile: str) -> int:
    return _SLOT[profile]


def derive_key(key: bytes, info: bytes, salt: bytes | None = None) -> bytes:
    return HKDF(algorithm=hashes.SHA256(), length=KEY_SIZE, salt=salt,
                info=info).derive(key)


class BlockCipher:
    def __init__(self, key: bytes, profile: str = "ctr"):
        if len(key) != KEY_SIZE:
            raise UsageError(f"key must be {KEY_SIZE} bytes")
        if profile not in PROFILES:
            raise UsageError(f"unknown cipher profile {profile!r}")
        self.key = key
        self.profile = profile
        self.iv_size = _IV[profile]
        self.slot_size = _SLOT[profile]
        self._aes = algorithms.AES(key)
        self._gcm = AESGCM(key) if profile == "gcm" else None

    # keystreams ----------------------------------------------------------

    def _ctr_keystream(self, ivs: np.ndarray, length: int) -> np.ndarray:
        n = ivs.shape[0]
        nctr = length // 16
        hi = np.ascontiguousarray(ivs[:, :8]).view(">u8").reshape(n).astype(np.uint64)
        lo = np.ascontiguousarray(ivs[:, 8:16]).view(">u8").reshape(n).astype(np.uint64)
        step = np.arange(nctr, dtype=np.uint64)
        lo2 = lo[:, None] + step[None, :]
        hi2 = hi[:, None] + (lo2 < lo[:, None]).astype(np.uint64)
        ctrs = np.empty((n, nctr, 2), dtype=">u8")
        ctrs[..., 0] = hi2
        ctrs[..., 1] = lo2
        enc = Cipher(self._aes, modes.ECB()).encryptor()
        ks = enc.update(ctrs.tobytes()) + enc.finalize()
        return np.frombuffer(ks, dtype=np.uint8).reshape(n, length)

    def _test_keystream(self, ivs: np.ndarray, length: int) -> np.ndarray:
        out = np.empty((ivs.shape[0], length), dtype=np.uint8)
        for row, iv in enumerate(ivs):
            out[row] = np.frombuffer(
                hashlib.shake_128(self.key + iv.tobytes()).digest(length), np.uint8)
        return out

    # batch interface -----------------------------------------------------

    def encrypt_many(self, plain: np.ndarray, ivs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Encrypt rows of ``plain`` (n, L) under IV rows (n, >=iv_size).

        Returns ``(bodies, slots)`` with slots of shape (n, slot_size).
        """
        n, length = plain.shape
        slots = np.zeros((n, self.slot_size), dtype=np.uint8)
        slots[:, :self.iv_size] = ivs[:, :self.iv_size]
        if n == 0:
            return plain.copy(), slots
        if self.profile == "gcm":
            bodies = np.empty_like(plain)
            for row in range(n):
                ct = self._gcm.encrypt(ivs[row, :12].tobytes(), plain[row].tobytes(), None)
                bodies[row] = np.frombuffer(ct[:-_TAG], np.uint8)
                slots[row, 12:12 + _TAG] = np.frombuffer(ct[-_TAG:], np.uint8)
            return bodies, slots
        if self.profile == "ctr":
            ks = self._ctr_keystream(slots[:, :16], length)
        else:
            ks = self._test_keystream(slots[:, :16], length)
        return np.bitwise_xor(plain, ks), slots

    def decrypt_many(self, bodies: np.ndarray, slots: np.ndarray) -> np.ndarray:
        n, length = bodies.shape
        blank = ~slots.any(axis=1)
        if self.profile == "gcm":
            out = np.zeros_like(bodies)
            for row in range(n):
                if blank[row]:
                    continue
                nonce = slots[row, :12].tobytes()
                tag = slots[row, 12:12 + _TAG].tobytes()
                try:
                    pt = self._gcm.decrypt(nonce, bodies[row].tobytes() + tag, None)
                except InvalidTag as exc:
                    raise IntegrityError("block failed authentication") from exc
                out[row] = np.frombuffer(pt, np.uint8)
            return out
        if self.profile == "ctr":
            out = np.bitwise_xor(bodies, self._ctr_keystream(slots[:, :16], length))
        else:
            out = np.bitwise_xor(bodies, self._test_keystream(slots[:, :16], length))
        if blank.any():
            out[blank] = 0
        return out

    # single-block interface ----------------------------------------------

    def encrypt(self, plaintext: bytes, iv: bytes) -> BlockCiphertext:
        ivs = np.frombuffer(iv.ljust(16, b"\0"), np.uint8)[None, :]
        body, slot = self.encrypt_many(np.frombuffer(plaintext, np.uint8)[None, :], ivs)
        slot = slot[0].tobytes()
        tag = slot[12:12 + _TAG] if self.profile == "gcm" else b""
        return BlockCiphertext(body[0].tobytes(), slot[:self.iv_size], tag)

    def decrypt(self, ct: BlockCiphertext) -> bytes:
        slot = np.zeros((1, self.slot_size), np.uint8)
        slot[0, :self.iv_size] = np.frombuffer(ct.iv, np.uint8)
        if ct.tag:
            slot[0, 12:12 + _TAG] = np.frombuffer(ct.tag, np.uint8)
        return self.decrypt_many(np.frombuffer(ct.body, np.uint8)[None, :], slot)[0].tobytes()

    # self-contained metadata blocks ----------------------------------------

    def seal(self, payload: bytes, iv: np.ndarray, block_size: int) -> bytes:
        """Encrypt ``payload`` into a block that carries its own slot."""
        room = block_size - self.slot_size
        if len(payload) > room:
            raise SizeError(f"payload of {len(payload)} bytes exceeds {room}")
        plain = np.zeros((1, room), np.uint8)
        plain[0, :len(payload)] = np.frombuffer(payload, np.uint8)
        body, slot = self.encrypt_many(plain, iv.reshape(1, -1))
        return slot[0].tobytes() + body[0].tobytes()

    def unseal(self, block: bytes) -> bytes:
        raw = np.frombuffer(block, np.uint8)
        slot = raw[:self.slot_size][None, :]
        body = raw[self.slot_size:][None, :]
        return self.decrypt_many(body, slot)[0].tobytes()


class IvSource:
    """Counter-mode IV generator: IV_n = AES_k(n).

    Outputs are unique under one key and pseudorandom without it.  The
    counter is persisted so a reopened device continues the same sequence.
    """

    def __init__(self, iv_key: bytes, counter: int = 0):
        self._aes = algorithms.AES(iv_key)
        self.counter = counter

    def take(self, n: int) -> np.ndarray:
        ctrs = np.zeros((n, 2), dtype=">u8")
        ctrs[:, 1] = np.arange(self.counter, self.counter + n, dtype=np.uint64)
        self.counter += n
        enc = Cipher(self._aes, modes.ECB()).encryptor()
        out = enc.update(ctrs.tobytes()) + enc.finalize()
        return np.frombuffer(out, np.uint8).reshape(n, 16).copy()


def random_ivs(n: int) -> np.ndarray:
    return np.frombuffer(os.urandom(16 * n), np.uint8).reshape(n, 16).copy()


# module-level helpers ------------------------------------------------------

def encrypt_block(key: bytes, plaintext: bytes, profile: str = "ctr",
                  block_size: int | None = None) -> BlockCiphertext:
    if block_size is not None and len(plaintext) != block_size:
        raise SizeError(f"expected {block_size} bytes, got {len(plaintext)}")
    if len(plaintext) == 0 or len(plaintext) % 16:
        raise SizeError("plaintext must be a non-empty multiple of 16 bytes")
    return BlockCipher(key, profile).encrypt(plaintext, random_ivs(1)[0].tobytes())


def decrypt_block(key: bytes, ct: BlockCiphertext, profile: str = "ctr") -> bytes:
    return BlockCipher(key, profile).decrypt(ct)


def reencrypt_block(key: bytes, ct: BlockCiphertext, profile: str = "ctr") -> BlockCiphertext:
    cipher = BlockCipher(key, profile)
    plain = cipher.decrypt(ct)
    while True:
        out = cipher.encrypt(plain, random_ivs(1)[0].tobytes())
        if out.iv != ct.iv:
            return out

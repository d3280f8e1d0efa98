"""Create and open devices, picking the construction from the header."""
from __future__ import annotations

import os
from pathlib import Path

from .blockstore import BlockStore
from .errors import StorageError, UsageError
from .oram_amortized import AmortizedOram
from .oram_deamortized import DeamortizedOram
from .params import Layout, OramParams
from .superblock import MAGIC, unpack_header

CLASSES = {"amortized": AmortizedOram, "deamortized": DeamortizedOram}


def create_device(params: OramParams, key: bytes, path=None, seed=None, force: bool = False):
    """Format a new device, in memory when ``path`` is None."""
    cls = CLASSES[params.mode]
    if path is None:
        return cls.create(params, key, seed=seed)
    path = Path(path)
    if path.exists() and path.stat().st_size and not force:
        with open(path, "rb") as fh:
            head = fh.read(4)
        if head != MAGIC:
            raise UsageError(f"{path} exists and is not a SeqORAM device; use --force")
        raise UsageError(f"{path} is already a SeqORAM device; use --force to reformat")
    if force:
        path.unlink(missing_ok=True)
        Path(str(path) + ".queue").unlink(missing_ok=True)
    layout = Layout(params)
    store = BlockStore.file(path, params.block_size, layout.block_count, create=True)
    return cls.create(params, key, store=store, seed=seed, path=str(path))


def open_device(path, key: bytes):
    path = Path(path)
    if not path.exists():
        raise StorageError(f"{path} does not exist")
    with open(path, "rb") as fh:
        first = fh.read(512)
    params = unpack_header(first.ljust(512, b"\0")).params
    layout = Layout(params)
    size = os.path.getsize(path)
    if size < layout.block_count * params.block_size:
        raise StorageError(f"{path} is truncated")
    store = BlockStore.file(path, params.block_size, layout.block_count)
    return CLASSES[params.mode].load(store, key, path=str(path))


def load_memory(store: BlockStore, key: bytes):
    """Reopen a device held in a memory store."""
    params = unpack_header(store.backend.image()[:512]).params
    return CLASSES[params.mode].load(store, key)

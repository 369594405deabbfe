"""Versioned binary checkpoints for parameter stores.

Layout (all integers little-endian):

    offset 0   magic        4 bytes   b"TGCK"
    offset 4   version      u32       currently 1
    offset 8   header_len   u32
    offset 12  header       UTF-8 JSON, sorted keys; carries at least
                            "config_hash" and "epoch"
    ...        param_count  u32
    per parameter, in store order:
        name_len   u16
        name       UTF-8
        trainable  u8 (0 or 1)
        ndim       u8
        dims       u32 x ndim
        data       f64 little-endian, row-major

Writes go to a sibling temp file and are promoted with an atomic rename.
"""

from __future__ import annotations

import hashlib
import json
import struct
from typing import Any

import numpy as np

from tsgrade.autodiff import ParamStore
from tsgrade.binio import FormatError, Reader, atomic_write

MAGIC = b"TGCK"
VERSION = 1


class CheckpointError(FormatError):
    """Malformed or incompatible checkpoint file."""


def config_hash(config: Any) -> str:
    """Stable short hash of any JSON-serializable configuration."""
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_checkpoint(path, store: ParamStore, cfg_hash: str, epoch: int,
                    extra: dict | None = None) -> None:
    header = {"config_hash": cfg_hash, "epoch": int(epoch)}
    if extra:
        header.update(extra)
    hblob = json.dumps(header, sort_keys=True).encode()

    chunks = [MAGIC, struct.pack("<II", VERSION, len(hblob)), hblob,
              struct.pack("<I", len(store))]
    for name, tensor in store.items():
        nblob = name.encode()
        arr = np.asarray(tensor.data, dtype="<f8", order="C")  # keeps 0-d shape
        chunks.append(struct.pack("<H", len(nblob)))
        chunks.append(nblob)
        chunks.append(struct.pack("<BB", int(store.is_trainable(name)), arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    atomic_write(path, b"".join(chunks))


def load_checkpoint(path):
    """Read a checkpoint; returns (arrays, trainable flags, header dict)."""
    try:
        return _parse(path)
    except CheckpointError:
        raise
    except FormatError as err:
        raise CheckpointError(str(err)) from None


def _parse(path):
    with open(path, "rb") as fh:
        rd = Reader(fh.read(), str(path))
    if rd.take(4, "magic") != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    version, hlen = rd.unpack("<II", "version and header length")
    if version != VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {version} (expected {VERSION})"
        )
    try:
        header = json.loads(rd.take(hlen, "header"))
    except json.JSONDecodeError as err:
        raise CheckpointError(f"{path}: corrupt header JSON: {err}") from None
    (count,) = rd.unpack("<I", "parameter count")
    arrays: dict[str, np.ndarray] = {}
    trainable: dict[str, bool] = {}
    for _ in range(count):
        (nlen,) = rd.unpack("<H", "name length")
        name = rd.take(nlen, "name").decode()
        flag, ndim = rd.unpack("<BB", "flags")
        dims = rd.unpack(f"<{ndim}I", "dims") if ndim else ()
        size = int(np.prod(dims)) if dims else 1
        data = np.frombuffer(rd.take(8 * size, f"data of {name!r}"), dtype="<f8")
        arrays[name] = data.reshape(dims).astype(np.float64)
        trainable[name] = bool(flag)
    rd.expect_end()
    return arrays, trainable, header


def restore_into(store: ParamStore, path, expect_hash: str | None = None) -> dict:
    """Load a checkpoint into an existing store; shapes must match."""
    arrays, trainable, header = load_checkpoint(path)
    if expect_hash is not None and header.get("config_hash") != expect_hash:
        raise CheckpointError(
            f"{path}: config hash {header.get('config_hash')!r} does not match "
            f"expected {expect_hash!r}"
        )
    store.load_arrays(arrays)
    for name, flag in trainable.items():
        if store.is_trainable(name) != flag:
            store.set_trainable(name, flag)
    return header

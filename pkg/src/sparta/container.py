"""Binary container shared by feature caches, vector stores, GMMs and checkpoints.

Layout (all integers little-endian)::

    b"SPRT"  u32 version=1  u32 entry_count
    per entry:
        u16 id_length, UTF-8 id bytes, u8 kind,
        u32 rows, u32 cols, rows*cols float32 (row-major)

Kind codes: 0 MEL, 1 MFCC, 2 fixed vector, 3 GMM blob, 4 parameter tensor.
"""

from __future__ import annotations

import io
import os
import struct
from collections.abc import Mapping
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"SPRT"
VERSION = 1

KIND_MEL = 0
KIND_MFCC = 1
KIND_VECTOR = 2
KIND_GMM = 3
KIND_PARAM = 4
KIND_CODES = (KIND_MEL, KIND_MFCC, KIND_VECTOR, KIND_GMM, KIND_PARAM)

_HEADER = struct.Struct("<4sII")
_ENTRY_HEAD = struct.Struct("<BII")
_U16 = struct.Struct("<H")


def encode(entries: Mapping[str, tuple[int, np.ndarray]]) -> bytes:
    """Serialize ``{id: (kind, 2-D array)}`` into container bytes."""
    buf = io.BytesIO()
    buf.write(_HEADER.pack(MAGIC, VERSION, len(entries)))
    for key, (kind, values) in entries.items():
        if kind not in KIND_CODES:
            raise FormatError(f"unknown kind code {kind} for entry {key!r}")
        arr = np.asarray(values)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise FormatError(f"entry {key!r} must be 1-D or 2-D, got shape {arr.shape}")
        raw_id = key.encode("utf-8")
        if len(raw_id) > 0xFFFF:
            raise FormatError(f"id too long: {key[:40]!r}...")
        buf.write(_U16.pack(len(raw_id)))
        buf.write(raw_id)
        rows, cols = arr.shape
        buf.write(_ENTRY_HEAD.pack(kind, rows, cols))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return buf.getvalue()


def decode(data: bytes) -> dict[str, tuple[int, np.ndarray]]:
    """Parse container bytes; raises :class:`FormatError` on any inconsistency."""
    view = memoryview(data)
    if len(view) < _HEADER.size:
        raise FormatError("truncated header")
    magic, version, count = _HEADER.unpack_from(view, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {bytes(magic)!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    pos = _HEADER.size
    out: dict[str, tuple[int, np.ndarray]] = {}
    for index in range(count):
        if pos + _U16.size > len(view):
            raise FormatError(f"truncated file at entry {index}")
        (id_len,) = _U16.unpack_from(view, pos)
        pos += _U16.size
        if pos + id_len + _ENTRY_HEAD.size > len(view):
            raise FormatError(f"truncated file at entry {index}")
        try:
            key = bytes(view[pos:pos + id_len]).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"entry {index}: id is not valid UTF-8") from exc
        pos += id_len
        kind, rows, cols = _ENTRY_HEAD.unpack_from(view, pos)
        pos += _ENTRY_HEAD.size
        if kind not in KIND_CODES:
            raise FormatError(f"entry {key!r}: unknown kind code {kind}")
        nbytes = rows * cols * 4
        if pos + nbytes > len(view):
            raise FormatError(f"truncated file in payload of entry {key!r}")
        values = np.frombuffer(view[pos:pos + nbytes], dtype="<f4").reshape(rows, cols).copy()
        pos += nbytes
        if key in out:
            raise FormatError(f"duplicate entry id {key!r}")
        out[key] = (kind, values)
    if pos != len(view):
        raise FormatError(f"{len(view) - pos} trailing bytes after last entry")
    return out


def write(path: str | os.PathLike, entries: Mapping[str, tuple[int, np.ndarray]]) -> None:
    Path(path).write_bytes(encode(entries))


def read(path: str | os.PathLike) -> dict[str, tuple[int, np.ndarray]]:
    return decode(Path(path).read_bytes())

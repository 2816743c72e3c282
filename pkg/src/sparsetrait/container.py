"""Little-endian binary container helpers shared by the artifact formats.

Every artifact is ``magic (4 bytes) | u32 version | ...payload...``; most end
with a ``u32 length | UTF-8 JSON`` meta trailer.  JSON is written with sorted
keys and no whitespace variation so identical inputs give identical bytes.
"""
from __future__ import annotations

import io
import json
import struct
from typing import Any, BinaryIO

import numpy as np


class ContainerError(ValueError):
    """Raised when an artifact file is truncated or carries the wrong magic."""


def dump_meta(meta: dict[str, Any]) -> bytes:
    text = json.dumps(meta, sort_keys=True, separators=(",", ":"), allow_nan=True)
    raw = text.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def write_header(buf: BinaryIO, magic: bytes, version: int) -> None:
    assert len(magic) == 4
    buf.write(magic)
    buf.write(struct.pack("<I", version))


def write_u32(buf: BinaryIO, *values: int) -> None:
    buf.write(struct.pack("<" + "I" * len(values), *values))


def write_f64(buf: BinaryIO, *values: float) -> None:
    buf.write(struct.pack("<" + "d" * len(values), *values))


def write_array(buf: BinaryIO, arr: np.ndarray, order: str = "C") -> None:
    buf.write(np.asarray(arr, dtype="<f8").tobytes(order=order))


class Reader:
    """Sequential reader over an in-memory artifact."""

    def __init__(self, data: bytes, magic: bytes, what: str = "artifact"):
        self._buf = io.BytesIO(data)
        self.what = what
        got = self._take(4)
        if got != magic:
            raise ContainerError(f"{what}: bad magic {got!r}, expected {magic!r}")
        self.version = self.u32()

    def _take(self, n: int) -> bytes:
        raw = self._buf.read(n)
        if len(raw) != n:
            raise ContainerError(f"{self.what}: truncated file")
        return raw

    def raw(self, n: int) -> bytes:
        return self._take(n)

    def u32(self) -> int:
        return struct.unpack("<I", self._take(4))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self._take(8))[0]

    def array(self, count: int) -> np.ndarray:
        raw = self._take(8 * count)
        return np.frombuffer(raw, dtype="<f8").astype(np.float64)

    def meta(self, optional: bool = False) -> dict[str, Any]:
        if optional and self.at_end():
            return {}
        n = self.u32()
        return json.loads(self._take(n).decode("utf-8"))

    def at_end(self) -> bool:
        pos = self._buf.tell()
        more = self._buf.read(1)
        self._buf.seek(pos)
        return not more

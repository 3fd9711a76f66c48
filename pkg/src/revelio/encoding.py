"""Length-prefixed binary encoding shared by every serialized structure.

All multi-byte integers are big-endian. Variable-length fields are
u32-length-prefixed. These conventions are load-bearing: launch
measurements, report signatures and image roots are all computed over
bytes produced here, so any change invalidates recorded measurements.
"""

from __future__ import annotations

import struct


class EncodingError(ValueError):
    """Malformed or truncated serialized data."""


def u16(value: int) -> bytes:
    return struct.pack(">H", value)


def u32(value: int) -> bytes:
    return struct.pack(">I", value)


def u64(value: int) -> bytes:
    return struct.pack(">Q", value)


def pack_bytes(data: bytes) -> bytes:
    """u32 length prefix followed by the raw bytes."""
    return u32(len(data)) + data


def pack_str(text: str) -> bytes:
    return pack_bytes(text.encode("utf-8"))


class ByteReader:
    """Sequential reader with hard bounds checking."""

    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self._pos + n > len(self._data):
            raise EncodingError(f"truncated input: wanted {n} bytes at offset {self._pos}")
        out = self._data[self._pos : self._pos + n]
        self._pos += n
        return out

    def take_u16(self) -> int:
        return struct.unpack(">H", self.take(2))[0]

    def take_u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def take_u64(self) -> int:
        return struct.unpack(">Q", self.take(8))[0]

    def take_prefixed(self) -> bytes:
        return self.take(self.take_u32())

    def take_prefixed_str(self) -> str:
        try:
            return self.take_prefixed().decode("utf-8")
        except UnicodeDecodeError as e:
            raise EncodingError("field is not valid UTF-8") from e

    def remainder(self) -> bytes:
        out = self._data[self._pos :]
        self._pos = len(self._data)
        return out

    @property
    def exhausted(self) -> bool:
        return self._pos == len(self._data)

    def expect_end(self) -> None:
        if not self.exhausted:
            raise EncodingError(f"{len(self._data) - self._pos} trailing bytes")

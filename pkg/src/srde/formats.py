"""Binary file-format helpers shared by the tensor/dictionary/weights codecs.

All container formats follow the same scheme: an 8-byte ASCII magic, then
little-endian u32 header fields, then little-endian float32 payloads.
"""

from __future__ import annotations

import struct


class FormatError(ValueError):
    """Malformed or truncated file; carries the byte offset of the problem."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class Reader:
    """Cursor over a byte string that reports offsets on failure."""

    def __init__(self, data: bytes, name: str = "file"):
        self.data = data
        self.name = name
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(
                f"{self.name}: truncated while reading {what}", self.pos
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def expect_magic(self, magic: bytes) -> None:
        got = self.take(len(magic), "magic")
        if got != magic:
            raise FormatError(
                f"{self.name}: bad magic {got!r}, expected {magic!r}", 0
            )

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def f32(self, what: str) -> float:
        return struct.unpack("<f", self.take(4, what))[0]

    def f32_block(self, count: int, what: str) -> bytes:
        return self.take(4 * count, what)

    def expect_eof(self) -> None:
        if self.pos != len(self.data):
            raise FormatError(
                f"{self.name}: {len(self.data) - self.pos} trailing bytes", self.pos
            )


def pack_u32(*values: int) -> bytes:
    return struct.pack(f"<{len(values)}I", *values)

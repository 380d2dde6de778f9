"""PGM/PPM (P2/P3/P5/P6) image reading and writing.

Images load as single-channel luma tensors with values in [0, 1]; color
PPM input is converted with the ITU-R BT.601 weights. Only maxval 255 is
accepted. Parse failures raise FormatError naming the byte offset.
"""

from __future__ import annotations

import numpy as np

from .formats import FormatError
from .tensor import Tensor

_WHITESPACE = b" \t\r\n\v\f"


class _TokenScanner:
    """Whitespace/comment-aware token reader over raw PNM bytes."""

    def __init__(self, data: bytes, name: str):
        self.data = data
        self.name = name
        self.pos = 0
        self.last_offset = 0  # start of the most recent token

    def _skip_separators(self):
        while self.pos < len(self.data):
            b = self.data[self.pos : self.pos + 1]
            if b in (b"#",):
                nl = self.data.find(b"\n", self.pos)
                self.pos = len(self.data) if nl < 0 else nl + 1
            elif b in _WHITESPACE:
                self.pos += 1
            else:
                return

    def token(self, what: str) -> tuple[bytes, int]:
        self._skip_separators()
        if self.pos >= len(self.data):
            raise FormatError(f"{self.name}: missing {what}", self.pos)
        start = self.pos
        self.last_offset = start
        while self.pos < len(self.data) and self.data[self.pos : self.pos + 1] not in _WHITESPACE:
            if self.data[self.pos : self.pos + 1] == b"#":
                break
            self.pos += 1
        return self.data[start : self.pos], start

    def integer(self, what: str) -> int:
        tok, start = self.token(what)
        try:
            return int(tok)
        except ValueError:
            raise FormatError(
                f"{self.name}: malformed {what} {tok!r}", start
            ) from None

    def skip_single_separator(self):
        """Binary rasters start after exactly one whitespace byte."""
        if self.pos >= len(self.data):
            raise FormatError(f"{self.name}: missing pixel payload", self.pos)
        if self.data[self.pos : self.pos + 1] not in _WHITESPACE:
            raise FormatError(
                f"{self.name}: expected whitespace before payload", self.pos
            )
        self.pos += 1


def load_image(path) -> Tensor:
    """Read a PGM/PPM file into a (1, 1, h, w) luma tensor scaled to [0, 1]."""
    with open(path, "rb") as f:
        data = f.read()
    sc = _TokenScanner(data, str(path))
    magic, off = sc.token("magic")
    if magic not in (b"P2", b"P3", b"P5", b"P6"):
        raise FormatError(f"{path}: unsupported format {magic!r}", off)
    width = sc.integer("width")
    height = sc.integer("height")
    if width < 1 or height < 1:
        raise FormatError(f"{path}: bad dimensions {width}x{height}", off)
    maxval = sc.integer("maxval")
    if maxval != 255:
        raise FormatError(f"{path}: unsupported maxval {maxval}", sc.last_offset)

    channels = 3 if magic in (b"P3", b"P6") else 1
    count = width * height * channels
    if magic in (b"P5", b"P6"):
        sc.skip_single_separator()
        payload = data[sc.pos : sc.pos + count]
        if len(payload) < count:
            raise FormatError(
                f"{path}: truncated pixel payload, need {count} bytes",
                sc.pos + len(payload),
            )
        pixels = np.frombuffer(payload, dtype=np.uint8).astype(np.float64)
    else:
        pixels = np.empty(count, dtype=np.float64)
        for i in range(count):
            v = sc.integer(f"pixel {i}")
            if not 0 <= v <= maxval:
                raise FormatError(f"{path}: pixel value {v} out of range", sc.pos)
            pixels[i] = v

    if channels == 3:
        rgb = pixels.reshape(height, width, 3)
        # Integer-coefficient BT.601 so pure white maps to exactly 1.0.
        luma = (299.0 * rgb[:, :, 0] + 587.0 * rgb[:, :, 1] + 114.0 * rgb[:, :, 2]) / (
            1000.0 * 255.0
        )
    else:
        luma = pixels.reshape(height, width) / 255.0
    return Tensor(luma[None, None].astype(np.float32))


def save_image(t: Tensor, path) -> None:
    """Write a (1, 1, h, w) tensor as binary PGM (P5), clamped to [0, 1]."""
    if t.c != 1:
        raise ValueError(f"expected single-channel tensor, got c={t.c}")
    if t.n != 1:
        raise ValueError(f"expected single image, got n={t.n}")
    quantized = np.rint(np.clip(t.data[0, 0].astype(np.float64), 0.0, 1.0) * 255.0)
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (t.w, t.h))
        f.write(quantized.astype(np.uint8).tobytes())

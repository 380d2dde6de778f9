"""Dense 4-D float32 tensors and the geometric primitives of the SR pipeline.

Layout is always (n, c, h, w), row-major. Tensors are immutable after
construction (the backing array is marked read-only) and safe to share
across threads. Every op validates that its output is finite.

Numeric policy: ops compute internally in float64 with a fixed, ascending
accumulation order and round to float32 once at the end. This makes every
op deterministic and platform-independent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .formats import FormatError, Reader, pack_u32

TENSOR_MAGIC = b"SRTEN001"


@dataclass(frozen=True)
class Tensor:
    """Immutable (n, c, h, w) float32 array."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim != 4:
            raise ValueError(f"tensor must be 4-D (n,c,h,w), got shape {arr.shape}")
        if arr.size and not np.isfinite(arr).all():
            raise ValueError("tensor contains NaN or infinity")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def c(self) -> int:
        return self.data.shape[1]

    @property
    def h(self) -> int:
        return self.data.shape[2]

    @property
    def w(self) -> int:
        return self.data.shape[3]

    def __repr__(self):
        return f"Tensor(n={self.n}, c={self.c}, h={self.h}, w={self.w})"


@dataclass(frozen=True)
class ImageSpec:
    """Shape of a loaded image; inputs are single-channel luma."""

    height: int
    width: int
    channels: int = 1

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError("image dimensions must be >= 1")
        if self.channels != 1:
            raise ValueError("only single-channel (luma) images are supported")

    @classmethod
    def of(cls, t: Tensor) -> "ImageSpec":
        return cls(height=t.h, width=t.w, channels=t.c)


def _finish(arr64: np.ndarray) -> Tensor:
    return Tensor(arr64.astype(np.float32))


def bilinear_upsample(t: Tensor, s: int) -> Tensor:
    """Upscale by integer factor s with half-pixel-center bilinear sampling.

    Output pixel (i, j) reads source coordinate ((i+0.5)/s - 0.5,
    (j+0.5)/s - 0.5), clamped to the valid range, interpolated from the
    four nearest input pixels.
    """
    if s < 1:
        raise ValueError(f"scale must be >= 1, got {s}")
    if s == 1:
        return t
    src = t.data.astype(np.float64)
    h, w = t.h, t.w

    def axis_coords(size: int, limit: int):
        c = (np.arange(size, dtype=np.float64) + 0.5) / s - 0.5
        c = np.clip(c, 0.0, limit - 1)
        lo = np.floor(c).astype(np.int64)
        hi = np.minimum(lo + 1, limit - 1)
        frac = c - lo
        return lo, hi, frac

    y0, y1, fy = axis_coords(h * s, h)
    x0, x1, fx = axis_coords(w * s, w)
    fy = fy[:, None]
    fx = fx[None, :]
    out = (
        src[:, :, y0][:, :, :, x0] * (1 - fy) * (1 - fx)
        + src[:, :, y0][:, :, :, x1] * (1 - fy) * fx
        + src[:, :, y1][:, :, :, x0] * fy * (1 - fx)
        + src[:, :, y1][:, :, :, x1] * fy * fx
    )
    return _finish(out)


def extract_patches(hr: Tensor, k: int) -> Tensor:
    """Flatten the k x k neighborhood of every pixel into k^2 channels.

    Channel j of output pixel p is the j-th tap (row-major over the window
    centered at p) with replicate padding at the borders.
    """
    if k % 2 == 0:
        raise ValueError(f"tap count must be odd, got {k}")
    if hr.c != 1:
        raise ValueError(f"expected single-channel input, got c={hr.c}")
    r = k // 2
    h, w = hr.h, hr.w
    padded = np.pad(hr.data, ((0, 0), (0, 0), (r, r), (r, r)), mode="edge")
    out = np.empty((hr.n, k * k, h, w), dtype=np.float32)
    for dy in range(k):
        for dx in range(k):
            out[:, dy * k + dx] = padded[:, 0, dy : dy + h, dx : dx + w]
    return Tensor(out)


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Isotropic 2-D Gaussian truncated at radius ceil(3*sigma), sum 1."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    r = int(np.ceil(3.0 * sigma))
    d = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-(d[:, None] ** 2 + d[None, :] ** 2) / (2.0 * sigma * sigma))
    return g / g.sum()


def degrade(y: Tensor, s: int, sigma: float) -> Tensor:
    """Blur with a normalized Gaussian then decimate by stride s.

    Decimation samples pixel (s*i + s//2, s*j + s//2); spatial dims must be
    divisible by s.
    """
    if y.h % s or y.w % s:
        raise ValueError(
            f"spatial dims ({y.h}x{y.w}) must be divisible by scale {s}"
        )
    kernel = gaussian_kernel(sigma)
    r = kernel.shape[0] // 2
    h, w = y.h, y.w
    padded = np.pad(
        y.data.astype(np.float64), ((0, 0), (0, 0), (r, r), (r, r)), mode="edge"
    )
    blurred = np.zeros((y.n, y.c, h, w), dtype=np.float64)
    for dy in range(kernel.shape[0]):
        for dx in range(kernel.shape[1]):
            blurred += kernel[dy, dx] * padded[:, :, dy : dy + h, dx : dx + w]
    off = s // 2
    return _finish(blurred[:, :, off::s, off::s])


def conv2d(
    t: Tensor,
    weights: Tensor,
    bias: np.ndarray | list[float],
    activation: str = "none",
) -> Tensor:
    """Direct same-padding (replicate) convolution with optional ReLU.

    `weights` has layout (out_c, in_c, kh, kw). Accumulation is float64 in
    ascending (in_c, tap) order, so results are bit-reproducible.
    """
    if activation not in ("none", "relu"):
        raise ValueError(f"unknown activation {activation!r}")
    out_c, in_c, kh, kw = weights.data.shape
    if in_c != t.c:
        raise ValueError(f"weight in_c={in_c} does not match input c={t.c}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("kernel dims must be odd for same padding")
    bias = np.asarray(bias, dtype=np.float64)
    if bias.shape != (out_c,):
        raise ValueError(f"bias must have length {out_c}, got shape {bias.shape}")
    ry, rx = kh // 2, kw // 2
    h, w = t.h, t.w
    padded = np.pad(
        t.data.astype(np.float64), ((0, 0), (0, 0), (ry, ry), (rx, rx)), mode="edge"
    )
    w64 = weights.data.astype(np.float64)
    out = np.empty((t.n, out_c, h, w), dtype=np.float64)
    # Chunk output channels to bound the float64 working set.
    chunk = max(1, min(out_c, (1 << 22) // max(1, t.n * h * w)))
    for o0 in range(0, out_c, chunk):
        o1 = min(o0 + chunk, out_c)
        acc = np.zeros((o1 - o0, t.n, h, w), dtype=np.float64)
        for i in range(in_c):
            for dy in range(kh):
                for dx in range(kw):
                    acc += (
                        w64[o0:o1, i, dy, dx][:, None, None, None]
                        * padded[None, :, i, dy : dy + h, dx : dx + w]
                    )
        out[:, o0:o1] = (acc + bias[o0:o1, None, None, None]).transpose(1, 0, 2, 3)
    if activation == "relu":
        np.maximum(out, 0.0, out=out)
    return _finish(out)


def pixel_shuffle(t: Tensor, s: int) -> Tensor:
    """Rearrange channel groups of size s^2 into s x s spatial blocks.

    output(c', i*s + a, j*s + b) = input(c'*s^2 + a*s + b, i, j).
    """
    if s < 1:
        raise ValueError(f"scale must be >= 1, got {s}")
    if t.c % (s * s):
        raise ValueError(f"channel count {t.c} not divisible by s^2={s * s}")
    c_out = t.c // (s * s)
    x = t.data.reshape(t.n, c_out, s, s, t.h, t.w)
    x = x.transpose(0, 1, 4, 2, 5, 3)
    return Tensor(x.reshape(t.n, c_out, t.h * s, t.w * s))


def save_tensor(t: Tensor, path) -> None:
    """Write the SRTEN001 dump: magic, u32 dims (n,c,h,w), f32 payload."""
    with open(path, "wb") as f:
        f.write(TENSOR_MAGIC)
        f.write(pack_u32(t.n, t.c, t.h, t.w))
        f.write(t.data.astype("<f4").tobytes())


def load_tensor(path) -> Tensor:
    with open(path, "rb") as f:
        r = Reader(f.read(), name=str(path))
    r.expect_magic(TENSOR_MAGIC)
    dims = [r.u32(d) for d in ("n", "c", "h", "w")]
    count = int(np.prod(dims))
    payload = r.f32_block(count, "tensor payload")
    r.expect_eof()
    arr = np.frombuffer(payload, dtype="<f4").reshape(dims)
    if not np.isfinite(arr).all():
        raise FormatError(f"{path}: non-finite values in payload")
    return Tensor(arr.copy())

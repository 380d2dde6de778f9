"""Gaussian / difference-of-Gaussians filter bank and per-pixel filtering.

The bank ("dictionary") is a fixed set of L filters of k x k taps. Each
output pixel's reconstruction filter is a linear combination of these
rows, weighted by per-pixel coefficients; applying the combined filter to
the patch matrix yields the reconstructed image.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .formats import FormatError, Reader, pack_u32
from .tensor import Tensor

DICT_MAGIC = b"SRDICT01"

KIND_GAUSSIAN = 0
KIND_DOG = 1

# Default bank parameters; ratio-1 rows are deduplicated across theta, so
# the resulting L is reported by the builder rather than assumed.
DEFAULT_K = 5
DEFAULT_SIGMAS = (0.35, 0.7, 1.05, 1.4)
DEFAULT_THETAS = (0.0, math.pi / 4, math.pi / 2, 3 * math.pi / 4)
DEFAULT_RATIOS = (1.0, 2.0, 3.0)
DEFAULT_DOG_PAIRS = (
    (0.4, 0.8),
    (0.6, 1.2),
    (0.8, 1.6),
    (1.0, 2.0),
    (1.2, 2.4),
    (1.5, 3.0),
)


@dataclass(frozen=True)
class FilterInfo:
    """Provenance of one bank row."""

    kind: int  # KIND_GAUSSIAN or KIND_DOG
    sigma_x: float
    sigma_y: float
    theta: float
    sigma2: float = 0.0  # outer sigma, DoG rows only


@dataclass(frozen=True)
class Dictionary:
    """L filters of k^2 taps each, stored as float32 rows (row-major taps)."""

    k: int
    rows: np.ndarray  # (L, k^2) float32
    provenance: tuple[FilterInfo, ...]

    def __post_init__(self):
        rows = np.ascontiguousarray(self.rows, dtype=np.float32)
        if self.k < 1 or self.k % 2 == 0:
            raise ValueError(f"tap width must be odd and positive, got {self.k}")
        if rows.ndim != 2 or rows.shape[1] != self.k * self.k:
            raise ValueError(
                f"rows must be (L, {self.k * self.k}), got {rows.shape}"
            )
        if rows.shape[0] < 1:
            raise ValueError("dictionary must contain at least one filter")
        if len(self.provenance) != rows.shape[0]:
            raise ValueError("provenance length must match filter count")
        if not np.isfinite(rows).all():
            raise ValueError("dictionary rows contain non-finite values")
        sums = rows.astype(np.float64).sum(axis=1)
        for i, info in enumerate(self.provenance):
            target = 1.0 if info.kind == KIND_GAUSSIAN else 0.0
            if abs(sums[i] - target) > 1e-6:
                raise ValueError(
                    f"filter {i} sums to {sums[i]:.3g}, expected {target}"
                )
        rows.flags.writeable = False
        object.__setattr__(self, "rows", rows)

    @property
    def L(self) -> int:
        return self.rows.shape[0]

    def select(self, keep) -> "Dictionary":
        """New bank holding only the given rows, in the given order."""
        keep = list(keep)
        if not keep:
            raise ValueError("cannot select an empty dictionary")
        return Dictionary(
            k=self.k,
            rows=self.rows[keep].copy(),
            provenance=tuple(self.provenance[i] for i in keep),
        )


def _anisotropic_gaussian(k: int, sigma_x: float, sigma_y: float, theta: float) -> np.ndarray:
    r = k // 2
    d = np.arange(-r, r + 1, dtype=np.float64)
    dx = d[None, :]
    dy = d[:, None]
    u = math.cos(theta) * dx + math.sin(theta) * dy
    v = -math.sin(theta) * dx + math.cos(theta) * dy
    g = np.exp(-(u * u) / (2.0 * sigma_x**2) - (v * v) / (2.0 * sigma_y**2))
    return (g / g.sum()).reshape(-1)


def build_dictionary(
    k: int = DEFAULT_K,
    sigmas=DEFAULT_SIGMAS,
    thetas=DEFAULT_THETAS,
    ratios=DEFAULT_RATIOS,
    dog_pairs=DEFAULT_DOG_PAIRS,
) -> Dictionary:
    """Build the filter bank over a (sigma, theta, ratio) grid plus DoG pairs.

    Each anisotropic Gaussian has axes (sigma*ratio, sigma/ratio) rotated by
    theta and is normalized to sum 1. A ratio of 1 gives an isotropic filter
    identical for every theta, so those rows are emitted once per sigma.
    Each DoG row is the difference of two individually normalized isotropic
    Gaussians, hence sums to 0.
    """
    if k < 1 or k % 2 == 0:
        raise ValueError(f"tap width must be odd and positive, got {k}")
    sigmas, thetas, ratios = list(sigmas), list(thetas), list(ratios)
    dog_pairs = [tuple(p) for p in dog_pairs]
    if not sigmas or not thetas or not ratios:
        raise ValueError("sigmas, thetas and ratios must be non-empty")
    if any(s <= 0 for s in sigmas):
        raise ValueError("sigmas must be positive")
    if any(r <= 0 for r in ratios):
        raise ValueError("ratios must be positive")
    for s1, s2 in dog_pairs:
        if not 0 < s1 < s2:
            raise ValueError(f"DoG pair ({s1}, {s2}) must satisfy 0 < s1 < s2")

    rows = []
    provenance = []
    for sigma in sigmas:
        emitted_isotropic = False
        for theta in thetas:
            for ratio in ratios:
                if ratio == 1.0:
                    if emitted_isotropic:
                        continue
                    emitted_isotropic = True
                rows.append(
                    _anisotropic_gaussian(k, sigma * ratio, sigma / ratio, theta)
                )
                provenance.append(
                    FilterInfo(KIND_GAUSSIAN, sigma * ratio, sigma / ratio, theta)
                )
    for s1, s2 in dog_pairs:
        g1 = _anisotropic_gaussian(k, s1, s1, 0.0)
        g2 = _anisotropic_gaussian(k, s2, s2, 0.0)
        rows.append(g1 - g2)
        provenance.append(FilterInfo(KIND_DOG, s1, s1, 0.0, sigma2=s2))

    return Dictionary(
        k=k,
        rows=np.asarray(rows, dtype=np.float32),
        provenance=tuple(provenance),
    )


def assemble_filters(phi: Tensor, bank: Dictionary) -> Tensor:
    """Per-pixel filter F[p, :] = sum_i phi[p, i] * rows[i, :].

    Accumulates in float64 over ascending row index, then rounds to float32.
    """
    if phi.c != bank.L:
        raise ValueError(
            f"coefficient channels ({phi.c}) do not match bank size ({bank.L})"
        )
    rows = bank.rows.astype(np.float64)
    phi64 = phi.data.astype(np.float64)
    out = np.zeros((phi.n, bank.k * bank.k, phi.h, phi.w), dtype=np.float64)
    for i in range(bank.L):
        out += phi64[:, i : i + 1] * rows[i][None, :, None, None]
    return Tensor(out.astype(np.float32))


def apply_filters(f: Tensor, b: Tensor) -> Tensor:
    """Sequential filtering reference: y[p] = sum_j F[p, j] * B[p, j].

    Products are exact in float64; the sum runs in ascending channel order
    and is rounded to float32 once. This is the bit-exact ordering the
    parallel engine must reproduce.
    """
    if f.data.shape != b.data.shape:
        raise ValueError(f"shape mismatch: {f.data.shape} vs {b.data.shape}")
    prod = f.data.astype(np.float64) * b.data.astype(np.float64)
    out = prod.sum(axis=1, keepdims=True)
    return Tensor(out.astype(np.float32))


@dataclass(frozen=True)
class FootprintReport:
    """Element and byte counts moved per frame by each pipeline input."""

    phi_elems: int
    patch_elems: int
    dict_elems: int

    def __post_init__(self):
        if min(self.phi_elems, self.patch_elems, self.dict_elems) <= 0:
            raise ValueError("all element counts must be positive")

    @property
    def phi_bytes(self) -> int:
        return 4 * self.phi_elems

    @property
    def patch_bytes(self) -> int:
        return 4 * self.patch_elems

    @property
    def dict_bytes(self) -> int:
        return 4 * self.dict_elems

    @property
    def dominance_ratio(self) -> float:
        return (self.phi_elems + self.patch_elems) / self.dict_elems


def communication_footprint(h: int, w: int, s: int, L: int, k: int) -> FootprintReport:
    """Per-frame traffic of coefficients and patches versus the static bank."""
    if min(h, w, s, L, k) <= 0:
        raise ValueError("all arguments must be positive")
    hr_pixels = h * w * s * s
    return FootprintReport(
        phi_elems=hr_pixels * L,
        patch_elems=hr_pixels * k * k,
        dict_elems=L * k * k,
    )


def save_dictionary(bank: Dictionary, path) -> None:
    """Write the SRDICT01 container: magic, u32 L and k, rows, provenance."""
    with open(path, "wb") as f:
        f.write(DICT_MAGIC)
        f.write(pack_u32(bank.L, bank.k))
        f.write(bank.rows.astype("<f4").tobytes())
        for info in bank.provenance:
            f.write(bytes([info.kind]))
            f.write(
                np.asarray(
                    [info.sigma_x, info.sigma_y, info.theta, info.sigma2],
                    dtype="<f4",
                ).tobytes()
            )


def load_dictionary(path) -> Dictionary:
    with open(path, "rb") as f:
        r = Reader(f.read(), name=str(path))
    r.expect_magic(DICT_MAGIC)
    L = r.u32("filter count")
    k = r.u32("tap width")
    if L < 1 or k < 1 or k % 2 == 0:
        raise FormatError(f"{path}: invalid header (L={L}, k={k})", 8)
    payload = r.f32_block(L * k * k, "filter rows")
    rows = np.frombuffer(payload, dtype="<f4").reshape(L, k * k).copy()
    provenance = []
    for i in range(L):
        kind = r.u8(f"provenance kind {i}")
        if kind not in (KIND_GAUSSIAN, KIND_DOG):
            raise FormatError(f"{path}: unknown filter kind {kind}", r.pos - 1)
        vals = [r.f32(f"provenance field {i}.{j}") for j in range(4)]
        provenance.append(FilterInfo(kind, *vals))
    r.expect_eof()
    return Dictionary(k=k, rows=rows, provenance=tuple(provenance))

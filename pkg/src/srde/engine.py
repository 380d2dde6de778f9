"""Block-tiled parallel filtering engine with bit-exact reduction.

The (H', W', C) product volume is split into block-tasks of extent
(nx, ny, nz). Each block-task owns a disjoint tile of one z-slice and
writes a partial-sum plane nobody else touches; finished partial planes
are reduced in ascending z-block order on one thread. Output values
therefore never depend on the worker count or completion order, and match
the sequential filtering reference bit for bit.

For dispatch efficiency the emulation fuses the block-tasks that share an
(x, y) tile into one pool job and batches consecutive tiles per worker;
this is scheduling only and leaves the write pattern, the accumulation
order, and every output bit unchanged.
"""

from __future__ import annotations

import os
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor


@dataclass(frozen=True)
class HardwareSpec:
    """Abstract machine model: multiprocessors, their scheduler partitions,
    per-partition register capacity (32-bit elements), SIMT group width,
    and the active-group ceiling per partition."""

    S: int = 6
    P: int = 4
    R: int = 16384
    WS: int = 32
    T_sm: int = 4
    workers: int | None = None

    def __post_init__(self):
        if min(self.S, self.P, self.R, self.WS, self.T_sm) < 1:
            raise ValueError("all hardware parameters must be >= 1")
        if self.workers is not None and self.workers < 1:
            raise ValueError("workers must be >= 1")

    def resolve_workers(self) -> int:
        if self.workers is not None:
            return self.workers
        return max(1, min(self.S * self.P, os.cpu_count() or 1))


@dataclass(frozen=True, order=True)
class BlockConfig:
    nx: int
    ny: int
    nz: int

    def __post_init__(self):
        if min(self.nx, self.ny, self.nz) < 1:
            raise ValueError("tile extents must be >= 1")

    @property
    def threads(self) -> int:
        return self.nx * self.ny * self.nz


def _tiles(extent: int, step: int):
    return [(lo, min(lo + step, extent)) for lo in range(0, extent, step)]


def run_filtering(
    f: Tensor,
    b: Tensor,
    cfg: BlockConfig,
    spec: HardwareSpec,
    override: bool = False,
    write_counts: np.ndarray | None = None,
) -> Tensor:
    """Tiled evaluation of y[p] = sum_j F[p, j] * B[p, j].

    `cfg` must fit inside the data volume unless `override` is set (tiles
    are clamped either way). Feasibility against the hardware model is the
    caller's responsibility. `write_counts`, when given, must be a zeroed
    (z_blocks, H', W') int array; each task increments its own tile so
    tests can assert single-writer coverage.
    """
    if f.data.shape != b.data.shape:
        raise ValueError(f"shape mismatch: {f.data.shape} vs {b.data.shape}")
    h, w, c = f.h, f.w, f.c
    if not override and (cfg.nx > h or cfg.ny > w or cfg.nz > c):
        raise ValueError(
            f"config {cfg} exceeds data bounds ({h}, {w}, {c}); "
            "pass override=True to clamp"
        )
    z_tiles = _tiles(c, cfg.nz)
    partials = np.zeros((len(z_tiles), f.n, h, w), dtype=np.float64)
    if write_counts is not None and write_counts.shape != (len(z_tiles), h, w):
        raise ValueError(
            f"write_counts must have shape {(len(z_tiles), h, w)}"
        )
    fdata, bdata = f.data, b.data

    # Block-tasks sharing an (x, y) tile are fused into one column job and
    # consecutive columns are batched per submitted job: pure scheduling,
    # the per-element write pattern and accumulation order are unchanged.
    # Tiles widen to float64 inside the job so conversion parallelizes too.
    def run_columns(columns):
        for x0, x1, y0, y1 in columns:
            prod = fdata[:, :, x0:x1, y0:y1].astype(np.float64) * bdata[
                :, :, x0:x1, y0:y1
            ].astype(np.float64)
            for bz, (z0, z1) in enumerate(z_tiles):
                partials[bz, :, x0:x1, y0:y1] = prod[:, z0:z1].sum(axis=1)
                if write_counts is not None:
                    write_counts[bz, x0:x1, y0:y1] += 1

    columns = [
        (x0, x1, y0, y1)
        for (x0, x1) in _tiles(h, cfg.nx)
        for (y0, y1) in _tiles(w, cfg.ny)
    ]
    workers = spec.resolve_workers()
    if workers == 1:
        run_columns(columns)
    else:
        batch = max(1, -(-len(columns) // (workers * 4)))
        batches = [columns[i : i + batch] for i in range(0, len(columns), batch)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_columns, group) for group in batches]
            for fut in futures:
                fut.result()

    out = partials[0].copy()
    for bz in range(1, len(z_tiles)):
        out += partials[bz]
    return Tensor(out[:, None].astype(np.float32))


@dataclass(frozen=True)
class LatencyMeasurement:
    median_ms: float
    runs: list[float]
    config: BlockConfig

    def __post_init__(self):
        if abs(self.median_ms - statistics.median(self.runs)) > 1e-12:
            raise ValueError("median_ms must be the median of runs")


def measure_latency(
    f: Tensor,
    b: Tensor,
    cfg: BlockConfig,
    spec: HardwareSpec,
    repeats: int = 5,
    override: bool = False,
) -> LatencyMeasurement:
    """One warmup run, then `repeats` timed runs; reports the wall-clock median."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    run_filtering(f, b, cfg, spec, override=override)
    runs = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        run_filtering(f, b, cfg, spec, override=override)
        runs.append((time.perf_counter() - t0) * 1e3)
    return LatencyMeasurement(
        median_ms=statistics.median(runs), runs=runs, config=cfg
    )


def synthetic_cost(
    cfg: BlockConfig, dims: tuple[int, int, int], spec: HardwareSpec
) -> float:
    """Deterministic closed-form latency model for a block configuration.

    blocks = ceil(H'/nx) * ceil(W'/ny) * ceil(C/nz)
    waves  = ceil(blocks / (S*P))
    warps  = ceil(nx*ny*nz / WS)
    waste  = nx*ny*nz*blocks / (H'*W'*C)
    cost   = waves * warps * WS * waste + 0.05 * blocks

    The formula is normative so tests and tuners agree exactly.
    """
    h, w, c = dims
    if cfg.nx > h or cfg.ny > w or cfg.nz > c:
        raise ValueError(f"config {cfg} exceeds dims {dims}")
    blocks = -(-h // cfg.nx) * -(-w // cfg.ny) * -(-c // cfg.nz)
    waves = -(-blocks // (spec.S * spec.P))
    warps = -(-cfg.threads // spec.WS)
    waste = (cfg.threads * blocks) / (h * w * c)
    return waves * warps * spec.WS * waste + 0.05 * blocks


def write_latency_csv(measurements: list[LatencyMeasurement], path) -> None:
    """Rows of nx, ny, nz, every timed run, then the median."""
    with open(path, "w", newline="") as fh:
        n_runs = max((len(m.runs) for m in measurements), default=0)
        header = ["nx", "ny", "nz"] + [f"run{i + 1}_ms" for i in range(n_runs)]
        fh.write(",".join(header + ["median_ms"]) + "\n")
        for m in measurements:
            cells = [str(m.config.nx), str(m.config.ny), str(m.config.nz)]
            cells += [f"{r:.6g}" for r in m.runs]
            cells += [""] * (n_runs - len(m.runs))
            cells.append(f"{m.median_ms:.6g}")
            fh.write(",".join(cells) + "\n")

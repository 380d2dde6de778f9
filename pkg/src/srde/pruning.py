"""Iterative filter-bank compression.

Each outer step lowers the sparsity ratio alpha, selects which bank
filters survive by an L1-regularized regression against ground-truth
pixels (lambda found by exponential growth then bisection on the support
size), refits the surviving coefficients by least squares, rescales the
predictor head accordingly, and drops the pruned rows from the bank.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .dictionary import Dictionary
from .predictor import PredictorWeights, predict_coefficients, scale_output_channels
from .rng import Rng
from .tensor import Tensor, bilinear_upsample, extract_patches

logger = logging.getLogger(__name__)

# The growth phase may use at most 64 solves total (initial plus doublings),
# so the whole search stays within 64 + bisect_max solves.
DOUBLING_CAP = 63


@dataclass(frozen=True)
class SelectionVector:
    """Per-filter selection weights; exact zeros mark pruned filters."""

    beta: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "beta", np.ascontiguousarray(self.beta, dtype=np.float64)
        )

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.beta)

    @property
    def support_size(self) -> int:
        return int(np.count_nonzero(self.beta))


@dataclass(frozen=True)
class PruneConfig:
    alpha_target: float
    delta_alpha: float = 0.1
    epsilon: float = 0.02
    lambda0: float = 1e-4
    sample_count: int = 4096
    seed: int = 0
    lasso_tol: float = 1e-6
    lasso_max_iters: int = 10000
    bisect_max: int = 32

    def __post_init__(self):
        if not 0.0 < self.alpha_target < 1.0:
            raise ValueError("alpha_target must lie in (0, 1)")
        if self.epsilon >= self.delta_alpha:
            raise ValueError("epsilon must be smaller than delta_alpha")
        if self.delta_alpha <= 0 or self.lambda0 <= 0 or self.sample_count < 1:
            raise ValueError("invalid pruning configuration")


@dataclass(frozen=True)
class RegressionProblem:
    """Sampled linear system: column i holds filter i's per-pixel contribution."""

    A: np.ndarray  # (M, L) float64
    t: np.ndarray  # (M,) float64
    pixel_ids: np.ndarray

    def __post_init__(self):
        A = np.ascontiguousarray(self.A, dtype=np.float64)
        t = np.ascontiguousarray(self.t, dtype=np.float64)
        if A.ndim != 2 or t.shape != (A.shape[0],):
            raise ValueError("A must be (M, L) with matching target length")
        if not (np.isfinite(A).all() and np.isfinite(t).all()):
            raise ValueError("regression problem contains non-finite values")
        if A.shape[0] < A.shape[1]:
            warnings.warn(
                f"only {A.shape[0]} samples for {A.shape[1]} columns; "
                "the fit may be underdetermined",
                stacklevel=2,
            )
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "t", t)

    @property
    def M(self) -> int:
        return self.A.shape[0]

    @property
    def L(self) -> int:
        return self.A.shape[1]


def build_regression(
    hgt: Tensor, phi: Tensor, bank: Dictionary, b: Tensor, M: int, rng: Rng
) -> RegressionProblem:
    """Sample M pixels without replacement and extract their contributions.

    A[m, i] = phi[p_m, i] * (rows[i] . patches[p_m]); t[m] is the ground
    truth at p_m. Summing A's columns therefore reproduces the pipeline
    output at the sampled pixels.
    """
    if hgt.n != 1 or hgt.c != 1:
        raise ValueError("ground truth must be a single single-channel image")
    if phi.c != bank.L:
        raise ValueError(f"phi has {phi.c} channels, bank has {bank.L} filters")
    if b.c != bank.k**2:
        raise ValueError(f"patch tensor has {b.c} channels, expected {bank.k ** 2}")
    if (phi.h, phi.w) != (hgt.h, hgt.w) or (b.h, b.w) != (hgt.h, hgt.w):
        raise ValueError("phi/patch/ground-truth spatial dims disagree")
    pixels = hgt.h * hgt.w
    if M > pixels:
        raise ValueError(f"cannot sample {M} of {pixels} pixels")
    ids = np.asarray(rng.sample_without_replacement(pixels, M), dtype=np.int64)
    patches = b.data[0].reshape(b.c, pixels).T[ids].astype(np.float64)
    responses = patches @ bank.rows.astype(np.float64).T  # (M, L)
    coeffs = phi.data[0].reshape(phi.c, pixels).T[ids].astype(np.float64)
    targets = hgt.data[0, 0].reshape(pixels)[ids].astype(np.float64)
    return RegressionProblem(A=coeffs * responses, t=targets, pixel_ids=ids)


def lasso(
    prob: RegressionProblem,
    lam: float,
    beta0: np.ndarray | None = None,
    tol: float = 1e-6,
    max_iters: int = 10000,
) -> SelectionVector:
    """Cyclic coordinate descent for (1/M)||t - A b||^2 + lam*||b||_1.

    Each coordinate update soft-thresholds at lam/2 (the factor follows
    from the 1/M prefactor of the squared term). Columns with zero norm
    are dropped with a warning. Convergence is declared when the largest
    relative coefficient change over a sweep drops below `tol`; hitting
    the iteration cap warns instead of raising.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    A, t, M = prob.A, prob.t, prob.M
    norms = (A * A).sum(axis=0) / M
    dead = norms == 0.0
    if dead.any():
        warnings.warn(
            f"{int(dead.sum())} zero-norm columns dropped from the L1 fit",
            stacklevel=2,
        )
    beta = np.zeros(prob.L) if beta0 is None else np.asarray(beta0, np.float64).copy()
    beta[dead] = 0.0
    r = t - A @ beta
    half_lam = 0.5 * lam
    for _ in range(max_iters):
        max_delta = 0.0
        for i in range(prob.L):
            if dead[i]:
                continue
            old = beta[i]
            rho = (A[:, i] @ r) / M + norms[i] * old
            if rho > half_lam:
                new = (rho - half_lam) / norms[i]
            elif rho < -half_lam:
                new = (rho + half_lam) / norms[i]
            else:
                new = 0.0
            if new != old:
                r += A[:, i] * (old - new)
                beta[i] = new
                max_delta = max(max_delta, abs(new - old))
        scale = float(np.max(np.abs(beta)))
        if scale == 0.0 or max_delta / scale < tol:
            break
    else:
        warnings.warn("coordinate descent hit the iteration cap", stacklevel=2)
    return SelectionVector(beta=beta)


def search_lambda(
    prob: RegressionProblem,
    target_count: int,
    lambda_start: float,
    cfg: PruneConfig,
    count_tol: float | None = None,
    trials: list | None = None,
) -> tuple[SelectionVector, float]:
    """Find lambda whose selection keeps about `target_count` filters.

    Doubles lambda until the support is small enough, then bisects between
    the last failing and first succeeding lambda until the support is
    within `count_tol` of the target (default: epsilon * column count). If
    the bisection budget runs out, returns the trial whose support is
    closest to the target, preferring supports that do not exceed it.
    """
    if not 0 < target_count < prob.L:
        raise ValueError(f"target_count must lie in (0, {prob.L})")
    if not ((prob.A * prob.A).sum(axis=0) > 0).any():
        raise ValueError("target unreachable: all columns are zero")
    if count_tol is None:
        count_tol = cfg.epsilon * prob.L

    def solve(lam: float, warm) -> SelectionVector:
        sel = lasso(prob, lam, beta0=warm, tol=cfg.lasso_tol,
                    max_iters=cfg.lasso_max_iters)
        attempts.append((lam, sel))
        if trials is not None:
            trials.append((lam, sel.support_size))
        return sel

    attempts: list[tuple[float, SelectionVector]] = []
    lam = lambda_start
    sel = solve(lam, None)
    doublings = 0
    while sel.support_size > target_count and doublings < DOUBLING_CAP:
        lam *= 2.0
        sel = solve(lam, sel.beta)
        doublings += 1

    if abs(sel.support_size - target_count) <= count_tol:
        return sel, lam

    lo, hi = 0.5 * lam, lam
    for _ in range(cfg.bisect_max):
        mid = 0.5 * (lo + hi)
        sel = solve(mid, sel.beta)
        logger.debug(
            "bisection: lambda=%.6g support=%d target=%d",
            mid, sel.support_size, target_count,
        )
        if abs(sel.support_size - target_count) <= count_tol:
            return sel, mid
        if sel.support_size > target_count:
            lo = mid
        else:
            hi = mid

    best_idx = min(
        range(len(attempts)),
        key=lambda i: (
            attempts[i][1].support_size > target_count,
            abs(attempts[i][1].support_size - target_count),
            i,
        ),
    )
    lam, sel = attempts[best_idx]
    return sel, lam


def fit_gamma(prob: RegressionProblem, keep) -> np.ndarray:
    """Least-squares weights over the kept columns (jittered normal equations)."""
    keep = list(keep)
    if not keep:
        raise ValueError("keep must be non-empty")
    A = prob.A[:, keep]
    gram = A.T @ A + 1e-8 * np.eye(len(keep))
    try:
        return np.linalg.solve(gram, A.T @ prob.t)
    except np.linalg.LinAlgError as exc:
        raise ValueError(
            "singular system after jitter; sampling is degenerate"
        ) from exc


@dataclass(frozen=True)
class PruneStep:
    step: int
    alpha: float
    lam: float
    support_size: int
    sampled_mse: float
    kept: tuple[int, ...]  # surviving filters, in original bank indices


@dataclass
class PruneTrace:
    steps: list[PruneStep] = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            out = csv.writer(f)
            out.writerow(["step", "alpha", "lambda", "support_size", "sampled_mse"])
            for s in self.steps:
                out.writerow([s.step, f"{s.alpha:.6g}", f"{s.lam:.9g}",
                              s.support_size, f"{s.sampled_mse:.9g}"])


def _allocate_samples(sample_count: int, capacities: list[int]) -> list[int]:
    """Proportional split of the sample budget, capped by each image's pixels."""
    total = sum(capacities)
    m = sample_count
    if m > total:
        warnings.warn(
            f"dataset supplies only {total} pixels; sampling all of them",
            stacklevel=3,
        )
        m = total
    shares = [min(cap, (m * cap) // total) for cap in capacities]
    shortfall = m - sum(shares)
    i = 0
    while shortfall > 0:
        if shares[i] < capacities[i]:
            shares[i] += 1
            shortfall -= 1
        i = (i + 1) % len(shares)
    return shares


def _dataset_problem(
    pred: PredictorWeights,
    bank: Dictionary,
    dataset: list[tuple[Tensor, Tensor]],
    sample_count: int,
    rng: Rng,
) -> RegressionProblem:
    """Pool a fixed total of sampled pixels across all dataset images."""
    shares = _allocate_samples(
        sample_count, [hgt.h * hgt.w for _, hgt in dataset]
    )
    blocks = []
    for img_idx, ((x, hgt), share) in enumerate(zip(dataset, shares)):
        if share == 0:
            continue
        phi = predict_coefficients(x, pred)
        patches = extract_patches(bilinear_upsample(x, pred.scale), bank.k)
        sub = build_regression(hgt, phi, bank, patches, share, Rng(rng.next_u64()))
        ids = np.column_stack(
            [np.full(share, img_idx, dtype=np.int64), sub.pixel_ids]
        )
        blocks.append((sub.A, sub.t, ids))
    return RegressionProblem(
        A=np.vstack([b[0] for b in blocks]),
        t=np.concatenate([b[1] for b in blocks]),
        pixel_ids=np.vstack([b[2] for b in blocks]),
    )


def prune_dictionary(
    pred: PredictorWeights,
    bank: Dictionary,
    dataset: list[tuple[Tensor, Tensor]],
    cfg: PruneConfig,
) -> tuple[Dictionary, PredictorWeights, PruneTrace]:
    """Compress the bank to about alpha_target * L filters.

    Walks alpha down by delta_alpha per step. Every step re-samples pixels
    (step-dependent seed), re-runs the selection against the current
    (already rescaled) predictor and bank, refits the survivors' weights,
    and shrinks both the predictor head and the bank. Support targets are
    always measured against the original filter count. The per-step trace
    is returned for inspection; its sampled error is not guaranteed to be
    monotone.
    """
    if not dataset:
        raise ValueError("dataset must be non-empty")
    if bank.L != pred.coeff_count:
        raise ValueError(
            f"bank has {bank.L} filters, predictor emits {pred.coeff_count}"
        )
    L_orig = bank.L
    trace = PruneTrace()
    seed_stream = Rng(cfg.seed)
    lam = cfg.lambda0
    step = 0
    alpha = 1.0
    while alpha > cfg.alpha_target + 1e-12:
        step += 1
        alpha = 1.0 - step * cfg.delta_alpha
        target = max(1, int(math.floor(alpha * L_orig + 1e-9)))
        prob = _dataset_problem(
            pred, bank, dataset, cfg.sample_count, Rng(seed_stream.next_u64())
        )
        if bank.L <= target:
            # Earlier steps overshot past this target; the sparsity
            # constraint already holds, so only the refit below runs.
            keep = list(range(bank.L))
        else:
            sel, lam = search_lambda(
                prob, target, lam, cfg, count_tol=cfg.epsilon * L_orig
            )
            keep = [int(i) for i in sel.support]
        if not keep:
            raise ValueError(
                f"selection at alpha={alpha:.3g} emptied the dictionary"
            )
        gamma = fit_gamma(prob, keep)
        gvec = np.zeros(bank.L)
        gvec[keep] = gamma
        pred = scale_output_channels(pred, gvec, keep)
        prev_alive = trace.steps[-1].kept if trace.steps else tuple(range(L_orig))
        alive = tuple(prev_alive[i] for i in keep)
        bank = bank.select(keep)
        residual = prob.t - prob.A[:, keep] @ gamma
        mse = float(residual @ residual) / prob.M
        trace.steps.append(
            PruneStep(step, alpha, lam, len(keep), mse, alive)
        )
        logger.info(
            "prune step %d: alpha=%.3g lambda=%.4g kept=%d mse=%.3g",
            step, alpha, lam, len(keep), mse,
        )
    return bank, pred, trace

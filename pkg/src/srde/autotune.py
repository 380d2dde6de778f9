"""Feasible block-configuration enumeration and Bayesian-optimization search.

The machine model restricts candidate tile shapes to those whose thread
count fits the per-partition scheduling budget; the search minimizes a
latency oracle over that finite set with a Gaussian-process surrogate and
expected improvement, falling back to exhaustive evaluation whenever the
budget covers the whole set.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .engine import BlockConfig, HardwareSpec
from .rng import Rng

LENGTH_SCALE_GRID = (0.5, 1.0, 2.0, 4.0)
SIGNAL_VAR_GRID = (0.5, 1.0, 2.0)
NOISE_VAR_GRID = (1e-4, 1e-2)


def warps_per_block(threads: int, ws: int) -> int:
    """ceil(threads / warp size)."""
    if threads < 1:
        raise ValueError("threads must be >= 1")
    return -(-threads // ws)


@dataclass(frozen=True)
class FeasibleSet:
    dims: tuple[int, int, int]
    spec: HardwareSpec
    configs: list[BlockConfig]
    T_bound: float


def warp_budget(dims: tuple[int, int, int], spec: HardwareSpec) -> tuple[float, int]:
    """Per-partition warp allowance T and the thread-count bound it implies.

    T is the even-data share H'*W'*C / (S*P*R) capped by the hardware
    ceiling T_sm; values below 1 are clamped to 1 (degenerate small-data
    case) with a warning. The product bound is floor(WS * P * T).
    """
    h, w, c = dims
    t_real = (h * w * c) / (spec.S * spec.P * spec.R)
    t = min(t_real, float(spec.T_sm))
    if t < 1.0:
        warnings.warn(
            f"warp share {t:.3g} < 1 for dims {dims}; clamping to 1",
            stacklevel=2,
        )
        t = 1.0
    return t, int(math.floor(spec.WS * spec.P * t))


def feasible_configs(dims: tuple[int, int, int], spec: HardwareSpec) -> FeasibleSet:
    """All (nx, ny, nz) within the data box whose product fits the warp budget.

    Enumeration order (and therefore every tie-break downstream) is
    lexicographic ascending.
    """
    h, w, c = dims
    if min(h, w, c) < 1:
        raise ValueError("dims must be positive")
    t, bound = warp_budget(dims, spec)
    configs = []
    for nx in range(1, h + 1):
        if nx > bound:
            break
        ny_cap = min(w, bound // nx)
        for ny in range(1, ny_cap + 1):
            nz_cap = min(c, bound // (nx * ny))
            for nz in range(1, nz_cap + 1):
                configs.append(BlockConfig(nx, ny, nz))
    if not configs:
        raise ValueError(
            f"no feasible configuration for dims {dims} under {spec}"
        )
    return FeasibleSet(dims=dims, spec=spec, configs=configs, T_bound=t)


def is_feasible(cfg: BlockConfig, dims: tuple[int, int, int], spec: HardwareSpec) -> bool:
    h, w, c = dims
    if cfg.nx > h or cfg.ny > w or cfg.nz > c:
        return False
    _, bound = warp_budget(dims, spec)
    return cfg.threads <= bound


def _features(configs) -> np.ndarray:
    arr = np.asarray([(c.nx, c.ny, c.nz) for c in configs], dtype=np.float64)
    return np.log2(arr)


def _kernel(xa: np.ndarray, xb: np.ndarray, ls: np.ndarray, sf2: float) -> np.ndarray:
    d = (xa[:, None, :] - xb[None, :, :]) / ls
    return sf2 * np.exp(-0.5 * (d * d).sum(axis=2))


@dataclass(frozen=True)
class GpModel:
    """Squared-exponential GP over log2 tile extents, standardized targets."""

    features: np.ndarray
    latencies: np.ndarray
    y_mean: float
    y_std: float
    length_scales: np.ndarray
    signal_var: float
    noise_var: float
    chol: np.ndarray
    alpha: np.ndarray
    log_marginal: float


def _build_gp(X, ys, ls, sf2, sn2) -> tuple[np.ndarray, np.ndarray, float] | None:
    n = X.shape[0]
    K = _kernel(X, X, ls, sf2) + sn2 * np.eye(n)
    try:
        L = np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        try:
            L = np.linalg.cholesky(K + 1e-8 * np.eye(n))
        except np.linalg.LinAlgError:
            return None
    z = np.linalg.solve(L, ys)
    alpha = np.linalg.solve(L.T, z)
    lml = -0.5 * float(z @ z) - float(np.log(np.diag(L)).sum()) - 0.5 * n * math.log(2 * math.pi)
    return L, alpha, lml


def gp_fit(
    observations: list[tuple[BlockConfig, float]],
    length_scales=None,
    signal_var: float | None = None,
    noise_var: float | None = None,
) -> GpModel:
    """Fit hyperparameters by grid search on the log marginal likelihood.

    Targets are standardized internally; per-dimension length scales,
    signal variance and noise variance each range over a small fixed grid
    unless pinned by the keyword overrides.
    """
    if len(observations) < 2:
        raise ValueError("need at least 2 observations to fit")
    configs = [c for c, _ in observations]
    y = np.asarray([v for _, v in observations], dtype=np.float64)
    X = _features(configs)
    mu = float(y.mean())
    sd = float(y.std())
    if sd == 0.0:
        sd = 1.0
    ys = (y - mu) / sd

    if length_scales is not None:
        ls_candidates = [np.broadcast_to(np.asarray(length_scales, np.float64), (3,))]
    else:
        ls_candidates = [
            np.asarray(combo)
            for combo in np.stack(
                np.meshgrid(*[LENGTH_SCALE_GRID] * 3, indexing="ij"), axis=-1
            ).reshape(-1, 3)
        ]
    sf_candidates = [signal_var] if signal_var is not None else list(SIGNAL_VAR_GRID)
    sn_candidates = [noise_var] if noise_var is not None else list(NOISE_VAR_GRID)

    best = None
    for ls in ls_candidates:
        for sf2 in sf_candidates:
            for sn2 in sn_candidates:
                built = _build_gp(X, ys, ls, sf2, sn2)
                if built is None:
                    continue
                L, alpha, lml = built
                if best is None or lml > best[0]:
                    best = (lml, ls, sf2, sn2, L, alpha)
    if best is None:
        raise ValueError("kernel matrix singular even after jitter")
    lml, ls, sf2, sn2, L, alpha = best
    return GpModel(
        features=X,
        latencies=y,
        y_mean=mu,
        y_std=sd,
        length_scales=np.asarray(ls, dtype=np.float64),
        signal_var=sf2,
        noise_var=sn2,
        chol=L,
        alpha=alpha,
        log_marginal=lml,
    )


def _predict_batch(model: GpModel, configs) -> tuple[np.ndarray, np.ndarray]:
    Xs = _features(configs)
    ks = _kernel(model.features, Xs, model.length_scales, model.signal_var)
    mean_s = ks.T @ model.alpha
    v = np.linalg.solve(model.chol, ks)
    var_s = np.maximum(model.signal_var - (v * v).sum(axis=0), 0.0)
    mean = model.y_mean + model.y_std * mean_s
    var = var_s * model.y_std**2
    return mean, var


def gp_predict(model: GpModel, config: BlockConfig) -> tuple[float, float]:
    """Posterior (mean, variance) at one configuration, de-standardized."""
    mean, var = _predict_batch(model, [config])
    return float(mean[0]), float(var[0])


def _norm_pdf(z: float) -> float:
    return math.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)


def _norm_cdf(z: float) -> float:
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))


def expected_improvement(mean: float, variance: float, best_so_far: float) -> float:
    """Expected latency reduction below `best_so_far` (minimization form)."""
    if variance < 0:
        raise ValueError("variance must be non-negative")
    sigma = math.sqrt(variance)
    if sigma == 0.0:
        return max(best_so_far - mean, 0.0)
    z = (best_so_far - mean) / sigma
    return (best_so_far - mean) * _norm_cdf(z) + sigma * _norm_pdf(z)


@dataclass(frozen=True)
class TuneResult:
    best_config: BlockConfig
    best_latency: float
    history: list[tuple[BlockConfig, float, float]]  # (config, latency, acquisition)
    budget_used: int

    def __post_init__(self):
        if self.best_latency != min(lat for _, lat, _ in self.history):
            raise ValueError("best_latency must be the minimum over history")


def _evaluate_all(configs, oracle) -> TuneResult:
    history = [(cfg, float(oracle(cfg)), math.nan) for cfg in configs]
    best_cfg, best_lat, _ = min(history, key=lambda rec: rec[1])
    return TuneResult(best_cfg, best_lat, history, budget_used=len(history))


def exhaustive_tune(
    dims: tuple[int, int, int],
    spec: HardwareSpec,
    oracle,
    candidates: list[BlockConfig] | None = None,
) -> TuneResult:
    """Evaluate every feasible configuration once; the exact optimum."""
    configs = candidates if candidates is not None else feasible_configs(dims, spec).configs
    if not configs:
        raise ValueError("candidate set is empty")
    return _evaluate_all(configs, oracle)


def tune(
    dims: tuple[int, int, int],
    spec: HardwareSpec,
    oracle,
    budget: int,
    init: int = 8,
    seed: int = 0,
    candidates: list[BlockConfig] | None = None,
) -> TuneResult:
    """GP-guided minimization of `oracle` over the feasible set.

    Seeds with `init` distinct random configurations, then repeatedly fits
    the surrogate, scores expected improvement on every feasible
    configuration, and evaluates the unevaluated argmax (ties to the
    lexicographically smallest). A budget covering the whole set
    degenerates to exhaustive search.
    """
    if budget <= init:
        raise ValueError("budget must exceed the initialization count")
    configs = candidates if candidates is not None else feasible_configs(dims, spec).configs
    if not configs:
        raise ValueError("candidate set is empty")
    if budget >= len(configs):
        return _evaluate_all(configs, oracle)

    rng = Rng(seed)
    picked = rng.sample_without_replacement(len(configs), init)
    history: list[tuple[BlockConfig, float, float]] = []
    seen: set[BlockConfig] = set()
    for idx in picked:
        cfg = configs[idx]
        history.append((cfg, float(oracle(cfg)), math.nan))
        seen.add(cfg)

    while len(history) < budget:
        model = gp_fit([(cfg, lat) for cfg, lat, _ in history])
        best = min(lat for _, lat, _ in history)
        means, variances = _predict_batch(model, configs)
        next_cfg = None
        next_ei = -1.0
        for cfg, m, v in zip(configs, means, variances):
            if cfg in seen:
                continue
            ei = expected_improvement(float(m), float(v), best)
            if ei > next_ei or (ei == next_ei and (next_cfg is None or cfg < next_cfg)):
                next_cfg, next_ei = cfg, ei
        history.append((next_cfg, float(oracle(next_cfg)), next_ei))
        seen.add(next_cfg)

    best_cfg, best_lat, _ = min(history, key=lambda rec: rec[1])
    return TuneResult(best_cfg, best_lat, history, budget_used=len(history))


def write_tuning_csv(result: TuneResult, path) -> None:
    with open(path, "w", newline="") as f:
        out = csv.writer(f)
        out.writerow(
            ["iteration", "nx", "ny", "nz", "latency", "acquisition", "best_so_far"]
        )
        best = math.inf
        for i, (cfg, lat, acq) in enumerate(result.history):
            best = min(best, lat)
            out.writerow(
                [i, cfg.nx, cfg.ny, cfg.nz, f"{lat:.9g}",
                 "" if math.isnan(acq) else f"{acq:.9g}", f"{best:.9g}"]
            )

"""Command-line entry point.

Subcommands: gen-dict, upscale, prune, tune, bench, metrics, footprint.
Options may come from a key=value config file (--config); explicit flags
win. The seed falls back to the SRDE_SEED environment variable. Errors are
emitted as one JSON object per line on stderr and exit with status 1.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import statistics
import sys
import time
from pathlib import Path

import numpy as np

from . import autotune, metrics, pruning
from .dictionary import (
    DEFAULT_DOG_PAIRS,
    DEFAULT_K,
    DEFAULT_RATIOS,
    DEFAULT_SIGMAS,
    DEFAULT_THETAS,
    Dictionary,
    assemble_filters,
    build_dictionary,
    communication_footprint,
    load_dictionary,
    save_dictionary,
)
from .engine import BlockConfig, HardwareSpec, measure_latency, run_filtering, synthetic_cost
from .formats import FormatError
from .imageio import load_image, save_image
from .predictor import load_weights, predict_coefficients, random_init, save_weights
from .tensor import Tensor, bilinear_upsample, degrade, extract_patches

# Reference timings from the original large-scale study (server-class GPU,
# milliseconds); printed by `bench` for context only. NOT reproducible by
# this desk-scale emulation.
REFERENCE_LATENCIES_MS = {
    ("64x64", 2): 1.02,
    ("64x64", 3): 1.40,
    ("64x64", 4): 1.88,
    ("128x128", 2): 2.66,
    ("180x320", 2): 9.25,
    ("360x640", 2): 37.47,
}

DEFAULT_BENCH_SIZES = "64x64,128x128,180x320,360x640"
DEFAULT_BENCH_RATIOS = "1.0,0.8,0.6,0.4,0.2,0.1"


class CliError(ValueError):
    pass


# --------------------------------------------------------------------------
# key=value run configuration

_KNOWN_KEYS = {
    "scale": int,
    "seed": int,
    "dict.k": int,
    "dict.sigmas": "floats",
    "dict.thetas": "floats",
    "dict.ratios": "floats",
    "dict.dog_pairs": "pairs",
    "predictor.hidden": int,
    "predictor.blocks": int,
    "prune.alpha": float,
    "prune.delta_alpha": float,
    "prune.epsilon": float,
    "prune.lambda0": float,
    "prune.samples": int,
    "prune.lasso_tol": float,
    "prune.lasso_max_iters": int,
    "prune.bisect_max": int,
    "prune.sigma": float,
    "hw.sms": int,
    "hw.partitions": int,
    "hw.registers": int,
    "hw.warp_size": int,
    "hw.max_warps": int,
    "hw.workers": int,
    "tune.budget": int,
    "tune.init": int,
    "tune.oracle": str,
    "tune.repeats": int,
    "bench.repeats": int,
}


def _parse_floats(text: str) -> list[float]:
    return [float(tok) for tok in text.split(",") if tok.strip()]


def _parse_pairs(text: str) -> list[tuple[float, float]]:
    pairs = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        a, _, b = tok.partition(":")
        pairs.append((float(a), float(b)))
    return pairs


class RunConfig:
    """Typed view over config-file pairs merged with command-line flags."""

    def __init__(self, values: dict[str, str] | None = None):
        self.values = values or {}

    @classmethod
    def load(cls, path) -> "RunConfig":
        values: dict[str, str] = {}
        with open(path, "r", encoding="utf-8") as f:
            for lineno, raw in enumerate(f, start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                key, sep, value = line.partition("=")
                key = key.strip()
                if not sep or not key:
                    raise CliError(f"{path}:{lineno}: expected key=value")
                if key not in _KNOWN_KEYS:
                    raise CliError(f"{path}:{lineno}: unknown key {key!r}")
                values[key] = value.strip()
        return cls(values)

    def get(self, key: str, default=None):
        if key not in self.values:
            return default
        kind = _KNOWN_KEYS[key]
        raw = self.values[key]
        try:
            if kind == "floats":
                return _parse_floats(raw)
            if kind == "pairs":
                return _parse_pairs(raw)
            return kind(raw)
        except ValueError:
            raise CliError(f"config key {key}={raw!r} is malformed") from None


def _resolve_seed(args, cfg: RunConfig) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    from_cfg = cfg.get("seed")
    if from_cfg is not None:
        return from_cfg
    env = os.environ.get("SRDE_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise CliError(f"SRDE_SEED={env!r} is not an integer") from None
    return 0


def _hardware(args, cfg: RunConfig) -> HardwareSpec:
    workers = getattr(args, "workers", None)
    if workers is None:
        workers = cfg.get("hw.workers")
    return HardwareSpec(
        S=cfg.get("hw.sms", 6),
        P=cfg.get("hw.partitions", 4),
        R=cfg.get("hw.registers", 16384),
        WS=cfg.get("hw.warp_size", 32),
        T_sm=cfg.get("hw.max_warps", 4),
        workers=workers,
    )


def _parse_block(text: str) -> BlockConfig:
    parts = text.split(",")
    if len(parts) != 3:
        raise CliError(f"--block expects NX,NY,NZ or 'auto', got {text!r}")
    try:
        nx, ny, nz = (int(p) for p in parts)
    except ValueError:
        raise CliError(f"--block expects integers, got {text!r}") from None
    return BlockConfig(nx, ny, nz)


def _parse_dims(text: str, what: str = "--dims") -> tuple[int, ...]:
    try:
        parts = tuple(int(p) for p in text.lower().split("x"))
    except ValueError:
        raise CliError(f"{what} expects WIDTHxHEIGHT-style integers, got {text!r}") from None
    if any(p < 1 for p in parts):
        raise CliError(f"{what} values must be positive, got {text!r}")
    return parts


def _best_synthetic_config(dims, spec: HardwareSpec) -> BlockConfig:
    feasible = autotune.feasible_configs(dims, spec)
    return min(feasible.configs, key=lambda c: (synthetic_cost(c, dims, spec), c))


def _auto_tune_config(f: Tensor, b: Tensor, spec: HardwareSpec, budget: int,
                      seed: int, log_path=None) -> BlockConfig:
    """Measured-latency tuning over the 50 best synthetic-cost candidates."""
    dims = (f.h, f.w, f.c)
    feasible = autotune.feasible_configs(dims, spec)
    ranked = sorted(
        feasible.configs, key=lambda c: (synthetic_cost(c, dims, spec), c)
    )
    candidates = sorted(ranked[:50])

    def oracle(cfg: BlockConfig) -> float:
        return measure_latency(f, b, cfg, spec, repeats=2).median_ms

    if budget >= len(candidates):
        result = autotune.exhaustive_tune(dims, spec, oracle, candidates=candidates)
    else:
        result = autotune.tune(
            dims, spec, oracle, budget=budget, init=min(8, budget - 1),
            seed=seed, candidates=candidates,
        )
    if log_path:
        autotune.write_tuning_csv(result, log_path)
    return result.best_config


# --------------------------------------------------------------------------
# commands

def cmd_gen_dict(args, cfg: RunConfig) -> int:
    bank = build_dictionary(
        k=args.k if args.k is not None else cfg.get("dict.k", DEFAULT_K),
        sigmas=cfg.get("dict.sigmas", DEFAULT_SIGMAS),
        thetas=cfg.get("dict.thetas", DEFAULT_THETAS),
        ratios=cfg.get("dict.ratios", DEFAULT_RATIOS),
        dog_pairs=cfg.get("dict.dog_pairs", DEFAULT_DOG_PAIRS),
    )
    save_dictionary(bank, args.out)
    print(f"L={bank.L} k={bank.k} -> {args.out}")
    return 0


def _load_model(args) -> tuple[Dictionary, "object"]:
    bank = load_dictionary(args.dict)
    weights = load_weights(args.weights)
    if weights.coeff_count != bank.L:
        raise CliError(
            f"weights predict {weights.coeff_count} coefficients but the "
            f"dictionary has {bank.L} filters"
        )
    return bank, weights


def cmd_upscale(args, cfg: RunConfig) -> int:
    seed = _resolve_seed(args, cfg)
    spec = _hardware(args, cfg)
    bank, weights = _load_model(args)
    scale = args.scale if args.scale is not None else cfg.get("scale", weights.scale)
    if scale != weights.scale:
        raise CliError(
            f"requested scale {scale} but the weights were built for {weights.scale}"
        )
    if scale not in (2, 3, 4):
        raise CliError(f"scale must be one of 2, 3, 4, got {scale}")

    total0 = time.perf_counter()
    t0 = time.perf_counter()
    image = load_image(args.input)
    upsampled = bilinear_upsample(image, scale)
    patches = extract_patches(upsampled, bank.k)
    others_ms = (time.perf_counter() - t0) * 1e3

    t0 = time.perf_counter()
    coeffs = predict_coefficients(image, weights)
    conv_ms = (time.perf_counter() - t0) * 1e3

    # block-configuration choice counts toward "Others"
    t0 = time.perf_counter()
    dims = (patches.h, patches.w, patches.c)
    if args.block == "auto":
        budget = args.budget if args.budget is not None else cfg.get("tune.budget", 30)
        block = _auto_tune_config(
            assemble_filters(coeffs, bank), patches, spec, budget, seed,
            log_path=args.tuning_log,
        )
    elif args.block is not None:
        block = _parse_block(args.block)
        if not autotune.is_feasible(block, dims, spec):
            raise CliError(f"explicit block {args.block} is infeasible for {dims}")
    else:
        block = _best_synthetic_config(dims, spec)
    others_ms += (time.perf_counter() - t0) * 1e3

    t0 = time.perf_counter()
    filters = assemble_filters(coeffs, bank)
    output = run_filtering(filters, patches, block, spec)
    dictionary_ms = (time.perf_counter() - t0) * 1e3

    t0 = time.perf_counter()
    save_image(output, args.out)
    others_ms += (time.perf_counter() - t0) * 1e3
    total_ms = (time.perf_counter() - total0) * 1e3

    if args.timing_csv:
        with open(args.timing_csv, "w", newline="") as f:
            f.write("stage,ms\n")
            f.write(f"Dictionary,{dictionary_ms:.6g}\n")
            f.write(f"Conv,{conv_ms:.6g}\n")
            f.write(f"Others,{others_ms:.6g}\n")
            f.write(f"Total,{total_ms:.6g}\n")
    print(
        f"{args.input} -> {args.out} scale={scale} block="
        f"{block.nx},{block.ny},{block.nz} total={total_ms:.2f}ms"
    )
    return 0


def cmd_prune(args, cfg: RunConfig) -> int:
    seed = _resolve_seed(args, cfg)
    bank, weights = _load_model(args)
    scale = weights.scale
    sigma = cfg.get("prune.sigma", scale / 2.0)

    data_dir = Path(args.data)
    paths = sorted(
        p for p in data_dir.iterdir()
        if p.suffix.lower() in (".pgm", ".ppm")
    )
    if not paths:
        raise CliError(f"no PGM/PPM images found in {data_dir}")
    dataset = []
    for p in paths:
        hr = load_image(p)
        # crop to a multiple of the scale so the degradation is defined
        h = (hr.h // scale) * scale
        w = (hr.w // scale) * scale
        if h < scale or w < scale:
            raise CliError(f"{p} is too small for scale {scale}")
        hr = Tensor(hr.data[:, :, :h, :w])
        lr = degrade(hr, scale, sigma)
        dataset.append((lr, hr))

    pcfg = pruning.PruneConfig(
        alpha_target=args.alpha if args.alpha is not None else cfg.get("prune.alpha", 0.5),
        delta_alpha=cfg.get("prune.delta_alpha", 0.1),
        epsilon=cfg.get("prune.epsilon", 0.02),
        lambda0=cfg.get("prune.lambda0", 1e-4),
        sample_count=cfg.get("prune.samples", 4096),
        seed=seed,
        lasso_tol=cfg.get("prune.lasso_tol", 1e-6),
        lasso_max_iters=cfg.get("prune.lasso_max_iters", 10000),
        bisect_max=cfg.get("prune.bisect_max", 32),
    )
    new_bank, new_weights, trace = pruning.prune_dictionary(
        weights, bank, dataset, pcfg
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_dictionary(new_bank, out_dir / "pruned.srdict")
    save_weights(new_weights, out_dir / "pruned.srnet")
    trace.write_csv(out_dir / "trace.csv")
    print(
        f"pruned {bank.L} -> {new_bank.L} filters over {len(trace.steps)} steps; "
        f"outputs in {out_dir}"
    )
    return 0


def cmd_tune(args, cfg: RunConfig) -> int:
    seed = _resolve_seed(args, cfg)
    spec = _hardware(args, cfg)
    if args.dims:
        dims = _parse_dims(args.dims)
        if len(dims) != 3:
            raise CliError("--dims expects HxWxC")
    elif args.input:
        image = load_image(args.input)
        scale = args.scale if args.scale is not None else cfg.get("scale", 2)
        k = args.k if args.k is not None else cfg.get("dict.k", DEFAULT_K)
        dims = (image.h * scale, image.w * scale, k * k)
    else:
        raise CliError("tune needs --dims or --input")

    oracle_kind = args.oracle or cfg.get("tune.oracle", "synthetic")
    budget = args.budget if args.budget is not None else cfg.get("tune.budget", 40)
    init = cfg.get("tune.init", 8)
    feasible = autotune.feasible_configs(dims, spec)

    if oracle_kind == "synthetic":
        def oracle(c: BlockConfig) -> float:
            return synthetic_cost(c, dims, spec)
    elif oracle_kind == "measured":
        repeats = cfg.get("tune.repeats", 3)
        h, w, c = dims
        # timing payload only; values are irrelevant to the latency
        gen = np.random.default_rng(seed)
        f_t = Tensor(gen.random((1, c, h, w), dtype=np.float32))
        b_t = Tensor(gen.random((1, c, h, w), dtype=np.float32))

        def oracle(cfg_: BlockConfig) -> float:
            return measure_latency(f_t, b_t, cfg_, spec, repeats=repeats).median_ms
    else:
        raise CliError(f"unknown oracle {oracle_kind!r} (use measured|synthetic)")

    if budget >= len(feasible.configs):
        result = autotune.exhaustive_tune(dims, spec, oracle)
    else:
        result = autotune.tune(dims, spec, oracle, budget=budget, init=init, seed=seed)
    if args.out:
        autotune.write_tuning_csv(result, args.out)
    best = result.best_config
    print(
        f"best block=({best.nx},{best.ny},{best.nz}) latency={result.best_latency:.6g} "
        f"evaluations={result.budget_used} feasible={len(feasible.configs)}"
    )
    return 0


def _synthetic_image(h: int, w: int) -> Tensor:
    """Deterministic smooth test pattern with structure at several scales."""
    y = np.arange(h, dtype=np.float64)[:, None]
    x = np.arange(w, dtype=np.float64)[None, :]
    plane = (
        0.5
        + 0.2 * np.sin(2 * np.pi * x / 17.0 + 1.3)
        + 0.2 * np.cos(2 * np.pi * y / 23.0)
        + 0.1 * np.sin(2 * np.pi * (x + y) / 9.0)
    )
    return Tensor(np.clip(plane, 0.0, 1.0)[None, None].astype(np.float32))


def cmd_bench(args, cfg: RunConfig) -> int:
    seed = _resolve_seed(args, cfg)
    spec = _hardware(args, cfg)
    repeats = cfg.get("bench.repeats", 3)
    sizes = [
        _parse_dims(s, "--sizes") for s in (args.sizes or DEFAULT_BENCH_SIZES).split(",")
    ]
    scales = [int(s) for s in (args.scales or "2,3,4").split(",")]
    ratios = [float(r) for r in (args.ratios or DEFAULT_BENCH_RATIOS).split(",")]
    if args.dict:
        bank = load_dictionary(args.dict)
    else:
        bank = build_dictionary()

    print("# reference timings from the original study (server-class GPU, ms);")
    print("# NOT reproducible by this desk-scale emulation:")
    for (size, scale), ms in REFERENCE_LATENCIES_MS.items():
        print(f"#   {size} x{scale}: {ms} ms")

    rows = []
    for size in sizes:
        if len(size) != 2:
            raise CliError(f"--sizes entries must be HxW, got {size}")
        h, w = size
        for scale in scales:
            hgt = _synthetic_image(h * scale, w * scale)
            lr = degrade(hgt, scale, scale / 2.0)
            weights = random_init(
                seed, scale, bank.L,
                C=cfg.get("predictor.hidden", 16),
                R_b=cfg.get("predictor.blocks", 2),
            )
            coeffs = predict_coefficients(lr, weights)
            patches = extract_patches(bilinear_upsample(lr, scale), bank.k)
            dims = (patches.h, patches.w, patches.c)
            block = _best_synthetic_config(dims, spec)
            for ratio in ratios:
                kept = max(1, round(ratio * bank.L))
                sub_bank = bank.select(range(kept))
                sub_coeffs = Tensor(coeffs.data[:, :kept])
                runs = []
                for rep in range(repeats + 1):
                    t0 = time.perf_counter()
                    filters = assemble_filters(sub_coeffs, sub_bank)
                    output = run_filtering(filters, patches, block, spec)
                    elapsed = (time.perf_counter() - t0) * 1e3
                    if rep > 0:  # first run is warmup
                        runs.append(elapsed)
                median_ms = statistics.median(runs)
                rows.append({
                    "input": f"{h}x{w}",
                    "scale": scale,
                    "ratio": ratio,
                    "median_ms": median_ms,
                    "psnr_db": metrics.psnr(output, hgt),
                    "ssim": metrics.ssim(output, hgt),
                })
                print(
                    f"{h}x{w} x{scale} ratio={ratio}: {median_ms:.2f} ms "
                    f"psnr={rows[-1]['psnr_db']:.2f} ssim={rows[-1]['ssim']:.4f}"
                )

    if args.out:
        with open(args.out, "w", newline="") as f:
            f.write("input_size,scale,compression_ratio,median_ms,psnr_db,ssim\n")
            for r in rows:
                f.write(
                    f"{r['input']},{r['scale']},{r['ratio']},"
                    f"{r['median_ms']:.6g},{r['psnr_db']:.6g},{r['ssim']:.6g}\n"
                )
    return 0


def cmd_metrics(args, cfg: RunConfig) -> int:
    a = load_image(args.a)
    b = load_image(args.b)
    p = metrics.psnr(a, b)
    s = metrics.ssim(a, b)
    print(f"psnr_db={'inf' if math.isinf(p) else f'{p:.4f}'} ssim={s:.6f}")
    return 0


def cmd_footprint(args, cfg: RunConfig) -> int:
    report = communication_footprint(
        h=args.height, w=args.width, s=args.scale or 2,
        L=args.filters, k=args.k if args.k is not None else cfg.get("dict.k", DEFAULT_K),
    )
    print(
        f"phi_elems={report.phi_elems} patch_elems={report.patch_elems} "
        f"dict_elems={report.dict_elems} phi_bytes={report.phi_bytes} "
        f"patch_bytes={report.patch_bytes} dict_bytes={report.dict_bytes} "
        f"dominance_ratio={report.dominance_ratio:.4f}"
    )
    return 0


# --------------------------------------------------------------------------
# argument wiring


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="srde",
        description="Dictionary-learning super-resolution toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value run configuration file")
        p.add_argument("--seed", type=int, help="RNG seed (falls back to SRDE_SEED)")

    p = sub.add_parser("gen-dict", help="build a filter bank file")
    common(p)
    p.add_argument("--k", type=int, help="tap width (odd)")
    p.add_argument("--out", required=True, help="output .srdict path")
    p.set_defaults(func=cmd_gen_dict)

    p = sub.add_parser("upscale", help="run the SR pipeline on one image")
    common(p)
    p.add_argument("--input", required=True, help="input PGM/PPM image")
    p.add_argument("--dict", required=True, help="filter bank file")
    p.add_argument("--weights", required=True, help="predictor weights file")
    p.add_argument("--scale", type=int, help="upscaling factor (2, 3 or 4)")
    p.add_argument("--block", help="NX,NY,NZ, or 'auto' to tune (default: model best)")
    p.add_argument("--workers", type=int, help="engine worker threads")
    p.add_argument("--budget", type=int, help="evaluation budget for --block auto")
    p.add_argument("--out", required=True, help="output PGM path")
    p.add_argument("--timing-csv", help="write per-stage ms breakdown here")
    p.add_argument("--tuning-log", help="write the auto-tune log CSV here")
    p.set_defaults(func=cmd_upscale)

    p = sub.add_parser("prune", help="compress a bank + predictor on HR images")
    common(p)
    p.add_argument("--data", required=True, help="directory of HR PGM/PPM images")
    p.add_argument("--dict", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--alpha", type=float, help="target kept fraction in (0,1)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("tune", help="search block configurations")
    common(p)
    p.add_argument("--dims", help="data volume as HxWxC")
    p.add_argument("--input", help="image whose pipeline dims to tune for")
    p.add_argument("--scale", type=int)
    p.add_argument("--k", type=int, help="tap width for --input dims")
    p.add_argument("--oracle", choices=("measured", "synthetic"))
    p.add_argument("--budget", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", help="tuning log CSV path")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("bench", help="latency/quality sweep")
    common(p)
    p.add_argument("--sizes", help=f"comma list of HxW (default {DEFAULT_BENCH_SIZES})")
    p.add_argument("--scales", help="comma list of scales (default 2,3,4)")
    p.add_argument("--ratios", help=f"comma list (default {DEFAULT_BENCH_RATIOS})")
    p.add_argument("--dict", help="filter bank file (default: built-in bank)")
    p.add_argument("--workers", type=int)
    p.add_argument("--out", help="CSV output path")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("metrics", help="PSNR/SSIM between two images")
    common(p)
    p.add_argument("a")
    p.add_argument("b")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("footprint", help="communication footprint report")
    common(p)
    p.add_argument("--height", type=int, required=True, help="LR height")
    p.add_argument("--width", type=int, required=True, help="LR width")
    p.add_argument("--scale", type=int)
    p.add_argument("--filters", type=int, required=True, help="bank size L")
    p.add_argument("--k", type=int, help="tap width")
    p.set_defaults(func=cmd_footprint)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = RunConfig.load(args.config) if args.config else RunConfig()
        return args.func(args, cfg)
    except (CliError, FormatError, ValueError, OSError) as exc:
        print(json.dumps({"error": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Deterministic convolutional coefficient predictor.

Maps a low-resolution luma image to per-pixel combination coefficients over
the filter bank: a 3x3 conv stem, a few residual blocks, a 3x3 head with
L*s^2 output channels, then pixel-shuffle up to the high-resolution grid.
Outputs are raw linear values; no normalization is applied.

The head's output channels are grouped s^2-contiguously per bank filter
(matching the pixel-shuffle layout), which is what makes channel-wise
rescaling and pruning equivalent to post-hoc scaling of the predicted
coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .formats import Reader, pack_u32
from .rng import Rng
from .tensor import Tensor, conv2d, pixel_shuffle

WEIGHTS_MAGIC = b"SRNET001"

DEFAULT_HIDDEN = 16
DEFAULT_BLOCKS = 2


@dataclass(frozen=True)
class ConvLayer:
    weights: Tensor  # (out_c, in_c, kh, kw)
    bias: np.ndarray  # (out_c,) float32
    relu: bool

    def __post_init__(self):
        bias = np.ascontiguousarray(self.bias, dtype=np.float32)
        if bias.shape != (self.weights.n,):
            raise ValueError(
                f"bias length {bias.shape} does not match out_c={self.weights.n}"
            )
        bias.flags.writeable = False
        object.__setattr__(self, "bias", bias)

    @property
    def out_c(self) -> int:
        return self.weights.n

    @property
    def in_c(self) -> int:
        return self.weights.c


@dataclass(frozen=True)
class PredictorWeights:
    """Ordered conv layers plus the architecture needed to run them.

    Layer list layout: stem, then two convs per residual block, then the
    head. `res_blocks == 0` with a single layer is allowed for hand-built
    predictors.
    """

    layers: tuple[ConvLayer, ...]
    scale: int
    coeff_count: int  # L: bank filters predicted per pixel
    hidden: int
    res_blocks: int

    def __post_init__(self):
        if self.scale < 1:
            raise ValueError("scale must be >= 1")
        if not self.layers:
            raise ValueError("predictor needs at least one layer")
        expected = 1 if len(self.layers) == 1 else 2 * self.res_blocks + 2
        if len(self.layers) != expected:
            raise ValueError(
                f"expected {expected} layers for {self.res_blocks} residual "
                f"blocks, got {len(self.layers)}"
            )
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_c != nxt.in_c:
                raise ValueError(
                    f"layer channel mismatch: {prev.out_c} feeds {nxt.in_c}"
                )
        head = self.layers[-1]
        if head.out_c != self.coeff_count * self.scale**2:
            raise ValueError(
                f"head out_c={head.out_c} must equal "
                f"L*s^2={self.coeff_count * self.scale ** 2}"
            )


def random_init(seed: int, s: int, L: int, C: int = DEFAULT_HIDDEN,
                R_b: int = DEFAULT_BLOCKS) -> PredictorWeights:
    """Seeded uniform init: weights in +-sqrt(6 / (in_c*kh*kw)), zero biases."""
    if min(s, L, C, R_b) < 1:
        raise ValueError("all architecture parameters must be positive")
    rng = Rng(seed)

    def make_layer(out_c: int, in_c: int, relu: bool) -> ConvLayer:
        bound = float(np.sqrt(6.0 / (in_c * 9)))
        w = np.empty(out_c * in_c * 9, dtype=np.float32)
        for i in range(w.size):
            w[i] = bound * (2.0 * rng.next_float() - 1.0)
        return ConvLayer(
            weights=Tensor(w.reshape(out_c, in_c, 3, 3)),
            bias=np.zeros(out_c, dtype=np.float32),
            relu=relu,
        )

    layers = [make_layer(C, 1, relu=True)]
    for _ in range(R_b):
        layers.append(make_layer(C, C, relu=True))
        layers.append(make_layer(C, C, relu=False))
    layers.append(make_layer(L * s * s, C, relu=False))
    return PredictorWeights(
        layers=tuple(layers), scale=s, coeff_count=L, hidden=C, res_blocks=R_b
    )


def _run_layer(x: Tensor, layer: ConvLayer) -> Tensor:
    return conv2d(x, layer.weights, layer.bias, "relu" if layer.relu else "none")


def predict_coefficients(x: Tensor, w: PredictorWeights) -> Tensor:
    """Forward pass then pixel-shuffle; output has L channels on the HR grid."""
    if x.c != 1:
        raise ValueError(f"expected single-channel input, got c={x.c}")
    if len(w.layers) == 1:
        out = _run_layer(x, w.layers[0])
        return pixel_shuffle(out, w.scale)
    act = _run_layer(x, w.layers[0])
    for b in range(w.res_blocks):
        t = _run_layer(act, w.layers[1 + 2 * b])
        t = _run_layer(t, w.layers[2 + 2 * b])
        act = Tensor(act.data + t.data)
    out = _run_layer(act, w.layers[-1])
    return pixel_shuffle(out, w.scale)


def scale_output_channels(
    w: PredictorWeights, gamma: np.ndarray | list[float], keep
) -> PredictorWeights:
    """Rescale surviving head channel groups and drop the pruned ones.

    `gamma[i]` multiplies the s^2 head channels of bank filter i; filters
    not in `keep` are removed. Predicting with the result equals selecting
    and scaling channels of the original prediction.
    """
    gamma = np.asarray(gamma, dtype=np.float64)
    if gamma.shape != (w.coeff_count,):
        raise ValueError(
            f"gamma must have length {w.coeff_count}, got shape {gamma.shape}"
        )
    keep = list(keep)
    if not keep:
        raise ValueError("keep must be non-empty")
    if any(not 0 <= i < w.coeff_count for i in keep):
        raise ValueError("keep indices out of range")
    if len(set(keep)) != len(keep):
        raise ValueError("keep indices must be distinct")

    head = w.layers[-1]
    g = head.weights.data.reshape(
        w.coeff_count, w.scale**2, head.in_c, 3, 3
    ).astype(np.float64)
    b = head.bias.reshape(w.coeff_count, w.scale**2).astype(np.float64)
    new_w = (g[keep] * gamma[keep, None, None, None, None]).astype(np.float32)
    new_b = (b[keep] * gamma[keep, None]).astype(np.float32)
    out_c = len(keep) * w.scale**2
    new_head = ConvLayer(
        weights=Tensor(new_w.reshape(out_c, head.in_c, 3, 3)),
        bias=new_b.reshape(out_c),
        relu=head.relu,
    )
    return PredictorWeights(
        layers=w.layers[:-1] + (new_head,),
        scale=w.scale,
        coeff_count=len(keep),
        hidden=w.hidden,
        res_blocks=w.res_blocks,
    )


def save_weights(w: PredictorWeights, path) -> None:
    """SRNET001 container: magic; u32 s, L, C, R_b; per-layer dims + payload."""
    with open(path, "wb") as f:
        f.write(WEIGHTS_MAGIC)
        f.write(pack_u32(w.scale, w.coeff_count, w.hidden, w.res_blocks))
        for layer in w.layers:
            out_c, in_c, kh, kw = layer.weights.data.shape
            f.write(pack_u32(out_c, in_c, kh, kw))
            f.write(layer.weights.data.astype("<f4").tobytes())
            f.write(layer.bias.astype("<f4").tobytes())


def load_weights(path) -> PredictorWeights:
    with open(path, "rb") as f:
        r = Reader(f.read(), name=str(path))
    r.expect_magic(WEIGHTS_MAGIC)
    s = r.u32("scale")
    L = r.u32("coeff count")
    C = r.u32("hidden width")
    R_b = r.u32("residual block count")
    n_layers = 2 * R_b + 2 if R_b else 1
    layers = []
    for idx in range(n_layers):
        dims = [r.u32(f"layer {idx} dim") for _ in range(4)]
        out_c, in_c, kh, kw = dims
        wblock = r.f32_block(out_c * in_c * kh * kw, f"layer {idx} weights")
        bblock = r.f32_block(out_c, f"layer {idx} bias")
        if idx == 0:
            relu = n_layers > 1
        elif idx == n_layers - 1:
            relu = False
        else:
            relu = (idx % 2) == 1
        layers.append(
            ConvLayer(
                weights=Tensor(
                    np.frombuffer(wblock, dtype="<f4")
                    .reshape(out_c, in_c, kh, kw)
                    .copy()
                ),
                bias=np.frombuffer(bblock, dtype="<f4").copy(),
                relu=relu,
            )
        )
    r.expect_eof()
    return PredictorWeights(
        layers=tuple(layers), scale=s, coeff_count=L, hidden=C, res_blocks=R_b
    )

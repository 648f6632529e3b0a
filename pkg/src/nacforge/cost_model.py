"""Analytic bit-operation (BOPs) cost model.

Per-layer formulas parameterized by weight/activation bit widths and weight
density p (density = 1 - sparsity).  Normalization, activations, flatten and
pooling are costed at zero: the accounting covers MAC-bearing layers, so
totals are comparable across candidates rather than absolute hardware
numbers.  All functions are pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .arch_ir import (
    SET_CLASSIFICATION,
    SET_SIZE,
    ArchDescriptor,
    BatchNorm,
    Conv2d,
    ConvAttention,
    Linear,
    infer_shapes,
)
from .errors import DomainError

PUBLISHED_BIT_WIDTHS = (4, 8, 16, 32)


@dataclass(frozen=True)
class BitConfig:
    """Weight/activation bit precisions; published widths unless custom()."""

    weight_bits: int
    act_bits: int

    def __post_init__(self):
        for b in (self.weight_bits, self.act_bits):
            if b not in PUBLISHED_BIT_WIDTHS:
                raise DomainError(
                    f"bit width {b} not in {PUBLISHED_BIT_WIDTHS}; use BitConfig.custom()"
                )

    @classmethod
    def custom(cls, weight_bits: int, act_bits: int) -> "BitConfig":
        """Bypass the published-set check for nonstandard precisions."""
        if weight_bits < 1 or act_bits < 1:
            raise DomainError("bit widths must be >= 1")
        obj = object.__new__(cls)
        object.__setattr__(obj, "weight_bits", weight_bits)
        object.__setattr__(obj, "act_bits", act_bits)
        return obj


@dataclass(frozen=True)
class SparsityProfile:
    """Per-layer weight density p in [0, 1]; unlisted layers are dense."""

    density: dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        for i, p in self.density.items():
            if not 0.0 <= p <= 1.0:
                raise DomainError(f"layer {i}: density {p} outside [0, 1]")

    def for_layer(self, index: int) -> float:
        return self.density.get(index, 1.0)


DENSE = SparsityProfile()


@dataclass(frozen=True)
class LayerBops:
    index: int
    layer_type: str
    bops: float


@dataclass(frozen=True)
class BopsReport:
    layers: tuple[LayerBops, ...]
    total: float


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise DomainError(msg)


def bops_linear(m: int, n: int, b_a: float, b_w: float, p: float) -> float:
    """m output features, n input features, density p."""
    _require(m >= 1 and n >= 1, f"features must be >= 1, got m={m}, n={n}")
    _require(b_a >= 1 and b_w >= 1, f"bit widths must be >= 1, got b_a={b_a}, b_w={b_w}")
    _require(0.0 <= p <= 1.0, f"density must be in [0, 1], got {p}")
    return m * n * (p * b_a * b_w + b_a + b_w + math.log2(n))


def bops_conv2d(m: int, n: int, k: int, b_a: float, b_w: float, p: float) -> float:
    """m output channels, n input channels, kernel size k, density p."""
    _require(m >= 1 and n >= 1, f"channels must be >= 1, got m={m}, n={n}")
    _require(k >= 1, f"kernel must be >= 1, got {k}")
    _require(b_a >= 1 and b_w >= 1, f"bit widths must be >= 1, got b_a={b_a}, b_w={b_w}")
    _require(0.0 <= p <= 1.0, f"density must be in [0, 1], got {p}")
    return m * n * k * k * (p * b_a * b_w + b_a + b_w + math.log2(n * k * k))


def bops_softmax(b: int, h: int, w: int, b_w: float) -> float:
    """Softmax over h*w positions: exponentials, summation, division."""
    _require(b >= 1 and h >= 1 and w >= 1, f"dims must be >= 1, got b={b}, h={h}, w={w}")
    _require(b_w >= 1, f"bit width must be >= 1, got {b_w}")
    hw = h * w
    return 1.5 * b * hw * hw * (b_w - 1) + b * hw * (hw - 1) + b * hw * hw


def bops_matmul(b: int, m: int, n: int, out_p: int, b_w: float) -> float:
    """Batched (b, m, n) @ (b, n, out_p).  out_p is a dimension, not density."""
    _require(b >= 1 and m >= 1 and n >= 1 and out_p >= 1,
             f"dims must be >= 1, got b={b}, m={m}, n={n}, out_p={out_p}")
    _require(b_w >= 1, f"bit width must be >= 1, got {b_w}")
    return b * m * n * (out_p * b_w * b_w + b_w * (math.log2(n) + 1))


def bops_conv_attention(b: int, c: int, h: int, w: int, d: int, k: int,
                        b_a: float, b_w: float, p: float) -> float:
    """Attention block: q/k/v/projection convs + softmax + QK and SV matmuls.

    QK multiplies (b, hw, d) by (b, d, hw); SV multiplies the (b, hw, hw)
    attention map by (b, hw, d).
    """
    hw = h * w
    qkv = 3 * bops_conv2d(d, c, k, b_a, b_w, p)
    proj = bops_conv2d(c, d, k, b_a, b_w, p)
    smax = bops_softmax(b, h, w, b_w)
    qk = bops_matmul(b, hw, d, hw, b_w)
    sv = bops_matmul(b, hw, hw, d, b_w)
    return qkv + proj + smax + qk + sv


def bops_model(arch: ArchDescriptor, bits: BitConfig,
               sparsity: SparsityProfile = DENSE,
               per_layer_bits: dict[int, BitConfig] | None = None) -> BopsReport:
    """Whole-model report; needs consistent shapes, not task-level validity.

    Per-element layers of a set task (index < phi_len) are charged once per
    set slot since the shared network runs on all 8 slots.  `per_layer_bits`
    overrides the global config for chosen layer indices (mixed precision).
    """
    shapes = infer_shapes(arch)
    per_layer_bits = per_layer_bits or {}
    entries: list[LayerBops] = []
    total = 0.0
    for i, layer in enumerate(arch.layers):
        cfg = per_layer_bits.get(i, bits)
        b_a, b_w = cfg.act_bits, cfg.weight_bits
        p = sparsity.for_layer(i)
        if isinstance(layer, Conv2d):
            cost = bops_conv2d(layer.out_ch, layer.in_ch, layer.kernel, b_a, b_w, p)
        elif isinstance(layer, Linear):
            cost = bops_linear(layer.out_dim, layer.in_dim, b_a, b_w, p)
        elif isinstance(layer, ConvAttention):
            in_shape = shapes[i - 1] if i > 0 else tuple(arch.input_shape)
            _, h, w = in_shape
            cost = bops_conv_attention(1, layer.channels, h, w, layer.qkv_dim, 1,
                                       b_a, b_w, p)
        else:
            cost = 0.0
        if arch.task == SET_CLASSIFICATION and i < arch.phi_len:
            cost *= SET_SIZE
        entries.append(LayerBops(i, type(layer).__name__, cost))
        total += cost
    return BopsReport(tuple(entries), total)


def megabops(bops: float) -> float:
    """Totals are reported in MegaBOPs with 3 decimal places."""
    return round(bops / 1e6, 3)

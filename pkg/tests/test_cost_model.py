"""Cost-model tests: every formula against an independent scalar oracle."""

import math

import numpy as np
import pytest

from nacforge import arch_ir as ir
from nacforge.cost_model import (
    DENSE,
    BitConfig,
    SparsityProfile,
    bops_conv2d,
    bops_conv_attention,
    bops_linear,
    bops_matmul,
    bops_model,
    bops_softmax,
)
from nacforge.errors import DomainError


# Oracle reimplementation: plain scalar arithmetic, written directly from the
# closed-form definitions, kept independent of the module under test.

def oracle_linear(m, n, ba, bw, p):
    return m * n * (p * ba * bw + ba + bw + math.log(n, 2))


def oracle_conv(m, n, k, ba, bw, p):
    return m * n * k * k * (p * ba * bw + ba + bw + math.log(n * k * k, 2))


def oracle_softmax(b, h, w, bw):
    hw = h * w
    return 1.5 * b * hw**2 * (bw - 1) + b * hw * (hw - 1) + b * hw**2


def oracle_matmul(b, m, n, out_p, bw):
    return b * m * n * (out_p * bw**2 + bw * (math.log(n, 2) + 1))


def oracle_attention(b, c, h, w, d, k, ba, bw, p):
    hw = h * w
    return (3 * oracle_conv(d, c, k, ba, bw, p) + oracle_conv(c, d, k, ba, bw, p)
            + oracle_softmax(b, h, w, bw)
            + oracle_matmul(b, hw, d, hw, bw) + oracle_matmul(b, hw, hw, d, bw))


def test_trivial_anchors():
    assert bops_linear(1, 1, 1, 1, 1) == 3.0
    assert bops_conv2d(1, 1, 1, 1, 1, 1) == 3.0
    assert bops_softmax(1, 1, 1, 2) == 2.5
    assert bops_matmul(1, 1, 1, 1, 1) == 2.0
    assert bops_conv_attention(1, 1, 1, 1, 1, 1, 1, 1, 1) == 17.0


def test_derived_values():
    assert bops_linear(32, 648, 8, 8, 1) == pytest.approx(1852551.1296603, rel=1e-9)
    assert bops_linear(1, 2, 4, 4, 0) == 18.0
    assert bops_conv2d(8, 1, 3, 8, 8, 1) == pytest.approx(5988.2346, rel=1e-6)
    assert bops_softmax(1, 3, 3, 8) == 1003.5
    assert bops_matmul(1, 81, 16, 81, 8) == 6770304.0


def test_formulas_match_oracle_on_random_inputs():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        m, n, k = rng.integers(1, 200), rng.integers(1, 200), rng.integers(1, 8)
        b, h, w, d = rng.integers(1, 5), rng.integers(1, 12), rng.integers(1, 12), rng.integers(1, 65)
        ba, bw = int(rng.choice([1, 2, 4, 8, 16, 32])), int(rng.choice([1, 2, 4, 8, 16, 32]))
        p = float(rng.uniform(0, 1))
        m, n, k, b, h, w, d = map(int, (m, n, k, b, h, w, d))
        assert bops_linear(m, n, ba, bw, p) == pytest.approx(
            oracle_linear(m, n, ba, bw, p), rel=1e-12)
        assert bops_conv2d(m, n, k, ba, bw, p) == pytest.approx(
            oracle_conv(m, n, k, ba, bw, p), rel=1e-12)
        assert bops_softmax(b, h, w, bw) == pytest.approx(
            oracle_softmax(b, h, w, bw), rel=1e-12)
        assert bops_matmul(b, m, n, d, bw) == pytest.approx(
            oracle_matmul(b, m, n, d, bw), rel=1e-12)
        assert bops_conv_attention(b, m, h, w, d, k, ba, bw, p) == pytest.approx(
            oracle_attention(b, m, h, w, d, k, ba, bw, p), rel=1e-12)


def test_conv_k1_equals_linear():
    rng = np.random.default_rng(3)
    for _ in range(50):
        m, n = int(rng.integers(1, 100)), int(rng.integers(1, 100))
        ba, bw, p = 8, 4, float(rng.uniform(0, 1))
        assert bops_conv2d(m, n, 1, ba, bw, p) == bops_linear(m, n, ba, bw, p)


def test_monotone_in_every_argument():
    base = dict(m=4, n=16, k=3, ba=8, bw=8, p=0.5)
    ref_lin = bops_linear(base["m"], base["n"], base["ba"], base["bw"], base["p"])
    ref_conv = bops_conv2d(base["m"], base["n"], base["k"], base["ba"], base["bw"], base["p"])
    for bump in ("m", "n", "ba", "bw", "p"):
        args = dict(base)
        args[bump] = args[bump] + (0.25 if bump == "p" else 1)
        assert bops_linear(args["m"], args["n"], args["ba"], args["bw"], args["p"]) >= ref_lin
        assert bops_conv2d(args["m"], args["n"], args["k"], args["ba"], args["bw"], args["p"]) >= ref_conv
    assert bops_conv2d(4, 16, 4, 8, 8, 0.5) >= ref_conv


def test_attention_monotone_in_hidden_dim():
    prev = 0.0
    for d in range(1, 65):
        cur = bops_conv_attention(1, 8, 9, 9, d, 1, 8, 8, 1.0)
        assert cur >= prev
        prev = cur


def test_softmax_first_term_vanishes_at_one_bit():
    b, h, w = 2, 3, 3
    hw = h * w
    assert bops_softmax(b, h, w, 1) == b * hw * (hw - 1) + b * hw**2


def test_matmul_linear_in_batch():
    one = bops_matmul(1, 5, 7, 3, 8)
    for b in (2, 3, 10):
        assert bops_matmul(b, 5, 7, 3, 8) == pytest.approx(b * one, rel=1e-12)


def test_domain_errors():
    with pytest.raises(DomainError):
        bops_linear(0, 1, 1, 1, 1)
    with pytest.raises(DomainError):
        bops_linear(1, 1, 0, 1, 1)
    with pytest.raises(DomainError):
        bops_linear(1, 1, 1, 1, 1.5)
    with pytest.raises(DomainError):
        bops_conv2d(1, 1, 0, 1, 1, 1)
    with pytest.raises(DomainError):
        bops_softmax(0, 1, 1, 2)
    with pytest.raises(DomainError):
        bops_matmul(1, 1, 1, 0, 1)


def test_bit_config_published_set_only():
    BitConfig(8, 8)
    with pytest.raises(DomainError):
        BitConfig(5, 8)
    custom = BitConfig.custom(1, 1)
    assert custom.weight_bits == 1 and custom.act_bits == 1


def test_model_single_linear_total_3():
    arch = ir.ArchDescriptor(ir.PATCH_REGRESSION, (ir.Linear(1, 1),), (1,))
    report = bops_model(arch, BitConfig.custom(1, 1))
    assert report.total == 3.0
    assert report.layers[0].layer_type == "Linear"


def test_bragg_tiny_pinned_regression_value():
    arch = ir.builtin_model("bragg_tiny")
    report = bops_model(arch, BitConfig(32, 32))
    # Frozen from the standalone oracle evaluation of the five formulas.
    assert report.total == pytest.approx(25141419.364260, rel=1e-9)
    assert report.total == pytest.approx(sum(e.bops for e in report.layers), rel=1e-12)


def test_deepsets_fixture_ordering():
    totals = [bops_model(ir.builtin_model(f"deepsets_{s}"), BitConfig(32, 32)).total
              for s in ("tiny", "small", "medium", "large")]
    assert totals[0] < totals[1] < totals[2] < totals[3]


def test_phi_layers_charged_per_set_slot():
    arch = ir.builtin_model("deepsets_tiny")
    report = bops_model(arch, BitConfig(8, 8))
    # Layer 0 is phi's Linear(3, 8): shared weights run on each of 8 slots.
    assert report.layers[0].bops == pytest.approx(8 * bops_linear(8, 3, 8, 8, 1.0), rel=1e-12)
    # Pool and normalization layers cost nothing.
    assert report.layers[arch.phi_len].bops == 0.0


def test_zero_cost_layers():
    arch = ir.builtin_model("bragg_small")
    report = bops_model(arch, BitConfig(8, 8))
    for entry, layer in zip(report.layers, arch.layers):
        if isinstance(layer, (ir.BatchNorm, ir.Activation, ir.Flatten)):
            assert entry.bops == 0.0


def test_sparsity_strictly_reduces_total():
    arch = ir.builtin_model("deepsets_medium")
    dense = bops_model(arch, BitConfig(8, 8), DENSE).total
    half = SparsityProfile({i: 0.5 for i in range(len(arch.layers))})
    assert bops_model(arch, BitConfig(8, 8), half).total < dense


def test_per_layer_bit_override():
    arch = ir.builtin_model("deepsets_tiny")
    base = bops_model(arch, BitConfig(8, 8))
    mixed = bops_model(arch, BitConfig(8, 8), per_layer_bits={0: BitConfig(4, 4)})
    assert mixed.total < base.total
    assert mixed.layers[1].bops == base.layers[1].bops


def test_attention_in_model_uses_incoming_spatial_dims():
    arch = ir.ArchDescriptor(
        ir.PATCH_REGRESSION,
        (ir.Conv2d(1, 8, 3), ir.ConvAttention(8, 16), ir.Flatten(),
         ir.Linear(8 * 9 * 9, 2)),
        ir.PATCH_INPUT_SHAPE,
    )
    report = bops_model(arch, BitConfig(8, 8))
    expected = bops_conv_attention(1, 8, 9, 9, 16, 1, 8, 8, 1.0)
    assert report.layers[1].bops == pytest.approx(expected, rel=1e-12)

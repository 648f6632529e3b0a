"""Architecture intermediate representation.

Sequential layer lists with shape inference, validation, parameter counting,
a JSON wire format, and the nine published reference models as fixtures.
Descriptors are frozen dataclasses: safe to share across worker processes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Union

from .errors import NonPositiveDim, ShapeMismatch, UnknownModel

# Negative slope used by every LeakyReLU in the reference models (2**-7,
# exactly representable, hardware-friendly shift).
LEAKY_SLOPE = 1.0 / 128.0

PATCH_REGRESSION = "PatchRegression"
SET_CLASSIFICATION = "SetClassification"

ACTIVATION_KINDS = ("ReLU", "LeakyReLU", "None")
POOL_KINDS = ("Mean", "Max", "Sum")

# Output head width per task: (x, y) regression vs 5-way classification.
HEAD_DIM = {PATCH_REGRESSION: 2, SET_CLASSIFICATION: 5}

PATCH_INPUT_SHAPE = (1, 11, 11)
SET_INPUT_SHAPE = (8, 3)
SET_SIZE = 8


def _check_count(value: int, name: str) -> None:
    if not isinstance(value, int) or isinstance(value, bool) or value < 1:
        raise ValueError(f"{name} must be an integer >= 1, got {value!r}")


@dataclass(frozen=True)
class Conv2d:
    in_ch: int
    out_ch: int
    kernel: int
    stride: int = 1

    def __post_init__(self):
        _check_count(self.in_ch, "in_ch")
        _check_count(self.out_ch, "out_ch")
        if self.kernel not in (1, 3):
            raise ValueError(f"kernel must be 1 or 3, got {self.kernel}")
        if self.stride != 1:
            raise ValueError(f"stride must be 1, got {self.stride}")


@dataclass(frozen=True)
class Linear:
    in_dim: int
    out_dim: int

    def __post_init__(self):
        _check_count(self.in_dim, "in_dim")
        _check_count(self.out_dim, "out_dim")


@dataclass(frozen=True)
class BatchNorm:
    channels: int

    def __post_init__(self):
        _check_count(self.channels, "channels")


@dataclass(frozen=True)
class Activation:
    kind: str
    slope: float = LEAKY_SLOPE  # used only when kind == "LeakyReLU"

    def __post_init__(self):
        if self.kind not in ACTIVATION_KINDS:
            raise ValueError(f"unknown activation kind {self.kind!r}")


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class ConvAttention:
    """Single-head attention over spatial positions.

    Built from four 1x1 convolutions (query, key, value, output projection)
    plus a residual skip whose activation is configurable.
    """

    channels: int
    qkv_dim: int
    skip_act: Activation = field(default_factory=lambda: Activation("None"))

    def __post_init__(self):
        _check_count(self.channels, "channels")
        _check_count(self.qkv_dim, "qkv_dim")


@dataclass(frozen=True)
class SetPool:
    kind: str

    def __post_init__(self):
        if self.kind not in POOL_KINDS:
            raise ValueError(f"unknown pool kind {self.kind!r}")


LayerSpec = Union[Conv2d, Linear, BatchNorm, Activation, Flatten, ConvAttention, SetPool]


@dataclass(frozen=True)
class ArchDescriptor:
    """One candidate network: an ordered layer list plus task metadata.

    For set tasks, layers[:phi_len] form the per-element network, applied
    with shared weights to each of the 8 set slots; layers[phi_len] must be
    the SetPool; the remainder operates on the pooled embedding.
    """

    task: str
    layers: tuple[LayerSpec, ...]
    input_shape: tuple[int, ...]
    phi_len: int = 0

    def __post_init__(self):
        if self.task not in HEAD_DIM:
            raise ValueError(f"unknown task {self.task!r}")
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(self.input_shape))


def infer_shapes(arch: ArchDescriptor) -> list[tuple[int, ...]]:
    """Return the output shape of every layer (batch dim excluded).

    Conv shapes are (channels, H, W); set shapes are (set, features) until
    the pool collapses them; flat shapes are (features,).  Convolutions use
    stride 1 and no padding, so kernel k maps H -> H - k + 1.
    """
    if not arch.layers:
        raise ShapeMismatch("architecture has no layers")
    shapes: list[tuple[int, ...]] = []
    cur = tuple(arch.input_shape)
    for i, layer in enumerate(arch.layers):
        if isinstance(layer, Conv2d):
            if len(cur) != 3:
                raise ShapeMismatch(f"layer {i}: Conv2d needs (C,H,W), got {cur}")
            c, h, w = cur
            if layer.in_ch != c:
                raise ShapeMismatch(f"layer {i}: Conv2d in_ch {layer.in_ch} != {c}")
            nh, nw = h - layer.kernel + 1, w - layer.kernel + 1
            if nh <= 0 or nw <= 0:
                raise NonPositiveDim(f"layer {i}: spatial size {nh}x{nw}")
            cur = (layer.out_ch, nh, nw)
        elif isinstance(layer, Linear):
            if layer.in_dim != cur[-1] or len(cur) > 2:
                raise ShapeMismatch(f"layer {i}: Linear in_dim {layer.in_dim} vs shape {cur}")
            cur = cur[:-1] + (layer.out_dim,)
        elif isinstance(layer, BatchNorm):
            if layer.channels != cur[0 if len(cur) == 3 else -1]:
                raise ShapeMismatch(f"layer {i}: BatchNorm channels {layer.channels} vs shape {cur}")
        elif isinstance(layer, Activation):
            pass
        elif isinstance(layer, Flatten):
            n = 1
            for d in cur:
                n *= d
            cur = (n,)
        elif isinstance(layer, ConvAttention):
            if len(cur) != 3:
                raise ShapeMismatch(f"layer {i}: ConvAttention needs (C,H,W), got {cur}")
            if layer.channels != cur[0]:
                raise ShapeMismatch(f"layer {i}: ConvAttention channels {layer.channels} != {cur[0]}")
        elif isinstance(layer, SetPool):
            if len(cur) != 2:
                raise ShapeMismatch(f"layer {i}: SetPool needs (set, features), got {cur}")
            cur = (cur[1],)
        else:  # pragma: no cover - exhaustive over LayerSpec
            raise ShapeMismatch(f"layer {i}: unknown layer {layer!r}")
        shapes.append(cur)
    return shapes


def count_params(arch: ArchDescriptor) -> int:
    """Trainable parameter count: conv/linear weights+biases, 2 per BN channel."""
    infer_shapes(arch)
    total = 0
    for layer in arch.layers:
        if isinstance(layer, Conv2d):
            total += layer.out_ch * layer.in_ch * layer.kernel**2 + layer.out_ch
        elif isinstance(layer, Linear):
            total += layer.out_dim * layer.in_dim + layer.out_dim
        elif isinstance(layer, BatchNorm):
            total += 2 * layer.channels
        elif isinstance(layer, ConvAttention):
            c, d = layer.channels, layer.qkv_dim
            total += 3 * (d * c + d) + (c * d + c)  # q, k, v, projection 1x1 convs
    return total


def validate(arch: ArchDescriptor) -> list[str]:
    """Collect every structural violation; an empty list means valid."""
    problems: list[str] = []
    try:
        shapes = infer_shapes(arch)
    except (ShapeMismatch, NonPositiveDim) as err:
        return [str(err)]

    out = shapes[-1]
    head = HEAD_DIM[arch.task]
    if out != (head,):
        problems.append(f"head dim {out} != {head} for {arch.task}")

    pool_positions = [i for i, l in enumerate(arch.layers) if isinstance(l, SetPool)]
    if arch.task == SET_CLASSIFICATION:
        if len(pool_positions) != 1:
            problems.append(f"set task needs exactly one SetPool, found {len(pool_positions)}")
        elif pool_positions[0] != arch.phi_len:
            problems.append(f"SetPool at layer {pool_positions[0]} but phi_len={arch.phi_len}")
        if tuple(arch.input_shape) != SET_INPUT_SHAPE:
            problems.append(f"set task input shape {arch.input_shape} != {SET_INPUT_SHAPE}")
    else:
        if pool_positions:
            problems.append("SetPool is only valid in set-task architectures")
        if arch.phi_len != 0:
            problems.append(f"phi_len must be 0 for {arch.task}")
        if tuple(arch.input_shape) != PATCH_INPUT_SHAPE:
            problems.append(f"patch task input shape {arch.input_shape} != {PATCH_INPUT_SHAPE}")
    return problems


# --------------------------------------------------------------------------
# JSON wire format: {task, input_shape, phi_len, layers:[{type, ...fields}]}
# --------------------------------------------------------------------------

def _act_to_json(act: Activation) -> dict:
    d = {"kind": act.kind}
    if act.kind == "LeakyReLU":
        d["slope"] = act.slope
    return d


def _act_from_json(d: dict) -> Activation:
    if d.get("kind") == "LeakyReLU":
        return Activation("LeakyReLU", float(d.get("slope", LEAKY_SLOPE)))
    return Activation(d["kind"])


def layer_to_json(layer: LayerSpec) -> dict:
    if isinstance(layer, Conv2d):
        return {"type": "Conv2d", "in_ch": layer.in_ch, "out_ch": layer.out_ch,
                "kernel": layer.kernel, "stride": layer.stride}
    if isinstance(layer, Linear):
        return {"type": "Linear", "in_dim": layer.in_dim, "out_dim": layer.out_dim}
    if isinstance(layer, BatchNorm):
        return {"type": "BatchNorm", "channels": layer.channels}
    if isinstance(layer, Activation):
        return {"type": "Activation", **_act_to_json(layer)}
    if isinstance(layer, Flatten):
        return {"type": "Flatten"}
    if isinstance(layer, ConvAttention):
        return {"type": "ConvAttention", "channels": layer.channels,
                "qkv_dim": layer.qkv_dim, "skip_act": _act_to_json(layer.skip_act)}
    if isinstance(layer, SetPool):
        return {"type": "SetPool", "kind": layer.kind}
    raise TypeError(f"not a layer: {layer!r}")


def layer_from_json(d: dict) -> LayerSpec:
    t = d.get("type")
    if t == "Conv2d":
        return Conv2d(d["in_ch"], d["out_ch"], d["kernel"], d.get("stride", 1))
    if t == "Linear":
        return Linear(d["in_dim"], d["out_dim"])
    if t == "BatchNorm":
        return BatchNorm(d["channels"])
    if t == "Activation":
        return _act_from_json(d)
    if t == "Flatten":
        return Flatten()
    if t == "ConvAttention":
        return ConvAttention(d["channels"], d["qkv_dim"], _act_from_json(d["skip_act"]))
    if t == "SetPool":
        return SetPool(d["kind"])
    raise ValueError(f"unknown layer type {t!r}")


def arch_to_json(arch: ArchDescriptor) -> dict:
    return {
        "task": arch.task,
        "input_shape": list(arch.input_shape),
        "phi_len": arch.phi_len,
        "layers": [layer_to_json(l) for l in arch.layers],
    }


def arch_from_json(d: dict) -> ArchDescriptor:
    return ArchDescriptor(
        task=d["task"],
        layers=tuple(layer_from_json(l) for l in d["layers"]),
        input_shape=tuple(d["input_shape"]),
        phi_len=int(d.get("phi_len", 0)),
    )


def dumps(arch: ArchDescriptor) -> str:
    return json.dumps(arch_to_json(arch), indent=2, sort_keys=True)


def loads(text: str) -> ArchDescriptor:
    return arch_from_json(json.loads(text))


# --------------------------------------------------------------------------
# Published reference models
# --------------------------------------------------------------------------

def _relu() -> Activation:
    return Activation("ReLU")


def _leaky() -> Activation:
    return Activation("LeakyReLU")


def _bragg(layers: list[LayerSpec]) -> ArchDescriptor:
    return ArchDescriptor(PATCH_REGRESSION, tuple(layers), PATCH_INPUT_SHAPE, 0)


def _deepsets(phi: list[LayerSpec], rho: list[LayerSpec]) -> ArchDescriptor:
    # Table lists only the MLPs; Mean is used as the aggregator for fixtures
    # (it carries no parameters, so published parameter counts are unaffected).
    layers = tuple(phi) + (SetPool("Mean"),) + tuple(rho)
    return ArchDescriptor(SET_CLASSIFICATION, layers, SET_INPUT_SHAPE, len(phi))


def _builtin_registry() -> dict[str, ArchDescriptor]:
    return {
        "bragg_tiny": _bragg([
            Conv2d(1, 8, 3), Flatten(),
            Linear(8 * 9 * 9, 32), _leaky(),
            Linear(32, 32), _leaky(),
            Linear(32, 32), BatchNorm(32), _leaky(),
            Linear(32, 2), BatchNorm(2),
        ]),
        "bragg_small": _bragg([
            Conv2d(1, 8, 3), Conv2d(8, 2, 3), _leaky(),
            Conv2d(2, 4, 3), BatchNorm(4), _leaky(), Flatten(),
            Linear(4 * 5 * 5, 64), BatchNorm(64), _leaky(),
            Linear(64, 32), BatchNorm(32), _relu(),
            Linear(32, 16), BatchNorm(16), _leaky(),
            Linear(16, 2), BatchNorm(2),
        ]),
        "bragg_medium": _bragg([
            Conv2d(1, 8, 3), Conv2d(8, 16, 3), BatchNorm(16), _relu(),
            Conv2d(16, 4, 3), BatchNorm(4), _leaky(), Flatten(),
            Linear(4 * 5 * 5, 64), _leaky(),
            Linear(64, 64), _leaky(),
            Linear(64, 16), BatchNorm(16), _leaky(),
            Linear(16, 2), BatchNorm(2),
        ]),
        "bragg_large": _bragg([
            Conv2d(1, 8, 3), Conv2d(8, 64, 3), BatchNorm(64),
            Conv2d(64, 32, 3), BatchNorm(32), Flatten(),
            Linear(5 * 5 * 32, 32), _leaky(),
            Linear(32, 64), _relu(),
            Linear(64, 64), BatchNorm(64), _leaky(),
            Linear(64, 2), BatchNorm(2),
        ]),
        "deepsets_tiny": _deepsets(
            [Linear(3, 8), BatchNorm(8), _relu(), Linear(8, 8)],
            [Linear(8, 32), _relu(), Linear(32, 5)],
        ),
        "deepsets_small": _deepsets(
            [Linear(3, 16), _leaky(), Linear(16, 8), BatchNorm(8)],
            [Linear(8, 8), BatchNorm(8), _relu(), Linear(8, 16), _leaky(),
             Linear(16, 16), _leaky(), Linear(16, 5), BatchNorm(5)],
        ),
        "deepsets_medium": _deepsets(
            [Linear(3, 32), _relu(), Linear(32, 8)],
            [Linear(8, 32), BatchNorm(32), _leaky(), Linear(32, 16), _leaky(),
             Linear(16, 64), BatchNorm(64), _leaky(), Linear(64, 5)],
        ),
        "deepsets_large": _deepsets(
            [Linear(3, 64), BatchNorm(64), _relu(), Linear(64, 16), BatchNorm(16)],
            [Linear(16, 128), BatchNorm(128), _relu(), Linear(128, 16), BatchNorm(16),
             _leaky(), Linear(16, 64), BatchNorm(64), _relu(), Linear(64, 5), BatchNorm(5)],
        ),
        "deepsets_original": _deepsets(
            [Linear(3, 32), _relu(), Linear(32, 32), _relu()],
            [Linear(32, 16), _relu(), Linear(16, 5)],
        ),
    }


BUILTIN_MODELS = tuple(sorted(_builtin_registry()))


def builtin_model(name: str) -> ArchDescriptor:
    """Return one of the nine published reference architectures."""
    registry = _builtin_registry()
    if name not in registry:
        raise UnknownModel(f"{name!r}; choose from {', '.join(BUILTIN_MODELS)}")
    return registry[name]

"""Minimal reverse-mode autodiff sized to the layer set the IR uses.

float64 compute with float32 checkpoint storage.  Weights go through a
symmetric per-tensor fake quantizer (straight-through gradients) and an
elementwise binary mask before every use, so quantization-aware training and
magnitude pruning fall out of the same forward path.  One training job owns
its ParamStore; stores are never shared between concurrent jobs.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import arch_ir as ir
from .cost_model import BitConfig
from .data_forge import Dataset
from .errors import (
    DomainError,
    EmptyDataset,
    GraphNotRecorded,
    NumericDivergence,
    NumericOverflow,
    SchemaError,
    ShapeMismatch,
)

MOMENTUM = 0.9
BN_MOMENTUM = 0.1
BN_EPS = 1e-5
EVAL_BATCH = 512

LR_SCHEDULES = ("Constant", "CosineDecay")


# --------------------------------------------------------------------------
# Autodiff core
# --------------------------------------------------------------------------

class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._backward = None
        self._parents: tuple[Tensor, ...] = ()

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={'yes' if self.requires_grad else 'no'})"


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.requires_grad:
        t.grad = g.copy() if t.grad is None else t.grad + g


def backward(loss: Tensor) -> None:
    """Propagate d(loss)/d(leaf) to every reachable requires_grad tensor."""
    if loss.data.size != 1:
        raise GraphNotRecorded("backward() expects a scalar loss")
    if not loss.requires_grad or loss._backward is None:
        raise GraphNotRecorded("loss has no recorded graph")
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)


# --------------------------------------------------------------------------
# Ops
# --------------------------------------------------------------------------

def linear_op(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    y = x.data @ w.data.T + b.data

    def bw(g):
        _accum(x, g @ w.data)
        _accum(w, g.T @ x.data)
        _accum(b, g.sum(axis=0))

    return _result(y, (x, w, b), bw)


def conv2d_op(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Stride-1, no-padding 2-D convolution; kernel small enough for einsum."""
    k = w.data.shape[2]
    win = np.lib.stride_tricks.sliding_window_view(x.data, (k, k), axis=(2, 3))
    y = np.einsum("bchwij,ocij->bohw", win, w.data) + b.data[None, :, None, None]

    def bw(g):
        _accum(w, np.einsum("bohw,bchwij->ocij", g, win))
        _accum(b, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dx = np.zeros_like(x.data)
            hh, ww = g.shape[2], g.shape[3]
            for i in range(k):
                for j in range(k):
                    dx[:, :, i:i + hh, j:j + ww] += np.einsum(
                        "bohw,oc->bchw", g, w.data[:, :, i, j])
            _accum(x, dx)

    return _result(y, (x, w, b), bw)


def batchnorm_op(x: Tensor, gamma: Tensor, beta: Tensor,
                 running_mean: np.ndarray, running_var: np.ndarray,
                 training: bool) -> Tensor:
    axes = (0,) if x.data.ndim == 2 else (0, 2, 3)
    pshape = (1, -1) if x.data.ndim == 2 else (1, -1, 1, 1)
    g_ = gamma.data.reshape(pshape)
    b_ = beta.data.reshape(pshape)
    if training:
        mu = x.data.mean(axis=axes, keepdims=True)
        var = x.data.var(axis=axes, keepdims=True)
        n = x.data.size // mu.size
        unbiased = var * (n / max(n - 1, 1))
        running_mean *= 1.0 - BN_MOMENTUM
        running_mean += BN_MOMENTUM * mu.ravel()
        running_var *= 1.0 - BN_MOMENTUM
        running_var += BN_MOMENTUM * unbiased.ravel()
    else:
        mu = running_mean.reshape(pshape)
        var = running_var.reshape(pshape)
    inv = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x.data - mu) * inv
    y = g_ * xhat + b_

    def bw(g):
        _accum(gamma, (g * xhat).sum(axis=axes))
        _accum(beta, g.sum(axis=axes))
        if x.requires_grad:
            dxhat = g * g_
            if training:
                n = x.data.size // mu.size
                dx = (inv / n) * (n * dxhat
                                  - dxhat.sum(axis=axes, keepdims=True)
                                  - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True))
            else:
                dx = dxhat * inv
            _accum(x, dx)

    return _result(y, (x, gamma, beta), bw)


def relu_op(x: Tensor) -> Tensor:
    y = np.maximum(x.data, 0.0)

    def bw(g):
        _accum(x, g * (x.data > 0))

    return _result(y, (x,), bw)


def leaky_relu_op(x: Tensor, slope: float) -> Tensor:
    y = np.where(x.data > 0, x.data, slope * x.data)

    def bw(g):
        _accum(x, g * np.where(x.data > 0, 1.0, slope))

    return _result(y, (x,), bw)


def activation_op(x: Tensor, act: ir.Activation) -> Tensor:
    if act.kind == "ReLU":
        return relu_op(x)
    if act.kind == "LeakyReLU":
        return leaky_relu_op(x, act.slope)
    return x


def add_op(x: Tensor, y: Tensor) -> Tensor:
    def bw(g):
        _accum(x, g)
        _accum(y, g)

    return _result(x.data + y.data, (x, y), bw)


def reshape_op(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    def bw(g):
        _accum(x, g.reshape(x.data.shape))

    return _result(x.data.reshape(shape), (x,), bw)


def transpose12_op(x: Tensor) -> Tensor:
    def bw(g):
        _accum(x, np.swapaxes(g, 1, 2))

    return _result(np.swapaxes(x.data, 1, 2), (x,), bw)


def bmm_op(a: Tensor, b: Tensor) -> Tensor:
    y = np.matmul(a.data, b.data)

    def bw(g):
        _accum(a, np.matmul(g, np.swapaxes(b.data, 1, 2)))
        _accum(b, np.matmul(np.swapaxes(a.data, 1, 2), g))

    return _result(y, (a, b), bw)


def softmax_last_op(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        _accum(x, s * (g - (g * s).sum(axis=-1, keepdims=True)))

    return _result(s, (x,), bw)


def set_pool_op(x: Tensor, kind: str) -> Tensor:
    """Permutation-invariant pool over the set axis of (batch, set, feat)."""
    n = x.data.shape[1]
    if kind == "Mean":
        y = x.data.mean(axis=1)

        def bw(g):
            _accum(x, np.repeat(g[:, None, :], n, axis=1) / n)
    elif kind == "Sum":
        y = x.data.sum(axis=1)

        def bw(g):
            _accum(x, np.repeat(g[:, None, :], n, axis=1))
    else:  # Max: gradient routes to the first maximal slot
        idx = x.data.argmax(axis=1)
        y = np.take_along_axis(x.data, idx[:, None, :], axis=1)[:, 0, :]

        def bw(g):
            dx = np.zeros_like(x.data)
            np.put_along_axis(dx, idx[:, None, :], g[:, None, :], axis=1)
            _accum(x, dx)

    return _result(y, (x,), bw)


def quantize_array(a: np.ndarray, bits: int) -> np.ndarray:
    """Symmetric per-tensor uniform quantization; 32 bits is the identity."""
    if bits not in (4, 8, 16, 32):
        raise DomainError(f"bits must be one of 4, 8, 16, 32; got {bits}")
    if bits == 32:
        return a
    qmax = 2 ** (bits - 1) - 1
    peak = np.max(np.abs(a)) if a.size else 0.0
    scale = peak / qmax if peak > 0 else 1.0
    return np.round(a / scale) * scale


def fake_quantize(x: Tensor, bits: int) -> Tensor:
    """Quantized forward, straight-through (identity) backward."""
    y = quantize_array(x.data, bits)
    if y is x.data:
        return x

    def bw(g):
        _accum(x, g)

    return _result(y, (x,), bw)


def mul_const_op(x: Tensor, c: np.ndarray) -> Tensor:
    def bw(g):
        _accum(x, g * c)

    return _result(x.data * c, (x,), bw)


def mse_loss(pred: Tensor, target) -> Tensor:
    t = target if isinstance(target, Tensor) else Tensor(target)
    diff = pred.data - t.data
    n = diff.size

    def bw(g):
        _accum(pred, g * 2.0 * diff / n)
        _accum(t, -g * 2.0 * diff / n)

    return _result(np.array(np.mean(diff**2)), (pred, t), bw)


def cross_entropy_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    labels = np.asarray(labels, dtype=np.int64)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    n = len(labels)
    loss = -logp[np.arange(n), labels].mean()

    def bw(g):
        grad = np.exp(logp)
        grad[np.arange(n), labels] -= 1.0
        _accum(logits, g * grad / n)

    return _result(np.array(loss), (logits,), bw)


# --------------------------------------------------------------------------
# Parameter storage
# --------------------------------------------------------------------------

# Weight tensors eligible for pruning and weight decay, by layer type.
PRUNABLE_KEYS = {
    "Conv2d": ("weight",),
    "Linear": ("weight",),
    "ConvAttention": ("wq", "wk", "wv", "wo"),
}


@dataclass
class LayerParams:
    params: dict[str, Tensor] = field(default_factory=dict)
    masks: dict[str, np.ndarray] = field(default_factory=dict)
    buffers: dict[str, np.ndarray] = field(default_factory=dict)


class ParamStore:
    """Per-layer tensors for one architecture, plus masks and quant config."""

    def __init__(self, layers: list[LayerParams], quant: BitConfig | None = None):
        self.layers = layers
        self.quant = quant

    def named_params(self):
        for i, lp in enumerate(self.layers):
            for key in sorted(lp.params):
                yield i, key, lp.params[key]

    def zero_grads(self) -> None:
        for _, _, t in self.named_params():
            t.grad = None

    def apply_masks(self) -> None:
        """Zero the raw values of masked weights (masks always win)."""
        for lp in self.layers:
            for key, mask in lp.masks.items():
                lp.params[key].data *= mask

    def clone(self) -> "ParamStore":
        layers = []
        for lp in self.layers:
            copied = LayerParams(
                params={k: Tensor(t.data.copy(), requires_grad=True)
                        for k, t in lp.params.items()},
                masks={k: m.copy() for k, m in lp.masks.items()},
                buffers={k: b.copy() for k, b in lp.buffers.items()},
            )
            layers.append(copied)
        return ParamStore(layers, self.quant)


def _uniform(rng: np.random.Generator, shape, bound: float) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape)


def init_params(arch: ir.ArchDescriptor, rng: np.random.Generator,
                quant: BitConfig | None = None) -> ParamStore:
    """Fan-in scaled uniform init; BN starts at identity."""
    layers = []
    for layer in arch.layers:
        lp = LayerParams()
        if isinstance(layer, ir.Conv2d):
            bound = 1.0 / math.sqrt(layer.in_ch * layer.kernel**2)
            w = _uniform(rng, (layer.out_ch, layer.in_ch, layer.kernel, layer.kernel), bound)
            lp.params["weight"] = Tensor(w, requires_grad=True)
            lp.params["bias"] = Tensor(_uniform(rng, (layer.out_ch,), bound), requires_grad=True)
            lp.masks["weight"] = np.ones_like(w)
        elif isinstance(layer, ir.Linear):
            bound = 1.0 / math.sqrt(layer.in_dim)
            w = _uniform(rng, (layer.out_dim, layer.in_dim), bound)
            lp.params["weight"] = Tensor(w, requires_grad=True)
            lp.params["bias"] = Tensor(_uniform(rng, (layer.out_dim,), bound), requires_grad=True)
            lp.masks["weight"] = np.ones_like(w)
        elif isinstance(layer, ir.BatchNorm):
            c = layer.channels
            lp.params["weight"] = Tensor(np.ones(c), requires_grad=True)
            lp.params["bias"] = Tensor(np.zeros(c), requires_grad=True)
            lp.buffers["running_mean"] = np.zeros(c)
            lp.buffers["running_var"] = np.ones(c)
        elif isinstance(layer, ir.ConvAttention):
            c, d = layer.channels, layer.qkv_dim
            for key, (o, i) in (("wq", (d, c)), ("wk", (d, c)), ("wv", (d, c)), ("wo", (c, d))):
                bound = 1.0 / math.sqrt(i)
                w = _uniform(rng, (o, i, 1, 1), bound)
                lp.params[key] = Tensor(w, requires_grad=True)
                lp.params["b" + key[1]] = Tensor(_uniform(rng, (o,), bound), requires_grad=True)
                lp.masks[key] = np.ones_like(w)
        layers.append(lp)
    return ParamStore(layers, quant)


# --------------------------------------------------------------------------
# Forward / loss / metric
# --------------------------------------------------------------------------

def _effective_weight(lp: LayerParams, key: str, quant: BitConfig | None) -> Tensor:
    w = lp.params[key]
    if quant is not None and quant.weight_bits != 32:
        w = fake_quantize(w, quant.weight_bits)
    mask = lp.masks.get(key)
    if mask is not None:
        w = mul_const_op(w, mask)
    return w


def _check_finite(i: int, layer, data: np.ndarray) -> None:
    if not np.all(np.isfinite(data)):
        raise NumericOverflow(f"layer {i} ({type(layer).__name__}) produced non-finite values")


def forward(arch: ir.ArchDescriptor, params: ParamStore, batch,
            training: bool = False) -> Tensor:
    """Run the network on a (batch, *input_shape) array or Tensor.

    Set tasks run the per-element layers on a (batch*slots, feat) view with
    shared weights, pool at phi_len, then continue on pooled embeddings.
    """
    x = batch if isinstance(batch, Tensor) else Tensor(batch)
    if tuple(x.data.shape[1:]) != tuple(arch.input_shape):
        raise ShapeMismatch(
            f"batch shape {x.data.shape[1:]} != input shape {arch.input_shape}")
    n_batch = x.data.shape[0]
    is_set = arch.task == ir.SET_CLASSIFICATION
    if is_set:
        slots, feats = arch.input_shape
        x = reshape_op(x, (n_batch * slots, feats))
    for i, layer in enumerate(arch.layers):
        lp = params.layers[i]
        if isinstance(layer, ir.Conv2d):
            x = conv2d_op(x, _effective_weight(lp, "weight", params.quant), lp.params["bias"])
        elif isinstance(layer, ir.Linear):
            x = linear_op(x, _effective_weight(lp, "weight", params.quant), lp.params["bias"])
        elif isinstance(layer, ir.BatchNorm):
            x = batchnorm_op(x, lp.params["weight"], lp.params["bias"],
                             lp.buffers["running_mean"], lp.buffers["running_var"], training)
        elif isinstance(layer, ir.Activation):
            x = activation_op(x, layer)
        elif isinstance(layer, ir.Flatten):
            x = reshape_op(x, (n_batch, -1))
        elif isinstance(layer, ir.SetPool):
            x = reshape_op(x, (n_batch, arch.input_shape[0], x.data.shape[-1]))
            x = set_pool_op(x, layer.kind)
        elif isinstance(layer, ir.ConvAttention):
            x = _conv_attention_forward(x, lp, layer, params.quant)
        _check_finite(i, layer, x.data)
    return x


def _conv_attention_forward(x: Tensor, lp: LayerParams, layer: ir.ConvAttention,
                            quant: BitConfig | None) -> Tensor:
    nb, c, h, w = x.data.shape
    d = layer.qkv_dim
    q = conv2d_op(x, _effective_weight(lp, "wq", quant), lp.params["bq"])
    k = conv2d_op(x, _effective_weight(lp, "wk", quant), lp.params["bk"])
    v = conv2d_op(x, _effective_weight(lp, "wv", quant), lp.params["bv"])
    q = transpose12_op(reshape_op(q, (nb, d, h * w)))       # (B, hw, d)
    k = reshape_op(k, (nb, d, h * w))                        # (B, d, hw)
    v = transpose12_op(reshape_op(v, (nb, d, h * w)))       # (B, hw, d)
    attn = softmax_last_op(bmm_op(q, k))                     # (B, hw, hw)
    ctx = bmm_op(attn, v)                                    # (B, hw, d)
    ctx = reshape_op(transpose12_op(ctx), (nb, d, h, w))
    proj = conv2d_op(ctx, _effective_weight(lp, "wo", quant), lp.params["bo"])
    return activation_op(add_op(x, proj), layer.skip_act)


def task_loss(arch: ir.ArchDescriptor, out: Tensor, y: np.ndarray) -> Tensor:
    if arch.task == ir.PATCH_REGRESSION:
        return mse_loss(out, np.asarray(y, dtype=np.float64))
    return cross_entropy_loss(out, y)


def metric_from_outputs(task: str, out: np.ndarray, y: np.ndarray) -> float:
    """Mean center distance in pixels, or top-1 accuracy in percent."""
    if task == ir.PATCH_REGRESSION:
        return float(np.sqrt(((out - y) ** 2).sum(axis=1)).mean())
    return float(100.0 * (out.argmax(axis=1) == y).mean())


def metric_is_error(task: str) -> bool:
    """True when lower metric values are better."""
    return task == ir.PATCH_REGRESSION


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    weight_decay: float = 0.0
    batch_size: int = 64
    epochs: int = 10
    lr_schedule: str = "Constant"
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise DomainError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise DomainError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.batch_size < 1 or self.epochs < 1:
            raise DomainError("batch_size and epochs must be >= 1")
        if self.lr_schedule not in LR_SCHEDULES:
            raise DomainError(f"lr_schedule must be one of {LR_SCHEDULES}")


def _epoch_lr(cfg: TrainConfig, epoch: int) -> float:
    if cfg.lr_schedule == "CosineDecay":
        return cfg.learning_rate * 0.5 * (1.0 + math.cos(math.pi * epoch / cfg.epochs))
    return cfg.learning_rate


def train(arch: ir.ArchDescriptor, params: ParamStore, dataset: Dataset,
          cfg: TrainConfig) -> tuple[ParamStore, list[float]]:
    """SGD with momentum 0.9; decay on conv/linear/attention weights only.

    Returns the same store (updated in place) and per-epoch mean batch loss.
    Raises NumericDivergence the moment a loss or activation goes non-finite.
    """
    if len(dataset) == 0:
        raise EmptyDataset("training dataset is empty")
    rng = np.random.default_rng(cfg.seed)
    x_all = np.asarray(dataset.x, dtype=np.float64)
    y_all = dataset.y
    decayed = set()
    for i, layer in enumerate(arch.layers):
        for key in PRUNABLE_KEYS.get(type(layer).__name__, ()):
            decayed.add((i, key))
    velocity = {(i, key): np.zeros_like(t.data) for i, key, t in params.named_params()}
    history: list[float] = []
    params.apply_masks()
    # Divergence is detected and raised explicitly; keep numpy quiet about
    # the overflow that precedes it.
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(cfg.epochs):
            lr = _epoch_lr(cfg, epoch)
            order = rng.permutation(len(dataset))
            losses = []
            for start in range(0, len(dataset), cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                try:
                    out = forward(arch, params, x_all[idx], training=True)
                except NumericOverflow as err:
                    raise NumericDivergence(str(err)) from err
                loss = task_loss(arch, out, y_all[idx])
                if not np.isfinite(loss.data):
                    raise NumericDivergence(f"loss became {loss.data} at epoch {epoch}")
                params.zero_grads()
                backward(loss)
                for (i, key), v in velocity.items():
                    t = params.layers[i].params[key]
                    if t.grad is None:
                        continue
                    g = t.grad
                    if cfg.weight_decay > 0 and (i, key) in decayed:
                        g = g + cfg.weight_decay * t.data
                    v *= MOMENTUM
                    v += g
                    t.data -= lr * v
                    mask = params.layers[i].masks.get(key)
                    if mask is not None:
                        t.data *= mask
                        v *= mask
                losses.append(float(loss.data))
            history.append(float(np.mean(losses)))
    return params, history


def evaluate(arch: ir.ArchDescriptor, params: ParamStore, dataset: Dataset) -> float:
    """Task metric on a dataset: mean pixel distance, or accuracy percent."""
    if len(dataset) == 0:
        raise EmptyDataset("evaluation dataset is empty")
    outs = []
    x_all = np.asarray(dataset.x, dtype=np.float64)
    for start in range(0, len(dataset), EVAL_BATCH):
        out = forward(arch, params, x_all[start:start + EVAL_BATCH], training=False)
        outs.append(out.data)
    return metric_from_outputs(arch.task, np.concatenate(outs), dataset.y)


# --------------------------------------------------------------------------
# Checkpoints: "NACF" magic, version, JSON header, little-endian payload.
# Parameters and buffers are stored as float32, masks as uint8.
# --------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"NACF"
CHECKPOINT_VERSION = 1

_KIND_DTYPE = {"param": "<f4", "mask": "|u1", "buffer": "<f4"}


def save_checkpoint(path: str | Path, arch: ir.ArchDescriptor, params: ParamStore) -> None:
    entries = []
    payload = bytearray()
    for i, lp in enumerate(params.layers):
        groups = (("param", lp.params), ("mask", lp.masks), ("buffer", lp.buffers))
        for kind, table in groups:
            for key in sorted(table):
                arr = table[key].data if kind == "param" else table[key]
                raw = np.ascontiguousarray(arr, dtype=_KIND_DTYPE[kind]).tobytes()
                entries.append({"layer": i, "key": key, "kind": kind,
                                "shape": list(arr.shape), "offset": len(payload)})
                payload.extend(raw)
    header = {
        "arch": ir.arch_to_json(arch),
        "quant": None if params.quant is None else
                 [params.quant.weight_bits, params.quant.act_bits],
        "tensors": entries,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(bytes(payload))


def load_checkpoint(path: str | Path) -> tuple[ir.ArchDescriptor, ParamStore]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise SchemaError(f"{path}: not a checkpoint file")
        version, hlen = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise SchemaError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(fh.read(hlen).decode())
        payload = fh.read()
    arch = ir.arch_from_json(header["arch"])
    quant = None
    if header["quant"] is not None:
        wq, aq = header["quant"]
        quant = BitConfig.custom(wq, aq)
    layers = [LayerParams() for _ in arch.layers]
    for e in header["tensors"]:
        dtype = np.dtype(_KIND_DTYPE[e["kind"]])
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        arr = np.frombuffer(payload, dtype=dtype, count=count,
                            offset=e["offset"]).reshape(e["shape"])
        lp = layers[e["layer"]]
        if e["kind"] == "param":
            lp.params[e["key"]] = Tensor(arr.astype(np.float64), requires_grad=True)
        elif e["kind"] == "mask":
            lp.masks[e["key"]] = arr.astype(np.float64)
        else:
            lp.buffers[e["key"]] = arr.astype(np.float64)
    return arch, ParamStore(layers, quant)

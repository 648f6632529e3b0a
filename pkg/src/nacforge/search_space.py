"""Genome definition, sampling, variation, and decoding.

Two templates: a patch-regression network of two layer blocks (conv pair or
attention or nothing) feeding a 4-layer MLP head, and a set classifier with
a 2-layer per-element network, pooling, and a 4-layer aggregate MLP.

Genomes are fixed-length index vectors over per-gene choice lists; genes that
a decoded block does not use (e.g. attention settings while the block is a
conv pair) stay in the vector but are ignored, which keeps crossover aligned
across block-type changes.  Every decodable genome yields a valid network:
input dimensions are resolved from upstream shapes, never sampled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import arch_ir as ir
from .errors import SpaceMismatch

CHANNEL_DIMS = (1, 2, 4, 8, 16, 32, 64)
LINEAR_DIMS = (4, 8, 16, 32, 64)
KERNEL_SIZES = (1, 3)
NORM_KINDS = ("Batch", "None")
ACT_KINDS = ("ReLU", "LeakyReLU", "None")
BLOCK_KINDS = ("Conv", "Attention", "None")
CONV2_KINDS = ("Conv", "None")
AGGREGATORS = ("mean", "maximum")

DEFAULT_MUTATION_RATE = 0.1


@dataclass(frozen=True)
class GeneDef:
    name: str
    kind: str  # "categorical" | "integer"
    choices: tuple

    def __post_init__(self):
        if not self.choices:
            raise ValueError(f"gene {self.name}: empty choice list")
        if len(set(self.choices)) != len(self.choices):
            raise ValueError(f"gene {self.name}: duplicate choices {self.choices}")


@dataclass(frozen=True)
class SpaceDef:
    task: str
    template: str
    genes: tuple[GeneDef, ...]

    def __post_init__(self):
        names = [g.name for g in self.genes]
        if len(set(names)) != len(names):
            raise ValueError("duplicate gene names")
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(names)})

    def gene(self, name: str) -> GeneDef:
        return self.genes[self._index[name]]

    def value(self, genome: "Genome", name: str):
        return self.genes[self._index[name]].choices[genome.values[self._index[name]]]

    def to_json(self) -> dict:
        return {
            "task": self.task,
            "template": self.template,
            "genes": [{"name": g.name, "kind": g.kind, "choices": list(g.choices)}
                      for g in self.genes],
        }


@dataclass(frozen=True)
class Genome:
    values: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(int(v) for v in self.values))

    def to_json(self) -> list[int]:
        return list(self.values)

    @classmethod
    def from_json(cls, data: list[int]) -> "Genome":
        return cls(tuple(int(v) for v in data))


def check_genome(space: SpaceDef, genome: Genome) -> None:
    if len(genome.values) != len(space.genes):
        raise SpaceMismatch(
            f"genome length {len(genome.values)} != gene count {len(space.genes)}")
    for gene, v in zip(space.genes, genome.values):
        if not 0 <= v < len(gene.choices):
            raise SpaceMismatch(f"gene {gene.name}: index {v} out of range")


def _cat(name: str, choices) -> GeneDef:
    return GeneDef(name, "categorical", tuple(choices))


def _int(name: str, choices) -> GeneDef:
    return GeneDef(name, "integer", tuple(choices))


def _block_genes(s: int) -> list[GeneDef]:
    p = f"block{s}_"
    return [
        _cat(p + "type", BLOCK_KINDS),
        _int(p + "conv1_out", CHANNEL_DIMS),
        _int(p + "conv1_kernel", KERNEL_SIZES),
        _cat(p + "norm1", NORM_KINDS),
        _cat(p + "act1", ACT_KINDS),
        _cat(p + "conv2", CONV2_KINDS),
        _int(p + "conv2_out", CHANNEL_DIMS),
        _int(p + "conv2_kernel", KERNEL_SIZES),
        _cat(p + "norm2", NORM_KINDS),
        _cat(p + "act2", ACT_KINDS),
        _int(p + "attn_qkv_dim", CHANNEL_DIMS),
        _cat(p + "attn_skip_act", ACT_KINDS),
    ]


def _head_genes() -> list[GeneDef]:
    genes = []
    for j in (1, 2, 3):
        genes += [
            _int(f"head_fc{j}_out", LINEAR_DIMS),
            _cat(f"head_norm{j}", NORM_KINDS),
            _cat(f"head_act{j}", ACT_KINDS),
        ]
    genes += [_cat("head_norm4", NORM_KINDS), _cat("head_act4", ACT_KINDS)]
    return genes


def _deepsets_genes() -> list[GeneDef]:
    genes = [
        _int("phi1_width", LINEAR_DIMS),
        _cat("phi1_norm", NORM_KINDS),
        _cat("phi1_act", ACT_KINDS),
        _int("bottleneck_dim", CHANNEL_DIMS),
        _cat("phi2_norm", NORM_KINDS),
        _cat("phi2_act", ACT_KINDS),
        _cat("aggregator", AGGREGATORS),
    ]
    for j in (1, 2, 3):
        genes += [
            _int(f"rho{j}_out", LINEAR_DIMS),
            _cat(f"rho{j}_norm", NORM_KINDS),
            _cat(f"rho{j}_act", ACT_KINDS),
        ]
    genes += [_cat("rho4_norm", NORM_KINDS), _cat("rho4_act", ACT_KINDS)]
    return genes


def space_for(task: str) -> SpaceDef:
    if task == ir.PATCH_REGRESSION:
        genes = _block_genes(1) + _block_genes(2) + _head_genes()
        return SpaceDef(task, "patch_blocks_v1", tuple(genes))
    if task == ir.SET_CLASSIFICATION:
        return SpaceDef(task, "deepsets_v1", tuple(_deepsets_genes()))
    raise ValueError(f"unknown task {task!r}")


def sample(space: SpaceDef, rng: np.random.Generator) -> Genome:
    """Uniform draw per gene; deterministic under a seeded generator."""
    return Genome(tuple(int(rng.integers(len(g.choices))) for g in space.genes))


def encode(space: SpaceDef, assignments: dict) -> Genome:
    """Build a genome from name -> value pairs; unnamed genes take choice 0."""
    values = []
    for gene in space.genes:
        if gene.name in assignments:
            values.append(gene.choices.index(assignments[gene.name]))
        else:
            values.append(0)
    unknown = set(assignments) - {g.name for g in space.genes}
    if unknown:
        raise SpaceMismatch(f"unknown genes: {sorted(unknown)}")
    return Genome(tuple(values))


def _maybe_norm_act(layers: list, channels: int, norm: str, act: str) -> None:
    if norm == "Batch":
        layers.append(ir.BatchNorm(channels))
    if act != "None":
        layers.append(ir.Activation(act))


def _decode_patch(space: SpaceDef, genome: Genome) -> ir.ArchDescriptor:
    v = lambda name: space.value(genome, name)
    layers: list[ir.LayerSpec] = []
    c, h, w = ir.PATCH_INPUT_SHAPE
    for s in (1, 2):
        p = f"block{s}_"
        kind = v(p + "type")
        if kind == "Conv":
            out, k = v(p + "conv1_out"), v(p + "conv1_kernel")
            layers.append(ir.Conv2d(c, out, k))
            c, h, w = out, h - k + 1, w - k + 1
            _maybe_norm_act(layers, c, v(p + "norm1"), v(p + "act1"))
            if v(p + "conv2") == "Conv":
                out, k = v(p + "conv2_out"), v(p + "conv2_kernel")
                layers.append(ir.Conv2d(c, out, k))
                c, h, w = out, h - k + 1, w - k + 1
                _maybe_norm_act(layers, c, v(p + "norm2"), v(p + "act2"))
        elif kind == "Attention":
            layers.append(ir.ConvAttention(c, v(p + "attn_qkv_dim"),
                                           ir.Activation(v(p + "attn_skip_act"))))
    layers.append(ir.Flatten())
    dim = c * h * w
    for j in (1, 2, 3):
        out = v(f"head_fc{j}_out")
        layers.append(ir.Linear(dim, out))
        dim = out
        _maybe_norm_act(layers, dim, v(f"head_norm{j}"), v(f"head_act{j}"))
    layers.append(ir.Linear(dim, ir.HEAD_DIM[ir.PATCH_REGRESSION]))
    _maybe_norm_act(layers, 2, v("head_norm4"), v("head_act4"))
    return ir.ArchDescriptor(ir.PATCH_REGRESSION, tuple(layers), ir.PATCH_INPUT_SHAPE, 0)


def _decode_sets(space: SpaceDef, genome: Genome) -> ir.ArchDescriptor:
    v = lambda name: space.value(genome, name)
    phi: list[ir.LayerSpec] = []
    width = v("phi1_width")
    phi.append(ir.Linear(ir.SET_INPUT_SHAPE[1], width))
    _maybe_norm_act(phi, width, v("phi1_norm"), v("phi1_act"))
    bottleneck = v("bottleneck_dim")
    phi.append(ir.Linear(width, bottleneck))
    _maybe_norm_act(phi, bottleneck, v("phi2_norm"), v("phi2_act"))

    pool = ir.SetPool("Mean" if v("aggregator") == "mean" else "Max")

    rho: list[ir.LayerSpec] = []
    dim = bottleneck
    for j in (1, 2, 3):
        out = v(f"rho{j}_out")
        rho.append(ir.Linear(dim, out))
        dim = out
        _maybe_norm_act(rho, dim, v(f"rho{j}_norm"), v(f"rho{j}_act"))
    rho.append(ir.Linear(dim, ir.HEAD_DIM[ir.SET_CLASSIFICATION]))
    _maybe_norm_act(rho, 5, v("rho4_norm"), v("rho4_act"))

    layers = tuple(phi) + (pool,) + tuple(rho)
    return ir.ArchDescriptor(ir.SET_CLASSIFICATION, layers, ir.SET_INPUT_SHAPE, len(phi))


def decode(space: SpaceDef, genome: Genome) -> ir.ArchDescriptor:
    """Deterministic genome -> architecture; the result always validates."""
    check_genome(space, genome)
    if space.task == ir.PATCH_REGRESSION:
        return _decode_patch(space, genome)
    return _decode_sets(space, genome)


def mutate(space: SpaceDef, genome: Genome, rate: float,
           rng: np.random.Generator) -> Genome:
    """Resample each gene to a different choice with probability `rate`.

    If no gene changed, one multi-choice gene is forced to change so a
    mutation never wastes an evaluation on the parent genome.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"rate must be in [0, 1], got {rate}")
    check_genome(space, genome)
    values = list(genome.values)
    for i, gene in enumerate(space.genes):
        if len(gene.choices) > 1 and rng.random() < rate:
            values[i] = _other_choice(len(gene.choices), values[i], rng)
    if tuple(values) == genome.values:
        mutable = [i for i, g in enumerate(space.genes) if len(g.choices) > 1]
        if mutable:
            i = int(rng.choice(mutable))
            values[i] = _other_choice(len(space.genes[i].choices), values[i], rng)
    return Genome(tuple(values))


def _other_choice(n: int, current: int, rng: np.random.Generator) -> int:
    pick = int(rng.integers(n - 1))
    return pick if pick < current else pick + 1


def crossover(a: Genome, b: Genome,
              rng: np.random.Generator) -> tuple[Genome, Genome]:
    """Uniform crossover: each locus swaps between children with prob 0.5."""
    if len(a.values) != len(b.values):
        raise SpaceMismatch(
            f"genome lengths differ: {len(a.values)} vs {len(b.values)}")
    c1, c2 = list(a.values), list(b.values)
    for i in range(len(c1)):
        if rng.random() < 0.5:
            c1[i], c2[i] = c2[i], c1[i]
    return Genome(tuple(c1)), Genome(tuple(c2))

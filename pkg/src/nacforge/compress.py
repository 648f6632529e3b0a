"""Iterative magnitude pruning with quantization-aware fine-tuning.

For each bit width the loop starts from the HPO-trained dense model, then
repeatedly masks the smallest-magnitude fifth of the remaining conv/linear
weights (global ranking across layers) and fine-tunes with weights fake
quantized at that width.  Masks only ever grow.  Divergent fine-tunes flag
their curve point and the loop continues from the pre-fine-tune state.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np

from . import arch_ir as ir
from . import tensor_engine as te
from .cost_model import BitConfig, SparsityProfile, bops_model
from .data_forge import Dataset
from .errors import DomainError, NothingLeftToPrune, NumericDivergence

DEFAULT_BIT_WIDTHS = (4, 8, 16, 32)
DEFAULT_PRUNE_FRACTION = 0.2
DEFAULT_ITERATIONS = 20
DEFAULT_EPOCHS_PER_ITER = 20
DEFAULT_TOLERANCE = 0.1
PRUNE_SCOPES = ("global", "per_layer")


@dataclass(frozen=True)
class CompressionPlan:
    bit_widths: tuple[int, ...] = DEFAULT_BIT_WIDTHS
    prune_fraction: float = DEFAULT_PRUNE_FRACTION
    iterations: int = DEFAULT_ITERATIONS
    epochs_per_iter: int = DEFAULT_EPOCHS_PER_ITER
    prune_scope: str = "global"

    def __post_init__(self):
        if not self.bit_widths:
            raise DomainError("bit_widths must be nonempty")
        for b in self.bit_widths:
            if b not in DEFAULT_BIT_WIDTHS:
                raise DomainError(f"bit width {b} not in {DEFAULT_BIT_WIDTHS}")
        if not 0.0 < self.prune_fraction < 1.0:
            raise DomainError(f"prune_fraction must be in (0, 1), got {self.prune_fraction}")
        if self.iterations < 1 or self.epochs_per_iter < 1:
            raise DomainError("iterations and epochs_per_iter must be >= 1")
        if self.prune_scope not in PRUNE_SCOPES:
            raise DomainError(f"prune_scope must be one of {PRUNE_SCOPES}")


@dataclass(frozen=True)
class CurvePoint:
    bit_width: int
    iteration: int
    sparsity: float
    metric: float
    bops: float
    diverged: bool = False


@dataclass
class CompressionResult:
    task: str
    dense_metric: float
    points: list[CurvePoint] = field(default_factory=list)
    checkpoints: dict = field(default_factory=dict)  # (bits, iteration) -> ParamStore

    def curve(self, bits: int) -> list[CurvePoint]:
        return [p for p in self.points if p.bit_width == bits]


def prune_step(params: te.ParamStore, fraction: float,
               scope: str = "global") -> dict:
    """Mask the smallest floor(fraction * remaining) unmasked weights.

    Default ranking is global across every masked (prunable) tensor by
    |value|, with ties broken by (layer index, flat index) ascending;
    scope="per_layer" ranks and prunes within each tensor separately.
    Returns the updated masks keyed by (layer index, tensor key).
    """
    if not 0.0 < fraction < 1.0:
        raise DomainError(f"fraction must be in (0, 1), got {fraction}")
    if scope not in PRUNE_SCOPES:
        raise DomainError(f"scope must be one of {PRUNE_SCOPES}, got {scope!r}")
    entries = []  # (layer idx, key, mask, |alive weights|, alive flat positions)
    remaining = 0
    for i, lp in enumerate(params.layers):
        for key in sorted(lp.masks):
            mask = lp.masks[key]
            w = lp.params[key].data
            alive = np.flatnonzero(mask.ravel())
            remaining += alive.size
            entries.append((i, key, mask, np.abs(w.ravel()[alive]), alive))
    if remaining == 0:
        raise NothingLeftToPrune("every prunable weight is already masked")
    if scope == "per_layer":
        for _, _, mask, abs_vals, alive in entries:
            n_prune = int(fraction * alive.size)
            if n_prune > 0:
                order = np.lexsort((alive, abs_vals))
                mask.ravel()[alive[order[:n_prune]]] = 0.0
    else:
        n_prune = int(fraction * remaining)
        if n_prune > 0:
            abs_vals = np.concatenate([e[3] for e in entries])
            layer_ids = np.concatenate([np.full(e[4].size, i) for i, e in enumerate(entries)])
            flat_ids = np.concatenate([e[4] for e in entries])
            order = np.lexsort((flat_ids, layer_ids, abs_vals))
            for pos in order[:n_prune]:
                entry = entries[int(layer_ids[pos])]
                entry[2].ravel()[int(flat_ids[pos])] = 0.0
    params.apply_masks()
    return {(i, key): lp.masks[key]
            for i, lp in enumerate(params.layers) for key in lp.masks}


def global_sparsity(params: te.ParamStore) -> float:
    total = alive = 0
    for lp in params.layers:
        for mask in lp.masks.values():
            total += mask.size
            alive += int(mask.sum())
    return 1.0 - alive / total if total else 0.0


def density_profile(params: te.ParamStore) -> SparsityProfile:
    """Per-layer density p = unmasked fraction, pooled over a layer's tensors."""
    density = {}
    for i, lp in enumerate(params.layers):
        total = sum(m.size for m in lp.masks.values())
        if total:
            alive = sum(int(m.sum()) for m in lp.masks.values())
            density[i] = alive / total
    return SparsityProfile(density)


def _curve_for_width(arch: ir.ArchDescriptor, train_ds: Dataset, val_ds: Dataset,
                     plan: CompressionPlan, train_cfg: te.TrainConfig,
                     dense_params: te.ParamStore, bits: int,
                     seeds: list[int]) -> tuple[list[CurvePoint], dict]:
    store = dense_params.clone()
    store.quant = BitConfig(bits, bits)
    points = []
    checkpoints = {}
    metric = te.evaluate(arch, store, val_ds)
    points.append(CurvePoint(bits, 0, global_sparsity(store), metric,
                             bops_model(arch, store.quant, density_profile(store)).total))
    checkpoints[(bits, 0)] = store.clone()
    for it in range(1, plan.iterations + 1):
        prune_step(store, plan.prune_fraction, plan.prune_scope)
        snapshot = store.clone()
        cfg = replace(train_cfg, epochs=plan.epochs_per_iter, seed=seeds[it - 1])
        diverged = False
        try:
            te.train(arch, store, train_ds, cfg)
        except NumericDivergence:
            store = snapshot  # keep the pruned, un-fine-tuned weights
            diverged = True
        metric = te.evaluate(arch, store, val_ds)
        points.append(CurvePoint(bits, it, global_sparsity(store), metric,
                                 bops_model(arch, store.quant, density_profile(store)).total,
                                 diverged))
        checkpoints[(bits, it)] = store.clone()
    return points, checkpoints


def run_compression(arch: ir.ArchDescriptor, train_ds: Dataset, val_ds: Dataset,
                    plan: CompressionPlan, train_cfg: te.TrainConfig,
                    dense_params: te.ParamStore, rng: np.random.Generator,
                    workers: int = 1) -> CompressionResult:
    """Prune/QAT curves for every planned bit width.

    Fine-tune seeds are pre-drawn per (width, iteration) in plan order, so
    running widths concurrently changes wall time, never results.
    """
    problems = ir.validate(arch)
    if problems:
        raise DomainError(f"architecture invalid: {problems[0]}")
    dense_metric = te.evaluate(arch, dense_params, val_ds)
    seeds = {bits: [int(rng.integers(2**31)) for _ in range(plan.iterations)]
             for bits in plan.bit_widths}
    result = CompressionResult(arch.task, dense_metric)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {bits: pool.submit(_curve_for_width, arch, train_ds, val_ds,
                                         plan, train_cfg, dense_params, bits, seeds[bits])
                       for bits in plan.bit_widths}
            outputs = [(bits, futures[bits].result()) for bits in plan.bit_widths]
    else:
        outputs = [(bits, _curve_for_width(arch, train_ds, val_ds, plan, train_cfg,
                                           dense_params, bits, seeds[bits]))
                   for bits in plan.bit_widths]
    for _, (points, checkpoints) in outputs:
        result.points.extend(points)
        result.checkpoints.update(checkpoints)
    return result


def _within_tolerance(task: str, metric: float, dense_metric: float, tol: float) -> bool:
    if te.metric_is_error(task):
        return metric <= dense_metric * (1.0 + tol)
    return metric >= dense_metric * (1.0 - tol)


def select_compressed(result: CompressionResult,
                      tolerance: float = DEFAULT_TOLERANCE) -> tuple[CurvePoint, bool]:
    """Lexicographic pick among points within relative tolerance of the dense
    metric: lowest bits, then highest sparsity, then best metric.

    When nothing qualifies, returns the best dense (iteration-0) point with
    the warning flag set.
    """
    if not result.points:
        raise DomainError("no curve points to select from")
    error_like = te.metric_is_error(result.task)

    def metric_order(p: CurvePoint) -> float:
        return p.metric if error_like else -p.metric

    feasible = [p for p in result.points
                if _within_tolerance(result.task, p.metric, result.dense_metric, tolerance)]
    if feasible:
        chosen = min(feasible, key=lambda p: (p.bit_width, -p.sparsity, metric_order(p)))
        return chosen, False
    dense_points = [p for p in result.points if p.iteration == 0]
    return min(dense_points, key=metric_order), True


def curve_rows(result: CompressionResult) -> Iterable[tuple]:
    """Rows for the curve CSV: bit_width, iteration, sparsity, metric, bops."""
    for p in sorted(result.points, key=lambda p: (p.bit_width, p.iteration)):
        yield (p.bit_width, p.iteration, p.sparsity, p.metric, p.bops)

"""Tree-structured Parzen estimator for training-hyperparameter search.

Sequential suggest/observe loop over a small mixed space: log-uniform
continuous dimensions and categoricals.  After a uniform startup phase the
completed trials are split at the gamma-quantile into good/bad sets; new
candidates are drawn from the good-set density model and ranked by the
density ratio l(x)/g(x).  Diverged trials are recorded but excluded from
the density models: their scores carry no usable magnitude.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from . import arch_ir as ir
from . import tensor_engine as te
from .data_forge import Dataset
from .errors import AllTrialsFailed, DomainError, NumericDivergence

GAMMA = 0.25
N_STARTUP = 10
N_CANDIDATES = 24

STATUS_COMPLETE = "Complete"
STATUS_FAILED = "Failed"


@dataclass(frozen=True)
class ContinuousDim:
    name: str
    low: float
    high: float
    log: bool = True

    def __post_init__(self):
        if not self.low < self.high:
            raise DomainError(f"{self.name}: low must be < high")
        if self.log and self.low <= 0:
            raise DomainError(f"{self.name}: log domain needs positive bounds")


@dataclass(frozen=True)
class CategoricalDim:
    name: str
    choices: tuple

    def __post_init__(self):
        if not self.choices:
            raise DomainError(f"{self.name}: empty choices")


Dim = Union[ContinuousDim, CategoricalDim]


def default_hyper_space() -> tuple[Dim, ...]:
    return (
        ContinuousDim("learning_rate", 1e-4, 1e-1, log=True),
        ContinuousDim("weight_decay", 1e-6, 1e-2, log=True),
        CategoricalDim("lr_schedule", ("Constant", "CosineDecay")),
        CategoricalDim("batch_size", (32, 64, 128, 256)),
    )


@dataclass(frozen=True)
class TrialRecord:
    assignment: dict
    score: float
    status: str

    def __post_init__(self):
        if self.status == STATUS_COMPLETE and not math.isfinite(self.score):
            raise DomainError("complete trials must carry a finite score")


class _ParzenModel:
    """1-D Gaussian KDE plus a uniform pseudo-observation, in (log-)domain."""

    def __init__(self, dim: ContinuousDim, observations: list[float]):
        self.dim = dim
        self.lo = math.log(dim.low) if dim.log else dim.low
        self.hi = math.log(dim.high) if dim.log else dim.high
        self.span = self.hi - self.lo
        zs = sorted(self._to_domain(v) for v in observations)
        bws = []
        for i, z in enumerate(zs):
            left = zs[i] - zs[i - 1] if i > 0 else 0.0
            right = zs[i + 1] - zs[i] if i < len(zs) - 1 else 0.0
            bws.append(max(left, right, self.span / max(len(zs), 1)))
        self.zs = zs
        self.bws = bws

    def _to_domain(self, v: float) -> float:
        return math.log(v) if self.dim.log else float(v)

    def _from_domain(self, z: float) -> float:
        return math.exp(z) if self.dim.log else float(z)

    def sample(self, rng: np.random.Generator) -> float:
        k = len(self.zs)
        comp = int(rng.integers(k + 1))
        if comp == k:
            z = float(rng.uniform(self.lo, self.hi))
        else:
            z = float(rng.normal(self.zs[comp], self.bws[comp]))
            for _ in range(100):
                if self.lo <= z <= self.hi:
                    break
                z = float(rng.normal(self.zs[comp], self.bws[comp]))
            z = min(max(z, self.lo), self.hi)
        return self._from_domain(z)

    def log_density(self, v: float) -> float:
        z = self._to_domain(v)
        k = len(self.zs)
        total = 1.0 / self.span  # uniform component keeps the density > 0
        for zi, bw in zip(self.zs, self.bws):
            total += math.exp(-0.5 * ((z - zi) / bw) ** 2) / (bw * math.sqrt(2 * math.pi))
        return math.log(total / (k + 1))


class _CategoricalModel:
    """Add-one smoothed frequencies over the support."""

    def __init__(self, dim: CategoricalDim, observations: list):
        counts = np.array([sum(1 for o in observations if o == c) for c in dim.choices],
                          dtype=np.float64)
        self.dim = dim
        self.weights = (counts + 1.0) / (counts.sum() + len(dim.choices))

    def sample(self, rng: np.random.Generator):
        return self.dim.choices[int(rng.choice(len(self.dim.choices), p=self.weights))]

    def log_density(self, v) -> float:
        return math.log(self.weights[self.dim.choices.index(v)])


def _uniform_sample(space: tuple[Dim, ...], rng: np.random.Generator) -> dict:
    out = {}
    for dim in space:
        if isinstance(dim, ContinuousDim):
            if dim.log:
                out[dim.name] = float(np.exp(rng.uniform(math.log(dim.low),
                                                         math.log(dim.high))))
            else:
                out[dim.name] = float(rng.uniform(dim.low, dim.high))
        else:
            out[dim.name] = dim.choices[int(rng.integers(len(dim.choices)))]
    return out


def split_good_bad(complete: list[TrialRecord]) -> tuple[list[TrialRecord], list[TrialRecord]]:
    ranked = sorted(complete, key=lambda t: t.score)
    n_good = max(1, int(GAMMA * len(ranked)))
    return ranked[:n_good], ranked[n_good:]


def build_models(history: list[TrialRecord], space: tuple[Dim, ...]):
    """Per-dimension (good, bad) density models from completed trials."""
    complete = [t for t in history if t.status == STATUS_COMPLETE]
    good, bad = split_good_bad(complete)
    models = {}
    for dim in space:
        cls = _ParzenModel if isinstance(dim, ContinuousDim) else _CategoricalModel
        models[dim.name] = (cls(dim, [t.assignment[dim.name] for t in good]),
                            cls(dim, [t.assignment[dim.name] for t in bad]))
    return models


def suggest(history: list[TrialRecord], space: tuple[Dim, ...],
            rng: np.random.Generator) -> dict:
    assignment, _ = suggest_with_candidates(history, space, rng)
    return assignment


def suggest_with_candidates(history: list[TrialRecord], space: tuple[Dim, ...],
                            rng: np.random.Generator) -> tuple[dict, list[tuple[dict, float]]]:
    """Return the chosen assignment and all (candidate, log l/g) draws."""
    complete = [t for t in history if t.status == STATUS_COMPLETE]
    if len(complete) < N_STARTUP:
        return _uniform_sample(space, rng), []
    models = build_models(history, space)
    scored = []
    for _ in range(N_CANDIDATES):
        cand = {}
        log_ratio = 0.0
        for dim in space:
            good_model, bad_model = models[dim.name]
            v = good_model.sample(rng)
            cand[dim.name] = v
            log_ratio += good_model.log_density(v) - bad_model.log_density(v)
        scored.append((cand, log_ratio))
    best = max(range(len(scored)), key=lambda i: scored[i][1])
    return scored[best][0], scored


def score_from_metric(task: str, metric: float) -> float:
    """Lower-is-better score: distance stays, accuracy flips to 100 - acc."""
    return metric if te.metric_is_error(task) else 100.0 - metric


@dataclass
class HpoResult:
    best_config: te.TrainConfig
    best_score: float
    history: list[TrialRecord]


def run_local_hpo(arch: ir.ArchDescriptor, train_ds: Dataset, val_ds: Dataset,
                  trial_budget: int, rng: np.random.Generator,
                  space: tuple[Dim, ...] | None = None,
                  epochs: int = 60) -> HpoResult:
    """suggest -> train -> observe loop; returns the best completed config."""
    if trial_budget < 1:
        raise DomainError(f"trial_budget must be >= 1, got {trial_budget}")
    space = space or default_hyper_space()
    history: list[TrialRecord] = []
    best: tuple[float, te.TrainConfig] | None = None
    for _ in range(trial_budget):
        assignment = suggest(history, space, rng)
        seed = int(rng.integers(2**31))
        cfg = te.TrainConfig(
            learning_rate=float(assignment["learning_rate"]),
            weight_decay=float(assignment["weight_decay"]),
            batch_size=int(assignment["batch_size"]),
            epochs=epochs,
            lr_schedule=str(assignment["lr_schedule"]),
            seed=seed,
        )
        store = te.init_params(arch, np.random.default_rng(seed))
        try:
            te.train(arch, store, train_ds, cfg)
            score = score_from_metric(arch.task, te.evaluate(arch, store, val_ds))
            history.append(TrialRecord(assignment, score, STATUS_COMPLETE))
            if best is None or score < best[0]:
                best = (score, cfg)
        except NumericDivergence:
            history.append(TrialRecord(assignment, math.inf, STATUS_FAILED))
    if best is None:
        raise AllTrialsFailed(f"all {trial_budget} trials diverged")
    return HpoResult(best[1], best[0], history)

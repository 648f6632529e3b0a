"""Elitist multi-objective genetic search over genomes.

Minimizes (task error, bit-operation cost) with fast non-dominated sorting,
crowding-distance diversity, binary tournaments, uniform crossover, and
per-gene mutation.  A Pareto archive of every non-dominated evaluation is
maintained across the whole run; failed evaluations stay in the trial log
with a penalized error so selection pressure sees them.
"""

from __future__ import annotations

import hashlib
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import InsufficientArchive, NacforgeError
from .search_space import (
    DEFAULT_MUTATION_RATE,
    Genome,
    SpaceDef,
    crossover,
    mutate,
    sample,
)

DEFAULT_POP_SIZE = 25
DEFAULT_CROSSOVER_PROB = 0.9
PENALTY_FACTOR = 10.0
PENALTY_FLOOR = 1e12

SIZE_NAMES = ("tiny", "small", "medium", "large")

# An evaluator maps (genome, eval_seed) -> (error, bops), both finite,
# lower error is better.  It may raise NacforgeError to signal failure.
Evaluator = Callable[[Genome, int], tuple[float, float]]


@dataclass
class Candidate:
    genome: Genome
    error: float
    bops: float
    eval_seed: int
    flagged: bool = False
    rank: int = 0
    crowding: float = 0.0

    @property
    def objectives(self) -> tuple[float, float]:
        return (self.error, self.bops)


@dataclass(frozen=True)
class TrialLogEntry:
    trial_id: int
    genome: Genome
    error: float
    bops: float
    rank_at_insert: int
    flagged: bool


def dominates(a: Candidate, b: Candidate) -> bool:
    """a is at least as good on both objectives and better on one."""
    return (a.error <= b.error and a.bops <= b.bops
            and (a.error < b.error or a.bops < b.bops))


def non_dominated_sort(pop: list[Candidate]) -> list[list[Candidate]]:
    """Deb's fast non-dominated sort; also writes each candidate's rank."""
    n = len(pop)
    dominated_by: list[list[int]] = [[] for _ in range(n)]
    dominating_count = [0] * n
    fronts: list[list[int]] = [[]]
    for p in range(n):
        for q in range(n):
            if p == q:
                continue
            if dominates(pop[p], pop[q]):
                dominated_by[p].append(q)
            elif dominates(pop[q], pop[p]):
                dominating_count[p] += 1
        if dominating_count[p] == 0:
            pop[p].rank = 0
            fronts[0].append(p)
    i = 0
    while fronts[i]:
        nxt: list[int] = []
        for p in fronts[i]:
            for q in dominated_by[p]:
                dominating_count[q] -= 1
                if dominating_count[q] == 0:
                    pop[q].rank = i + 1
                    nxt.append(q)
        i += 1
        fronts.append(nxt)
    return [[pop[j] for j in front] for front in fronts[:-1]]


def crowding_distance(front: list[Candidate]) -> list[float]:
    """Normalized neighbor-gap sum per objective; boundaries are infinite."""
    n = len(front)
    if n == 0:
        raise ValueError("crowding_distance of an empty front")
    dist = [0.0] * n
    for key in (lambda c: c.error, lambda c: c.bops):
        order = sorted(range(n), key=lambda j: key(front[j]))
        lo, hi = key(front[order[0]]), key(front[order[-1]])
        dist[order[0]] = dist[order[-1]] = math.inf
        if hi == lo:
            continue
        for pos in range(1, n - 1):
            gap = key(front[order[pos + 1]]) - key(front[order[pos - 1]])
            if not math.isinf(dist[order[pos]]):
                dist[order[pos]] += gap / (hi - lo)
    for c, d in zip(front, dist):
        c.crowding = d
    return dist


class ParetoArchive:
    """Mutually non-dominated candidates, deduplicated by genome."""

    def __init__(self):
        self._members: dict[tuple[int, ...], Candidate] = {}

    def __len__(self) -> int:
        return len(self._members)

    @property
    def candidates(self) -> list[Candidate]:
        return list(self._members.values())

    def insert(self, cand: Candidate) -> bool:
        key = cand.genome.values
        if key in self._members:
            return False
        for other in self._members.values():
            if dominates(other, cand):
                return False
        for other_key in [k for k, v in self._members.items() if dominates(cand, v)]:
            del self._members[other_key]
        self._members[key] = cand
        return True

    def sorted_by_bops(self) -> list[Candidate]:
        return sorted(self._members.values(), key=lambda c: (c.bops, c.error, c.genome.values))


def _binary_tournament(pop: list[Candidate], rng: np.random.Generator) -> Candidate:
    a = pop[int(rng.integers(len(pop)))]
    b = pop[int(rng.integers(len(pop)))]
    ka = (a.rank, -a.crowding)
    kb = (b.rank, -b.crowding)
    return a if ka <= kb else b


def _environmental_selection(fronts: list[list[Candidate]], k: int) -> list[Candidate]:
    chosen: list[Candidate] = []
    for front in fronts:
        crowding_distance(front)
        if len(chosen) + len(front) <= k:
            chosen.extend(front)
        else:
            rest = sorted(front, key=lambda c: -c.crowding)
            chosen.extend(rest[:k - len(chosen)])
            break
    return chosen


def _evaluate_group(genomes: list[Genome], seeds: list[int], evaluator: Evaluator,
                    workers: int, worst: dict) -> list[Candidate]:
    raw: list[tuple[float, float] | None] = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_safe_eval, evaluator, g, s)
                       for g, s in zip(genomes, seeds)]
            raw = [f.result() for f in futures]
    else:
        raw = [_safe_eval(evaluator, g, s) for g, s in zip(genomes, seeds)]
    out = []
    for genome, seed, result in zip(genomes, seeds, raw):
        if result is None:
            error = worst["error"] * PENALTY_FACTOR if worst["error"] is not None else PENALTY_FLOOR
            bops = worst["bops"] * PENALTY_FACTOR if worst["bops"] is not None else PENALTY_FLOOR
            out.append(Candidate(genome, error, bops, seed, flagged=True))
            continue
        error, bops = float(result[0]), float(result[1])
        worst["error"] = error if worst["error"] is None else max(worst["error"], error)
        worst["bops"] = bops if worst["bops"] is None else max(worst["bops"], bops)
        out.append(Candidate(genome, error, bops, seed))
    return out


def _safe_eval(evaluator: Evaluator, genome: Genome, seed: int):
    try:
        error, bops = evaluator(genome, seed)
    except NacforgeError:
        return None
    if not (math.isfinite(error) and math.isfinite(bops)):
        return None
    return float(error), float(bops)


@dataclass
class SearchResult:
    archive: ParetoArchive
    trials: list[TrialLogEntry] = field(default_factory=list)


def genome_eval_seed(base: int, genome: Genome) -> int:
    """Stable per-genome training seed: identical genomes score identically."""
    text = f"{base}:" + ",".join(str(v) for v in genome.values)
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:4], "little")


def run_global_search(space: SpaceDef, eval_budget: int, pop_size: int,
                      rng: np.random.Generator, evaluator: Evaluator,
                      crossover_prob: float = DEFAULT_CROSSOVER_PROB,
                      mutation_rate: float = DEFAULT_MUTATION_RATE,
                      workers: int = 1) -> SearchResult:
    """Generational NSGA-II; stops once `eval_budget` evaluations are spent.

    Evaluation seeds are a stable hash of the genome, so a genome seen twice
    is served from a result cache instead of burning budget on a duplicate
    training run; the budget counts distinct evaluator calls.  Deterministic
    for a fixed rng seed; parallel workers change wall time, never results.
    Each trial's rank_at_insert is its front index within the population it
    was sorted against (initial population, or parents+offspring).
    """
    if eval_budget < pop_size:
        raise ValueError(f"eval_budget {eval_budget} < pop_size {pop_size}")
    archive = ParetoArchive()
    trials: list[TrialLogEntry] = []
    worst = {"error": None, "bops": None}
    seed_base = int(rng.integers(2**31))
    cache: dict[tuple[int, ...], Candidate] = {}

    def log_group(cands: list[Candidate]) -> None:
        for c in cands:
            archive.insert(c)
            trials.append(TrialLogEntry(len(trials), c.genome, c.error, c.bops,
                                        c.rank, c.flagged))

    def resolve(genomes: list[Genome], limit: int) -> tuple[list[Candidate], list[Candidate]]:
        """Candidates for each genome, evaluating at most `limit` novel ones.

        Novel genomes get the freshly evaluated Candidate instance itself
        (so group sorting writes the rank that gets logged); repeats get a
        copy of the cached result and consume no budget.
        """
        novel: list[Genome] = []
        for g in genomes:
            if g.values not in cache and all(g.values != n.values for n in novel):
                if len(novel) < limit:
                    novel.append(g)
        seeds = [genome_eval_seed(seed_base, g) for g in novel]
        evaluated = _evaluate_group(novel, seeds, evaluator, workers, worst)
        for cand in evaluated:
            cache[cand.genome.values] = cand
        members: list[Candidate] = []
        used_fresh: set[int] = set()
        for g in genomes:
            if g.values not in cache:
                continue  # over-limit novel genome: dropped this generation
            cand = cache[g.values]
            if id(cand) in used_fresh:
                members.append(replace(cand))
            else:
                members.append(cand)
                used_fresh.add(id(cand))
        return members, evaluated

    genomes = [sample(space, rng) for _ in range(pop_size)]
    pop, fresh = resolve(genomes, limit=eval_budget)
    spent = len(fresh)
    fronts = non_dominated_sort(pop)
    for front in fronts:
        crowding_distance(front)
    log_group(fresh)

    stall = 0
    while spent < eval_budget and stall < 5:
        children: list[Genome] = []
        while len(children) < pop_size:
            p1 = _binary_tournament(pop, rng)
            p2 = _binary_tournament(pop, rng)
            if rng.random() < crossover_prob:
                c1, c2 = crossover(p1.genome, p2.genome, rng)
            else:
                c1, c2 = p1.genome, p2.genome
            children.append(mutate(space, c1, mutation_rate, rng))
            if len(children) < pop_size:
                children.append(mutate(space, c2, mutation_rate, rng))
        offspring, fresh = resolve(children, limit=eval_budget - spent)
        spent += len(fresh)
        stall = stall + 1 if not fresh else 0
        combined = pop + offspring
        fronts = non_dominated_sort(combined)
        log_group(fresh)
        pop = _environmental_selection(fronts, pop_size)
    return SearchResult(archive, trials)


def select_by_bops(archive: ParetoArchive, k: int = 4) -> dict[str, Candidate]:
    """Partition the archive's BOPs span into k geometric bins and take the
    lowest-error candidate of each; names ascend from tiny to large."""
    cands = archive.sorted_by_bops()
    if len(cands) < k:
        raise InsufficientArchive(f"archive has {len(cands)} members, need {k}")
    names = SIZE_NAMES if k == 4 else tuple(f"bin{i}" for i in range(k))
    lo, hi = cands[0].bops, cands[-1].bops
    bins: dict[int, Candidate] = {}
    for c in cands:
        if hi == lo:
            b = 0
        else:
            frac = (math.log(c.bops) - math.log(lo)) / (math.log(hi) - math.log(lo))
            b = min(k - 1, int(frac * k))
        best = bins.get(b)
        if best is None or (c.error, c.bops) < (best.error, best.bops):
            bins[b] = c
    return {names[b]: bins[b] for b in sorted(bins)}

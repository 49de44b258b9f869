"""Two-objective evolutionary search over the generator's latent space.

Standard elitist machinery: fast non-dominated sorting, crowding
distances, binary tournaments, simulated binary crossover and bounded
polynomial mutation, with (mu + lambda) truncation.  Both objectives
(divergence, diversity) are maximized.

Every stochastic draw flows from the single seeded generator in
run_search, so identically configured eval-budget runs are replayable
bit for bit.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import clustering
from .core import Image, LatentVector
from .fitness import Archive, archive_insert, diversity_fitness, evaluate, make_record


@dataclass
class SearchConfig:
    population_size: int = 100
    latent_dim: int = 100
    crossover_rate: float = 0.9
    mutation_rate: float = 0.1
    mutation_gene_prob: float | None = None   # None: 1 / latent_dim
    eta_crossover: float = 15.0
    eta_mutation: float = 20.0
    latent_low: float = -1.0
    latent_high: float = 1.0
    budget_evaluations: int | None = None
    budget_seconds: float | None = None
    seed: int = 0
    workers: int = 1
    cluster_min_size: int = 5
    cluster_k_core: int = 5
    reduce_dim: int = 8

    def __post_init__(self):
        if self.population_size < 4 or self.population_size % 2:
            raise ValueError("population size must be even and at least 4")
        if self.latent_dim < 1:
            raise ValueError("latent dimension must be positive")
        for name in ("crossover_rate", "mutation_rate"):
            rate = getattr(self, name)
            if not 0.0 <= rate <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.mutation_gene_prob is not None and \
                not 0.0 < self.mutation_gene_prob <= 1.0:
            raise ValueError("mutation_gene_prob must lie in (0, 1]")
        if self.eta_crossover <= 0 or self.eta_mutation <= 0:
            raise ValueError("distribution indices must be positive")
        if self.latent_low >= self.latent_high:
            raise ValueError("latent bounds must satisfy low < high")
        if (self.budget_evaluations is None) == (self.budget_seconds is None):
            raise ValueError("set exactly one of budget_evaluations / budget_seconds")
        if self.budget_evaluations is not None and self.budget_evaluations < 0:
            raise ValueError("evaluation budget must be non-negative")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")


@dataclass
class Individual:
    genome: LatentVector
    divergence: float | None = None
    diversity: float | None = None
    rank: int = 0
    crowding: float = 0.0
    evaluated: bool = False
    image: Image | None = field(default=None, repr=False)

    @property
    def objectives(self) -> tuple[float, float]:
        if not self.evaluated:
            raise ValueError("individual has not been evaluated")
        return (self.divergence, self.diversity)


def non_dominated_sort(objs) -> list[list[int]]:
    """Partition points into Pareto fronts (maximization on every axis).

    p dominates q iff p >= q on both objectives and p > q on at least one.
    """
    pts = [tuple(o) for o in objs]
    if not pts:
        raise ValueError("cannot sort an empty objective list")
    n = len(pts)
    dominated_by: list[list[int]] = [[] for _ in range(n)]
    dom_count = [0] * n
    for p in range(n):
        for q in range(n):
            if p == q:
                continue
            if _dominates(pts[p], pts[q]):
                dominated_by[p].append(q)
            elif _dominates(pts[q], pts[p]):
                dom_count[p] += 1
    fronts = [[p for p in range(n) if dom_count[p] == 0]]
    while True:
        nxt = []
        for p in fronts[-1]:
            for q in dominated_by[p]:
                dom_count[q] -= 1
                if dom_count[q] == 0:
                    nxt.append(q)
        if not nxt:
            return fronts
        fronts.append(sorted(nxt))


def _dominates(a: tuple, b: tuple) -> bool:
    return all(x >= y for x, y in zip(a, b)) and any(x > y for x, y in zip(a, b))


def crowding_distance(front_objs) -> list[float]:
    """Per-point crowding inside one front.

    Boundary points on any objective get +inf; interior points sum the
    neighbor spread over the objective range.  An objective with zero
    range contributes nothing.
    """
    pts = [tuple(o) for o in front_objs]
    n = len(pts)
    if n == 0:
        return []
    if n <= 2:
        return [float("inf")] * n
    dist = [0.0] * n
    for m in range(len(pts[0])):
        vals = np.array([p[m] for p in pts])
        span = float(vals.max() - vals.min())
        if span == 0.0:
            continue
        order = np.argsort(vals, kind="stable")
        dist[order[0]] = float("inf")
        dist[order[-1]] = float("inf")
        for k in range(1, n - 1):
            idx = order[k]
            if dist[idx] != float("inf"):
                dist[idx] += float(vals[order[k + 1]] - vals[order[k - 1]]) / span
    return dist


def tournament_select(pop: list[Individual], rng: np.random.Generator) -> Individual:
    """Binary tournament: lower rank wins, ties go to larger crowding,
    remaining ties are decided by a coin flip."""
    if not pop:
        raise ValueError("cannot select from an empty population")
    i, j = rng.integers(0, len(pop), size=2)
    a, b = pop[int(i)], pop[int(j)]
    if a.rank != b.rank:
        return a if a.rank < b.rank else b
    if a.crowding != b.crowding:
        return a if a.crowding > b.crowding else b
    return a if rng.random() < 0.5 else b


def sbx_pair(v1: np.ndarray, v2: np.ndarray, beta) -> tuple[np.ndarray, np.ndarray]:
    """The crossover blend itself: children straddle the parent mean."""
    c1 = 0.5 * ((1.0 + beta) * v1 + (1.0 - beta) * v2)
    c2 = 0.5 * ((1.0 - beta) * v1 + (1.0 + beta) * v2)
    return c1, c2


def sbx_crossover(p1: LatentVector, p2: LatentVector, eta: float,
                  rng: np.random.Generator, low: float, high: float,
                  per_gene_prob: float = 0.5) -> tuple[LatentVector, LatentVector]:
    """Simulated binary crossover, applied gene-wise with the usual
    50 percent exchange convention, clamped to the bounds."""
    v1 = p1.values
    v2 = p2.values
    if v1.size != v2.size:
        raise ValueError(f"genome length mismatch: {v1.size} vs {v2.size}")
    n = v1.size
    apply_mask = rng.random(n) < per_gene_prob
    u = rng.random(n)
    beta = np.where(
        u <= 0.5,
        (2.0 * u) ** (1.0 / (eta + 1.0)),
        (1.0 / (2.0 * (1.0 - u))) ** (1.0 / (eta + 1.0)),
    )
    beta = np.where(apply_mask, beta, 1.0)  # beta = 1 leaves genes untouched
    c1, c2 = sbx_pair(v1, v2, beta)
    return (LatentVector(np.clip(c1, low, high)),
            LatentVector(np.clip(c2, low, high)))


def polynomial_mutation(x: LatentVector, eta: float, per_gene_prob: float,
                        rng: np.random.Generator, low: float, high: float) -> LatentVector:
    """Bounded polynomial mutation."""
    v = x.values
    if np.any(v < low) or np.any(v > high):
        raise ValueError("genome must lie inside the bounds before mutation")
    out = v.copy()
    span = high - low
    mask = rng.random(v.size) < per_gene_prob
    u = rng.random(v.size)
    for i in np.nonzero(mask)[0]:
        d1 = (v[i] - low) / span
        d2 = (high - v[i]) / span
        if u[i] <= 0.5:
            dq = (2.0 * u[i] + (1.0 - 2.0 * u[i]) * (1.0 - d1) ** (eta + 1.0)) \
                ** (1.0 / (eta + 1.0)) - 1.0
        else:
            dq = 1.0 - (2.0 * (1.0 - u[i]) + 2.0 * (u[i] - 0.5)
                        * (1.0 - d2) ** (eta + 1.0)) ** (1.0 / (eta + 1.0))
        out[i] = v[i] + dq * span
    return LatentVector(np.clip(out, low, high))


def _rank_population(pop: list[Individual]):
    fronts = non_dominated_sort([ind.objectives for ind in pop])
    for rank, front in enumerate(fronts):
        crowd = crowding_distance([pop[i].objectives for i in front])
        for i, c in zip(front, crowd):
            pop[i].rank = rank
            pop[i].crowding = c
    return fronts


def _environmental_select(pop: list[Individual], target: int) -> list[Individual]:
    """Elitist truncation: fill by front, cut the boundary front by
    descending crowding (stable on index for determinism)."""
    fronts = _rank_population(pop)
    survivors: list[Individual] = []
    for front in fronts:
        if len(survivors) + len(front) <= target:
            survivors.extend(pop[i] for i in front)
        else:
            remaining = target - len(survivors)
            order = sorted(front, key=lambda i: -pop[i].crowding)
            survivors.extend(pop[i] for i in order[:remaining])
            break
    return survivors


class _Budget:
    def __init__(self, cfg: SearchConfig):
        self.max_evals = cfg.budget_evaluations
        self.max_seconds = cfg.budget_seconds
        self.start = time.monotonic()
        self.used = 0

    def remaining_evals(self, want: int) -> int:
        if self.max_evals is None:
            return want
        return max(0, min(want, self.max_evals - self.used))

    def exhausted(self) -> bool:
        if self.max_evals is not None:
            return self.used >= self.max_evals
        return time.monotonic() - self.start >= self.max_seconds


def run_search(cfg: SearchConfig, generator, model_a, model_b,
               observer=None) -> Archive:
    """Run the full loop and return the archive of triggering inputs.

    Each individual is evaluated exactly once, when it is created;
    triggering evaluations enter the archive immediately.  The
    representatives snapshot that feeds the diversity objective is
    frozen at the start of each generation, for parents and offspring
    alike.  Wall-clock budgets are checked at generation boundaries, so
    a run can overshoot by at most one generation.
    """
    if generator.latent_dim != cfg.latent_dim:
        raise ValueError(
            f"generator latent dim {generator.latent_dim} != config {cfg.latent_dim}")
    if model_a.n_classes != model_b.n_classes:
        raise ValueError(
            f"classifiers disagree on class count: "
            f"{model_a.n_classes} vs {model_b.n_classes}")

    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    archive = Archive()
    budget = _Budget(cfg)
    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None

    def eval_batch(batch: list[Individual], reps: list[Image], generation: int):
        zs = [ind.genome for ind in batch]
        evals = list(range(budget.used, budget.used + len(batch)))
        if pool is not None:
            results = list(pool.map(
                lambda zi: evaluate(zi[0], generator, model_a, model_b, reps,
                                    evaluation_index=zi[1]),
                zip(zs, evals)))
        else:
            results = [evaluate(z, generator, model_a, model_b, reps,
                                evaluation_index=e)
                       for z, e in zip(zs, evals)]
        for ind, res, eval_idx in zip(batch, results, evals):
            ind.divergence = res.divergence
            ind.diversity = res.diversity
            ind.image = res.image
            ind.evaluated = True
            if res.triggering:
                archive_insert(archive, make_record(ind.genome, res,
                                                    generation, eval_idx))
        budget.used += len(batch)
        archive.total_evaluations = budget.used

    try:
        span = cfg.latent_high - cfg.latent_low
        n_init = budget.remaining_evals(cfg.population_size)
        if cfg.budget_seconds is not None and cfg.budget_seconds <= 0:
            n_init = 0
        if n_init == 0:
            return archive
        parents = [Individual(LatentVector(
            cfg.latent_low + span * rng.random(cfg.latent_dim)))
            for _ in range(cfg.population_size)]

        generation = 0
        reps: list[Image] = []
        archive.representatives = reps
        eval_batch(parents[:n_init], reps, generation)
        parents = [p for p in parents if p.evaluated]
        _rank_population(parents)
        if observer is not None:
            observer(generation, archive, parents)

        last_refresh_size = -1
        per_gene_mut = (cfg.mutation_gene_prob if cfg.mutation_gene_prob is not None
                        else 1.0 / cfg.latent_dim)
        while not budget.exhausted():
            n_off = budget.remaining_evals(cfg.population_size)
            if n_off == 0:
                break
            generation += 1

            if len(archive) != last_refresh_size:
                reps = clustering.refresh_representatives(
                    archive, target_dim=cfg.reduce_dim,
                    min_cluster_size=cfg.cluster_min_size,
                    k_core=cfg.cluster_k_core, seed=cfg.seed)
                archive.representatives = reps
                last_refresh_size = len(archive)

            for ind in parents:
                ind.diversity = diversity_fitness(ind.image, reps)
            _rank_population(parents)

            offspring: list[Individual] = []
            while len(offspring) < n_off:
                pa = tournament_select(parents, rng)
                pb = tournament_select(parents, rng)
                if rng.random() < cfg.crossover_rate:
                    ca, cb = sbx_crossover(pa.genome, pb.genome,
                                           cfg.eta_crossover, rng,
                                           cfg.latent_low, cfg.latent_high)
                else:
                    ca, cb = pa.genome, pb.genome
                for child in (ca, cb):
                    if rng.random() < cfg.mutation_rate:
                        child = polynomial_mutation(
                            child, cfg.eta_mutation, per_gene_mut, rng,
                            cfg.latent_low, cfg.latent_high)
                    offspring.append(Individual(child))
            offspring = offspring[:n_off]

            eval_batch(offspring, reps, generation)
            parents = _environmental_select(parents + offspring,
                                            cfg.population_size)
            if observer is not None:
                observer(generation, archive, parents)
    finally:
        if pool is not None:
            pool.shutdown(wait=False)
    return archive

"""NSGA-II over architecture genomes.

Objectives are (size_bytes to minimize, accuracy to maximize); dominance and
all internal arithmetic use the canonical minimization form (size, -accuracy).
Genetic operators run on real-coded choice indices with round-and-clamp, so
the standard eta-parameterized SBX and polynomial mutation apply to the
categorical genes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .archspace import ArchGenome, SearchSpaceSpec, decode, encode, phenotype, sample_random
from .rng import substream


@dataclass(frozen=True)
class ObjectiveVector:
    size_bytes: float
    accuracy: float

    def __post_init__(self):
        if not (math.isfinite(self.size_bytes) and math.isfinite(self.accuracy)):
            raise ValueError(f"non-finite objectives ({self.size_bytes}, {self.accuracy})")

    def canonical(self) -> tuple[float, float]:
        return (self.size_bytes, -self.accuracy)


@dataclass(frozen=True)
class GAConfig:
    generations: int
    seed: int
    pop_size: int = 50
    p_crossover: float = 0.9
    eta_crossover: float = 15.0
    p_mutation: float = 0.02
    eta_mutation: float = 20.0

    def __post_init__(self):
        if not (0.0 <= self.p_crossover <= 1.0 and 0.0 <= self.p_mutation <= 1.0):
            raise ValueError("probabilities must lie in [0, 1]")
        if self.eta_crossover <= 0 or self.eta_mutation <= 0:
            raise ValueError("etas must be positive")
        if self.pop_size < 2 or self.pop_size % 2:
            raise ValueError("pop_size must be even and >= 2")
        if self.generations < 0:
            raise ValueError("generations must be >= 0")


def _canonical_array(objs: Sequence[ObjectiveVector]) -> np.ndarray:
    if not objs:
        raise ValueError("objective list must be non-empty")
    return np.asarray([o.canonical() for o in objs], dtype=np.float64)


def non_dominated_sort(objs: Sequence[ObjectiveVector]) -> list[list[int]]:
    """Deb's fast non-dominated sort; front 0 is the non-dominated set."""
    c = _canonical_array(objs)
    le = (c[:, None, :] <= c[None, :, :]).all(axis=-1)
    lt = (c[:, None, :] < c[None, :, :]).any(axis=-1)
    dominates = le & lt
    n_dominators = dominates.sum(axis=0)
    fronts = []
    remaining = n_dominators.copy()
    assigned = np.zeros(len(objs), dtype=bool)
    while not assigned.all():
        current = np.flatnonzero((remaining == 0) & ~assigned)
        fronts.append([int(i) for i in current])
        assigned[current] = True
        remaining = remaining - dominates[current].sum(axis=0)
    return fronts


def crowding_distance(objs: Sequence[ObjectiveVector]) -> list[float]:
    """Per-point diversity: sum of normalized neighbor gaps per objective.

    Distances are computed over distinct objective vectors, with neighbor
    gaps taken over distinct per-objective values, so the result depends
    only on the multiset of points and not on input order. Every copy of a
    duplicated vector gets 0 so duplicates never outrank distinct points;
    a unique vector holding an objective's extreme value gets +inf.
    """
    c = _canonical_array(objs)
    n = c.shape[0]
    if n <= 2:
        return [math.inf] * n
    rows, inverse, counts = np.unique(c, axis=0, return_inverse=True, return_counts=True)
    row_dist = np.zeros(rows.shape[0])
    for col in range(rows.shape[1]):
        vals = rows[:, col]
        uniq = np.unique(vals)
        if uniq.size == 1:
            continue
        rng = uniq[-1] - uniq[0]
        pos = np.searchsorted(uniq, vals)
        at_edge = (pos == 0) | (pos == uniq.size - 1)
        row_dist[at_edge] = math.inf
        interior = ~at_edge
        gaps = (uniq[pos[interior] + 1] - uniq[pos[interior] - 1]) / rng
        row_dist[interior] += gaps
    row_dist[counts > 1] = 0.0
    dist = row_dist[inverse]
    return [float(x) for x in dist]


def _sbx_pair(x1: float, x2: float, eta: float, u: float) -> tuple[float, float]:
    if u <= 0.5:
        beta = (2.0 * u) ** (1.0 / (eta + 1.0))
    else:
        beta = (1.0 / (2.0 * (1.0 - u))) ** (1.0 / (eta + 1.0))
    c1 = 0.5 * ((1.0 + beta) * x1 + (1.0 - beta) * x2)
    c2 = 0.5 * ((1.0 - beta) * x1 + (1.0 + beta) * x2)
    return c1, c2


def _round_clamp(x: float, hi: int) -> int:
    return int(min(hi, max(0, math.floor(x + 0.5))))


def sbx_crossover(
    parent_a: ArchGenome,
    parent_b: ArchGenome,
    config: GAConfig,
    rng: np.random.Generator,
    space: SearchSpaceSpec,
) -> tuple[ArchGenome, ArchGenome]:
    """Simulated binary crossover on choice indices; fires per pair with p_crossover.

    Follows the canonical real-coded operator: each gene crosses with
    probability 0.5 (others copy through), and a crossed gene's two children
    swap sides with probability 0.5. The swap is what recombines integer
    genes; without it the spread factor rarely clears the rounding threshold
    and crossover degenerates to cloning.
    """
    if rng.random() >= config.p_crossover:
        return parent_a, parent_b
    va = encode(parent_a, space)
    vb = encode(parent_b, space)
    highs = [len(space.layer_choices) - 1] + [len(space.inter_choices) - 1] * space.dims.max_layers
    ca, cb = [], []
    for x1, x2, hi in zip(va, vb, highs):
        if rng.random() >= 0.5 or x1 == x2:
            ca.append(x1)
            cb.append(x2)
            continue
        u = rng.random()
        c1, c2 = _sbx_pair(float(x1), float(x2), config.eta_crossover, u)
        if rng.random() < 0.5:
            c1, c2 = c2, c1
        ca.append(_round_clamp(c1, hi))
        cb.append(_round_clamp(c2, hi))
    return decode(ca, space), decode(cb, space)


def polynomial_mutation(
    genome: ArchGenome,
    config: GAConfig,
    rng: np.random.Generator,
    space: SearchSpaceSpec,
    return_fired: bool = False,
):
    """Bounded polynomial mutation on choice indices; fires per gene with p_mutation."""
    vec = encode(genome, space)
    highs = [len(space.layer_choices) - 1] + [len(space.inter_choices) - 1] * space.dims.max_layers
    eta = config.eta_mutation
    fired = 0
    out = []
    for x, hi in zip(vec, highs):
        if rng.random() >= config.p_mutation:
            out.append(x)
            continue
        fired += 1
        if hi == 0:
            out.append(x)
            continue
        u = rng.random()
        d1 = x / hi
        d2 = (hi - x) / hi
        if u < 0.5:
            dq = (2.0 * u + (1.0 - 2.0 * u) * (1.0 - d1) ** (eta + 1.0)) ** (1.0 / (eta + 1.0)) - 1.0
        else:
            dq = 1.0 - (2.0 * (1.0 - u) + 2.0 * (u - 0.5) * (1.0 - d2) ** (eta + 1.0)) ** (1.0 / (eta + 1.0))
        out.append(_round_clamp(x + dq * hi, hi))
    mutated = decode(out, space)
    return (mutated, fired) if return_fired else mutated


def rank_and_crowding(objs: Sequence[ObjectiveVector]) -> tuple[np.ndarray, np.ndarray]:
    """Front index and crowding distance per population member."""
    fronts = non_dominated_sort(objs)
    ranks = np.empty(len(objs), dtype=np.int64)
    crowd = np.empty(len(objs), dtype=np.float64)
    for r, front in enumerate(fronts):
        ranks[front] = r
        dists = crowding_distance([objs[i] for i in front])
        for i, dv in zip(front, dists):
            crowd[i] = dv
    return ranks, crowd


def _tournament_winner(i: int, j: int, ranks: np.ndarray, crowd: np.ndarray) -> int:
    if ranks[i] != ranks[j]:
        return i if ranks[i] < ranks[j] else j
    if crowd[i] != crowd[j]:
        return i if crowd[i] > crowd[j] else j
    return min(i, j)


def _environmental_selection(
    objs: Sequence[ObjectiveVector], keys: Sequence, n: int
) -> list[int]:
    """Elitist truncation to n by (front, crowding desc, index).

    Candidates are deduplicated by `keys` (phenotype) before front filling so
    copies of one converged point cannot crowd distinct candidates out of the
    population; held-back copies refill only when distinct candidates run out.
    """
    first: dict = {}
    for i, k in enumerate(keys):
        first.setdefault(k, i)
    distinct = sorted(first.values())
    sub_objs = [objs[i] for i in distinct]
    fronts = non_dominated_sort(sub_objs)
    chosen: list[int] = []
    for front in fronts:
        if len(chosen) + len(front) <= n:
            chosen.extend(front)
            continue
        dists = crowding_distance([sub_objs[t] for t in front])
        order = sorted(range(len(front)), key=lambda t: (-dists[t], front[t]))
        chosen.extend(front[t] for t in order[: n - len(chosen)])
        break
    keep = [distinct[t] for t in chosen]
    if len(keep) < n:
        dupes = [i for i, k in enumerate(keys) if first[k] != i]
        keep.extend(dupes[: n - len(keep)])
    return keep


def nsga2_run(
    space: SearchSpaceSpec,
    evaluate: Callable[[ArchGenome], ObjectiveVector],
    config: GAConfig,
) -> list[tuple[ArchGenome, ObjectiveVector]]:
    """Standard generational loop; deterministic for a fixed config seed.

    `evaluate` maps a genome to its objectives; failures are re-raised with
    the generation in which they occurred.
    """
    init_gen = substream(config.seed, "init")
    tourn_gen = substream(config.seed, "tournament")
    sbx_gen = substream(config.seed, "sbx")
    mut_gen = substream(config.seed, "mutation")

    def run_eval(genome: ArchGenome, generation: int) -> ObjectiveVector:
        try:
            return evaluate(genome)
        except Exception as exc:
            raise RuntimeError(f"evaluator failed at generation {generation}") from exc

    pop = [sample_random(space, init_gen) for _ in range(config.pop_size)]
    objs = [run_eval(g, 0) for g in pop]

    for gen in range(1, config.generations + 1):
        ranks, crowd = rank_and_crowding(objs)
        parents = []
        for _ in range(config.pop_size):
            i, j = tourn_gen.integers(config.pop_size, size=2)
            parents.append(_tournament_winner(int(i), int(j), ranks, crowd))
        offspring = []
        for a, b in zip(parents[0::2], parents[1::2]):
            c1, c2 = sbx_crossover(pop[a], pop[b], config, sbx_gen, space)
            offspring.append(polynomial_mutation(c1, config, mut_gen, space))
            offspring.append(polynomial_mutation(c2, config, mut_gen, space))
        off_objs = [run_eval(g, gen) for g in offspring]
        merged = pop + offspring
        merged_objs = objs + off_objs
        keys = [phenotype(g, space) for g in merged]
        keep = _environmental_selection(merged_objs, keys, config.pop_size)
        pop = [merged[i] for i in keep]
        objs = [merged_objs[i] for i in keep]
    return list(zip(pop, objs))

"""Predictor-guided multi-objective search loop plus a random-search baseline.

Each round fits an accuracy predictor on every measured record, runs an inner
NSGA-II on (exact analytic size, predicted accuracy), then promotes the most
promising not-yet-measured phenotypes for real evaluation. The budget counts
unique measured phenotypes; no phenotype is ever measured twice.
"""

from __future__ import annotations

import sys
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import predictor
from .archspace import (
    ArchGenome,
    ArchPhenotype,
    BytePolicy,
    SearchSpaceSpec,
    cardinality,
    enumerate_genomes,
    model_bytes,
    phenotype,
    sample_random,
)
from .nsga2 import GAConfig, ObjectiveVector, nsga2_run, rank_and_crowding
from .rng import substream, substream_seed

ENUMERABLE_LIMIT = 1_000_000


@dataclass(frozen=True)
class SearchConfig:
    budget: int = 250
    pop_size: int = 50
    inner_generations: int = 100
    ga: GAConfig | None = None
    seed: int = 0
    evaluator_id: str = ""

    def __post_init__(self):
        if self.budget < self.pop_size:
            raise ValueError("budget must be at least pop_size")
        if self.inner_generations < 1:
            raise ValueError("inner_generations must be >= 1")

    def inner_ga(self, round_seed: int) -> GAConfig:
        base = self.ga or GAConfig(generations=self.inner_generations, seed=0)
        return GAConfig(
            generations=self.inner_generations,
            seed=round_seed,
            pop_size=base.pop_size,
            p_crossover=base.p_crossover,
            eta_crossover=base.eta_crossover,
            p_mutation=base.p_mutation,
            eta_mutation=base.eta_mutation,
        )


@dataclass(frozen=True)
class EvalRecord:
    genome: ArchGenome
    size_bytes: int
    accuracy: float
    measured: bool
    round_index: int
    seed: int
    timestamp: float
    throughput_tok_per_s: float | None = None


@dataclass
class SearchHistory:
    records: list[EvalRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)


def measured_front_hv(history: SearchHistory) -> float:
    """Hypervolume of the measured front at the fixed per-history reference."""
    from .analysis import history_reference, hypervolume_2d, pareto_front

    front = pareto_front(history)
    return hypervolume_2d(front, history_reference(history))


def _log_progress(round_index: int, history: SearchHistory) -> None:
    hv = measured_front_hv(history)
    print(f"round={round_index} measured={len(history)} hv={hv:.6g}", file=sys.stderr)


def _measure(evaluator, genome: ArchGenome, round_index: int) -> EvalRecord:
    res = evaluator.measure(genome)
    return EvalRecord(
        genome=genome,
        size_bytes=res.size_bytes,
        accuracy=res.accuracy,
        measured=res.measured,
        round_index=round_index,
        seed=res.seed,
        timestamp=time.time(),
        throughput_tok_per_s=res.throughput_tok_per_s,
    )


def _random_unique(
    space: SearchSpaceSpec,
    rng: np.random.Generator,
    seen: set[ArchPhenotype],
    want: int,
) -> list[ArchGenome]:
    """Up to `want` random genomes with fresh phenotypes; short when exhausted.

    After persistent rejection the remaining phenotypes are enumerated
    directly (only possible for spaces small enough to enumerate).
    """
    out: list[ArchGenome] = []
    taken = set(seen)
    misses = 0
    while len(out) < want and misses < 200 * (want + 1):
        g = sample_random(space, rng)
        ph = phenotype(g, space)
        if ph in taken:
            misses += 1
            continue
        taken.add(ph)
        out.append(g)
        misses = 0
    if len(out) < want and cardinality(space) <= ENUMERABLE_LIMIT:
        fresh = []
        seen_enum = set(taken)
        for g in enumerate_genomes(space):
            ph = phenotype(g, space)
            if ph not in seen_enum:
                seen_enum.add(ph)
                fresh.append(g)
        order = rng.permutation(len(fresh))
        out.extend(fresh[i] for i in order[: want - len(out)])
    return out


def select_next_batch(
    inner_population: list[tuple[ArchGenome, ObjectiveVector]],
    measured: set[ArchPhenotype],
    pop_size: int,
    rng: np.random.Generator,
    space: SearchSpaceSpec,
) -> list[ArchGenome]:
    """Promising unmeasured phenotypes ordered by (rank, crowding, genome text).

    Shortfall is topped up with random unmeasured genomes.
    """
    batch: list[ArchGenome] = []
    taken: set[ArchPhenotype] = set()
    if inner_population:
        objs = [o for _, o in inner_population]
        ranks, crowd = rank_and_crowding(objs)
        order = sorted(
            range(len(inner_population)),
            key=lambda i: (ranks[i], -crowd[i], inner_population[i][0].to_text()),
        )
        for i in order:
            if len(batch) >= pop_size:
                break
            g = inner_population[i][0]
            ph = phenotype(g, space)
            if ph in measured or ph in taken:
                continue
            taken.add(ph)
            batch.append(g)
    if len(batch) < pop_size:
        batch.extend(_random_unique(space, rng, measured | taken, pop_size - len(batch)))
    return batch


def linas_run(space: SearchSpaceSpec, evaluator, config: SearchConfig) -> SearchHistory:
    """Alternating measure/predict search; stops at `budget` measured phenotypes."""
    history = SearchHistory()
    seen: set[ArchPhenotype] = set()

    def measure_all(genomes: list[ArchGenome], round_index: int) -> None:
        for g in genomes:
            history.records.append(_measure(evaluator, g, round_index))
            seen.add(phenotype(g, space))

    init_rng = substream(config.seed, "linas/round0")
    measure_all(_random_unique(space, init_rng, seen, min(config.pop_size, config.budget)), 0)
    _log_progress(0, history)

    round_index = 0
    while len(history) < config.budget:
        round_index += 1
        records = [(predictor.featurize(r.genome, space), r.accuracy) for r in history.records]
        model = predictor.fit(records)

        def inner_eval(genome: ArchGenome) -> ObjectiveVector:
            size = model_bytes(phenotype(genome, space), space.dims, BytePolicy.FP16_ALL).bytes
            return ObjectiveVector(size_bytes=size, accuracy=predictor.predict(model, genome, space))

        inner_cfg = config.inner_ga(substream_seed(config.seed, f"linas/inner/{round_index}"))
        inner_pop = nsga2_run(space, inner_eval, inner_cfg)

        want = min(config.pop_size, config.budget - len(history))
        topup_rng = substream(config.seed, f"linas/topup/{round_index}")
        batch = select_next_batch(inner_pop, seen, want, topup_rng, space)
        if not batch:
            warnings.warn(
                f"phenotype space exhausted after {len(history)} measurements "
                f"(budget {config.budget})"
            )
            break
        measure_all(batch, round_index)
        _log_progress(round_index, history)
    return history


def random_search(space: SearchSpaceSpec, evaluator, budget: int, seed: int) -> SearchHistory:
    """Baseline: measure `budget` unique random phenotypes."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    history = SearchHistory()
    rng = substream(seed, "random-search")
    genomes = _random_unique(space, rng, set(), budget)
    if len(genomes) < budget:
        warnings.warn(
            f"phenotype space exhausted after {len(genomes)} measurements (budget {budget})"
        )
    for g in genomes:
        history.records.append(_measure(evaluator, g, 0))
    return history

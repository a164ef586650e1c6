"""Post-search analysis: Pareto front, 2-D hypervolume, and the probability
tables relating accuracy percentiles to layer-count and per-layer width
choices. CSV emission formats live here too.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .archspace import ArchGenome, ArchPhenotype
from .linas import EvalRecord, SearchHistory

_GIB = 2**30


class EmptySubsetError(ValueError):
    """Percentile filtering left no records."""


@dataclass(frozen=True)
class FrontPoint:
    genome: ArchGenome
    size_bytes: int
    accuracy: float


@dataclass(frozen=True)
class ParetoFront:
    points: tuple[FrontPoint, ...]
    source: str = ""

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class ProbabilityTable:
    percentile: float
    conditioning: tuple[str, int] | None
    rows: dict[int, float]


def _genome_phenotype(genome: ArchGenome) -> ArchPhenotype:
    return genome.inter_sizes[: genome.layer_count]


def _measured(history: SearchHistory) -> list[EvalRecord]:
    return [r for r in history.records if r.measured]


def pareto_front(history: SearchHistory, source: str = "") -> ParetoFront:
    """Maximal set under (min size, max accuracy), deduplicated by phenotype."""
    records = _measured(history)
    if not records:
        raise ValueError("history contains no measured records")
    by_pheno: dict[ArchPhenotype, EvalRecord] = {}
    for r in records:
        by_pheno.setdefault(_genome_phenotype(r.genome), r)
    ordered = sorted(
        by_pheno.values(),
        key=lambda r: (r.size_bytes, -r.accuracy, r.genome.to_text()),
    )
    points = []
    best = -math.inf
    for r in ordered:
        if r.accuracy > best:
            points.append(FrontPoint(genome=r.genome, size_bytes=r.size_bytes, accuracy=r.accuracy))
            best = r.accuracy
    return ParetoFront(points=tuple(points), source=source)


def history_reference(history: SearchHistory) -> tuple[float, float]:
    """Fixed hypervolume reference: 1.1x the largest measured size, zero accuracy."""
    sizes = [r.size_bytes for r in _measured(history)]
    if not sizes:
        raise ValueError("history contains no measured records")
    return (1.1 * max(sizes), 0.0)


def hypervolume_2d(front, reference: tuple[float, float]) -> float:
    """Area dominated by the points within the reference box.

    Accepts a ParetoFront or an iterable of (size, accuracy) pairs; dominated
    and duplicate inputs are tolerated (they add no area).
    """
    if isinstance(front, ParetoFront):
        pts = [(p.size_bytes, p.accuracy) for p in front.points]
    else:
        pts = [(float(s), float(a)) for s, a in front]
    size_ref, acc_ref = reference
    for s, a in pts:
        if s > size_ref or a < acc_ref:
            raise ValueError(f"point ({s}, {a}) falls outside reference box {reference}")
    area = 0.0
    best = acc_ref
    for s, a in sorted(pts, key=lambda p: (p[0], -p[1])):
        if a > best:
            area += (size_ref - s) * (a - best)
            best = a
    return area


def _percentile_subset(records: Sequence[EvalRecord], p: float) -> list[EvalRecord]:
    if not 0.0 < p <= 100.0:
        raise ValueError(f"percentile must lie in (0, 100], got {p}")
    accs = np.asarray([r.accuracy for r in records])
    threshold = float(np.quantile(accs, 1.0 - p / 100.0))
    subset = [r for r in records if r.accuracy >= threshold]
    if not subset:
        raise EmptySubsetError(
            f"no records at or above accuracy threshold {threshold:.6g} "
            f"(upper {p:g}th percentile of {len(records)} records)"
        )
    return subset


def _distribution(values: Iterable[int]) -> dict[int, float]:
    values = list(values)
    rows: dict[int, float] = {}
    for v in values:
        rows[v] = rows.get(v, 0.0) + 1.0
    return {v: rows[v] / len(values) for v in sorted(rows)}


def layer_count_probs(history: SearchHistory, p: float) -> ProbabilityTable:
    """Empirical layer-count distribution among the upper p-th accuracy percentile."""
    records = _measured(history)
    if not records:
        raise EmptySubsetError("history contains no measured records")
    subset = _percentile_subset(records, p)
    return ProbabilityTable(
        percentile=p,
        conditioning=None,
        rows=_distribution(r.genome.layer_count for r in subset),
    )


def inter_size_probs(history: SearchHistory, layer_count: int, p: float) -> list[ProbabilityTable]:
    """Per-layer width distributions among top-accuracy records of one depth.

    Records are first restricted to exactly `layer_count` layers; the
    percentile threshold is computed within that stratum.
    """
    records = [r for r in _measured(history) if r.genome.layer_count == layer_count]
    if not records:
        raise EmptySubsetError(
            f"no measured records with layer_count={layer_count} (percentile {p:g})"
        )
    subset = _percentile_subset(records, p)
    tables = []
    for layer in range(layer_count):
        tables.append(
            ProbabilityTable(
                percentile=p,
                conditioning=("layer_count", layer_count),
                rows=_distribution(r.genome.inter_sizes[layer] for r in subset),
            )
        )
    return tables


def write_front_csv(front: ParetoFront, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["size_bytes", "display_gb", "accuracy", "genome"])
        for p in front.points:
            w.writerow([p.size_bytes, f"{p.size_bytes / _GIB:.1f}", repr(p.accuracy), p.genome.to_text()])


def write_layer_probs_csv(table: ProbabilityTable, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["percentile", "layer_count", "probability"])
        for layer_count, prob in table.rows.items():
            w.writerow([f"{table.percentile:g}", layer_count, repr(prob)])


def write_inter_probs_csv(tables: list[ProbabilityTable], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["layer_index", "inter_size", "probability"])
        for idx, table in enumerate(tables):
            for inter_size, prob in table.rows.items():
                w.writerow([idx, inter_size, repr(prob)])

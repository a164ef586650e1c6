"""Desk-scale evaluation tasks and evaluators.

The synthetic corpus is a copy task: records of the form
BOS, p1..pm, SEP, p1..pm with payload length m in [8, 24] and payload tokens
uniform over a 200-symbol alphabet. Multiple-choice items ask the model to
recognize the exact payload copy among corrupted distractors, scored by mean
per-token log-likelihood. A closed-form surrogate evaluator provides a
noise-free stand-in objective for exercising the search stack.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .archspace import (
    ArchGenome,
    BytePolicy,
    SearchSpaceSpec,
    model_bytes,
    phenotype,
    validate_genome,
)
from .elastic_net import SupernetWeights, forward
from .predictor import featurize
from .rng import SplitMix64, substream

BOS_TOKEN = 0
SEP_TOKEN = 1
PAYLOAD_BASE = 2
PAYLOAD_ALPHABET = 200
MIN_PAYLOAD = 8
MAX_PAYLOAD = 24
N_OPTIONS = 4
MIN_CORRUPT = 2
MAX_CORRUPT = 4


@dataclass(frozen=True)
class MCItem:
    prompt: tuple[int, ...]
    options: tuple[tuple[int, ...], ...]
    correct: int


@dataclass(frozen=True)
class EvalResult:
    genome: ArchGenome
    accuracy: float
    size_bytes: int
    measured: bool
    seed: int
    throughput_tok_per_s: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError(f"accuracy {self.accuracy} outside [0, 1]")
        if self.size_bytes <= 0:
            raise ValueError("size_bytes must be positive")


def _payload(gen: np.random.Generator) -> np.ndarray:
    m = int(gen.integers(MIN_PAYLOAD, MAX_PAYLOAD + 1))
    return gen.integers(PAYLOAD_BASE, PAYLOAD_BASE + PAYLOAD_ALPHABET, size=m)


def gen_corpus(seed: int, n_tokens: int) -> np.ndarray:
    """Token stream of concatenated copy records, truncated to n_tokens."""
    if n_tokens < 128:
        raise ValueError("n_tokens must be at least 128")
    gen = substream(seed, "corpus")
    chunks = []
    total = 0
    while total < n_tokens:
        p = _payload(gen)
        rec = np.concatenate(([BOS_TOKEN], p, [SEP_TOKEN], p))
        chunks.append(rec)
        total += rec.size
    return np.concatenate(chunks)[:n_tokens].astype(np.int64)


def gen_mc_suite(seed: int, n_items: int) -> list[MCItem]:
    """Copy-recognition items: 1 exact copy + 3 corrupted payloads, shuffled."""
    if n_items < 1:
        raise ValueError("n_items must be >= 1")
    gen = substream(seed, "mc")
    items = []
    for _ in range(n_items):
        p = _payload(gen)
        options = [tuple(int(t) for t in p)]
        while len(options) < N_OPTIONS:
            distractor = p.copy()
            n_corrupt = int(gen.integers(MIN_CORRUPT, MAX_CORRUPT + 1))
            pos = gen.choice(p.size, size=min(n_corrupt, p.size), replace=False)
            for j in pos:
                old = distractor[j]
                # draw a replacement different from the original symbol
                new = int(gen.integers(PAYLOAD_BASE, PAYLOAD_BASE + PAYLOAD_ALPHABET - 1))
                if new >= old:
                    new += 1
                distractor[j] = new
            cand = tuple(int(t) for t in distractor)
            if cand not in options:
                options.append(cand)
        order = gen.permutation(N_OPTIONS)
        shuffled = tuple(options[i] for i in order)
        correct = int(np.flatnonzero(order == 0)[0])
        prompt = (BOS_TOKEN, *(int(t) for t in p), SEP_TOKEN)
        items.append(MCItem(prompt=prompt, options=shuffled, correct=correct))
    return items


def eval_accuracy(weights: SupernetWeights, pheno, suite: list[MCItem]) -> float:
    """Fraction of items whose correct option has the best mean log-likelihood.

    Options within an item share one length, so items are grouped by total
    sequence length and scored in batches; ties go to the lowest option index.
    """
    return eval_accuracy_fwd(lambda tokens: forward(weights, pheno, tokens), suite)


def eval_accuracy_fwd(forward_fn, suite: list[MCItem]) -> float:
    """MC accuracy for any tokens->logits callable (sliced, extracted, or quantized)."""
    if not suite:
        raise ValueError("suite must be non-empty")
    groups: dict[int, list[int]] = {}
    for idx, item in enumerate(suite):
        groups.setdefault(len(item.prompt) + len(item.options[0]), []).append(idx)

    correct = 0
    for seq_len, idxs in sorted(groups.items()):
        rows = []
        for i in idxs:
            item = suite[i]
            rows.extend([*item.prompt, *opt] for opt in item.options)
        tokens = np.asarray(rows, dtype=np.int64)
        logits = forward_fn(tokens)
        z = logits - logits.max(axis=-1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
        # option token at position t is predicted by logits at t-1
        picked = np.take_along_axis(logp[:, :-1, :], tokens[:, 1:, None], axis=-1)[..., 0]
        for row0, i in zip(range(0, tokens.shape[0], N_OPTIONS), idxs):
            item = suite[i]
            start = len(item.prompt) - 1
            scores = picked[row0 : row0 + N_OPTIONS, start:].mean(axis=1)
            if int(np.argmax(scores)) == item.correct:
                correct += 1
    return correct / len(suite)


def measure_throughput(
    weights: SupernetWeights,
    pheno,
    batch: int,
    seq: int,
    warmup: int = 2,
    reps: int = 5,
) -> float:
    """Median tokens/sec over reps of one forward pass, after warmup runs."""
    if reps < 3:
        raise ValueError("reps must be >= 3")
    gen = substream(0, "throughput")
    tokens = gen.integers(weights.dims.vocab_size, size=(batch, seq))
    for _ in range(warmup):
        forward(weights, pheno, tokens)
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        forward(weights, pheno, tokens)
        dt = time.perf_counter() - t0
        if dt <= 0:
            raise RuntimeError("non-positive forward timing; clock resolution too coarse")
        times.append(dt)
    return batch * seq / float(np.median(times))


class _SurrogateCoefficients:
    """Uniform(-1,1) coefficients drawn once per seed from a splitmix64 stream.

    Linear coefficients come first in feature-index order, then the pairwise
    coefficients in lexicographic (i, j) order with i < j.
    """

    def __init__(self, n_features: int, seed: int):
        sm = SplitMix64(seed)
        self.linear = np.array([sm.next_symmetric() for _ in range(n_features)])
        n_pairs = n_features * (n_features - 1) // 2
        flat = np.array([sm.next_symmetric() for _ in range(n_pairs)])
        self.pair = np.zeros((n_features, n_features))
        iu = np.triu_indices(n_features, k=1)
        self.pair[iu] = flat


_coeff_cache: dict[tuple[int, int], _SurrogateCoefficients] = {}


def surrogate_eval(genome: ArchGenome, space: SearchSpaceSpec, seed: int) -> EvalResult:
    """Closed-form pseudo-accuracy plus exact FP16 size; phenotype-invariant."""
    validate_genome(genome, space)
    x = featurize(genome, space)
    n = x.size
    key = (n, seed)
    if key not in _coeff_cache:
        _coeff_cache[key] = _SurrogateCoefficients(n, seed)
    c = _coeff_cache[key]
    score = (0.8 * float(c.linear @ x) + 0.3 * float(x @ c.pair @ x)) / math.sqrt(n)
    acc = 1.0 / (1.0 + math.exp(-score))
    size = model_bytes(phenotype(genome, space), space.dims, BytePolicy.FP16_ALL).bytes
    return EvalResult(genome=genome, accuracy=acc, size_bytes=size, measured=True, seed=seed)


class SurrogateEvaluator:
    """Deterministic search-stack test oracle; caches results per phenotype."""

    def __init__(self, space: SearchSpaceSpec, seed: int):
        self.space = space
        self.seed = seed
        self._cache: dict[tuple[int, ...], EvalResult] = {}

    def measure(self, genome: ArchGenome) -> EvalResult:
        key = phenotype(genome, self.space)
        hit = self._cache.get(key)
        if hit is None:
            hit = self._cache[key] = surrogate_eval(genome, self.space, self.seed)
        return EvalResult(
            genome=genome,
            accuracy=hit.accuracy,
            size_bytes=hit.size_bytes,
            measured=True,
            seed=self.seed,
        )


class ToyEvaluator:
    """Measures sub-network MC accuracy by slicing trained supernet weights."""

    def __init__(self, weights: SupernetWeights, space: SearchSpaceSpec, suite_seed: int, n_items: int):
        self.weights = weights
        self.space = space
        self.seed = suite_seed
        self.suite = gen_mc_suite(suite_seed, n_items)
        self._cache: dict[tuple[int, ...], float] = {}

    def measure(self, genome: ArchGenome) -> EvalResult:
        pheno = phenotype(genome, self.space)
        acc = self._cache.get(pheno)
        if acc is None:
            acc = self._cache[pheno] = eval_accuracy(self.weights, pheno, self.suite)
        size = model_bytes(pheno, self.space.dims, BytePolicy.FP16_ALL).bytes
        return EvalResult(
            genome=genome, accuracy=acc, size_bytes=size, measured=True, seed=self.seed
        )

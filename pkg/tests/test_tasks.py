"""Copy-task corpus, multiple-choice suite, and evaluators."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from elastic_nas.archspace import parse_genome, sample_random, toy_space
from elastic_nas.rng import substream
from elastic_nas.tasks import (
    BOS_TOKEN,
    MAX_PAYLOAD,
    MIN_PAYLOAD,
    N_OPTIONS,
    PAYLOAD_ALPHABET,
    PAYLOAD_BASE,
    SEP_TOKEN,
    EvalResult,
    SurrogateEvaluator,
    eval_accuracy_fwd,
    gen_corpus,
    gen_mc_suite,
    surrogate_eval,
)


@pytest.fixture(scope="module")
def toy():
    return toy_space()


def split_records(corpus):
    """Records delimited by BOS positions; the tail record may be truncated."""
    starts = np.flatnonzero(corpus == BOS_TOKEN)
    assert starts[0] == 0
    bounds = [*starts, corpus.size]
    return [corpus[bounds[i] : bounds[i + 1]] for i in range(len(starts))]


class TestCorpus:
    def test_record_structure(self):
        corpus = gen_corpus(seed=0, n_tokens=4096)
        records = split_records(corpus)
        for rec in records[:-1]:  # tail may be cut mid-record
            assert rec[0] == BOS_TOKEN
            seps = np.flatnonzero(rec == SEP_TOKEN)
            assert seps.size == 1
            payload = rec[1 : seps[0]]
            echo = rec[seps[0] + 1 :]
            assert MIN_PAYLOAD <= payload.size <= MAX_PAYLOAD
            assert np.array_equal(payload, echo)
            assert payload.min() >= PAYLOAD_BASE
            assert payload.max() < PAYLOAD_BASE + PAYLOAD_ALPHABET

    def test_exact_length_and_dtype(self):
        corpus = gen_corpus(seed=3, n_tokens=2000)
        assert corpus.size == 2000
        assert corpus.dtype == np.int64

    def test_deterministic_and_seeded(self):
        a = gen_corpus(seed=5, n_tokens=1024)
        assert np.array_equal(a, gen_corpus(seed=5, n_tokens=1024))
        assert not np.array_equal(a, gen_corpus(seed=6, n_tokens=1024))

    def test_minimum_tokens(self):
        with pytest.raises(ValueError):
            gen_corpus(seed=0, n_tokens=127)


class TestMcSuite:
    def test_item_shape(self):
        suite = gen_mc_suite(seed=1, n_items=100)
        assert len(suite) == 100
        for item in suite:
            assert len(item.options) == N_OPTIONS
            assert 0 <= item.correct < N_OPTIONS
            assert item.prompt[0] == BOS_TOKEN
            assert item.prompt[-1] == SEP_TOKEN
            payload = item.prompt[1:-1]
            assert MIN_PAYLOAD <= len(payload) <= MAX_PAYLOAD

    def test_exactly_one_exact_copy(self):
        suite = gen_mc_suite(seed=1, n_items=100)
        for item in suite:
            payload = item.prompt[1:-1]
            copies = [i for i, opt in enumerate(item.options) if opt == payload]
            assert copies == [item.correct]

    def test_options_distinct_and_same_length(self):
        suite = gen_mc_suite(seed=2, n_items=100)
        for item in suite:
            assert len(set(item.options)) == N_OPTIONS
            assert len({len(opt) for opt in item.options}) == 1

    def test_distractors_stay_in_alphabet(self):
        suite = gen_mc_suite(seed=2, n_items=50)
        for item in suite:
            for opt in item.options:
                assert min(opt) >= PAYLOAD_BASE
                assert max(opt) < PAYLOAD_BASE + PAYLOAD_ALPHABET

    def test_correct_position_varies(self):
        suite = gen_mc_suite(seed=3, n_items=200)
        assert {item.correct for item in suite} == set(range(N_OPTIONS))

    def test_deterministic(self):
        assert gen_mc_suite(seed=4, n_items=20) == gen_mc_suite(seed=4, n_items=20)

    def test_needs_items(self):
        with pytest.raises(ValueError):
            gen_mc_suite(seed=0, n_items=0)


class TestEvalAccuracyFwd:
    def test_oracle_forward_scores_one(self):
        """A forward that always predicts the next corpus-style token exactly."""
        suite = gen_mc_suite(seed=7, n_items=40)
        target = {}
        for item in suite:
            seq = (*item.prompt, *item.options[item.correct])
            target[seq[: len(item.prompt)]] = seq

        def forward_fn(tokens):
            logits = np.zeros((tokens.shape[0], tokens.shape[1], 256))
            for b in range(tokens.shape[0]):
                row = tuple(int(t) for t in tokens[b])
                for t in range(tokens.shape[1] - 1):
                    key = row[: t + 1]
                    # reward rows that so far match the true continuation
                    for seq in target.values():
                        if seq[: t + 1] == key and t + 1 < len(seq):
                            logits[b, t, seq[t + 1]] = 50.0
                            break
            return logits

        assert eval_accuracy_fwd(forward_fn, suite) == 1.0

    def test_uniform_forward_ties_to_lowest_index(self):
        suite = gen_mc_suite(seed=8, n_items=100)

        def forward_fn(tokens):
            return np.zeros((tokens.shape[0], tokens.shape[1], 256))

        acc = eval_accuracy_fwd(forward_fn, suite)
        expected = sum(1 for item in suite if item.correct == 0) / len(suite)
        assert acc == expected

    def test_empty_suite_rejected(self):
        with pytest.raises(ValueError):
            eval_accuracy_fwd(lambda t: None, [])


class TestSurrogate:
    def test_deterministic(self, toy):
        g = parse_genome("6:64,128,64,128,64,128,64,128", toy)
        a = surrogate_eval(g, toy, seed=42)
        b = surrogate_eval(g, toy, seed=42)
        assert a.accuracy == b.accuracy and a.size_bytes == b.size_bytes

    def test_phenotype_invariance(self, toy):
        a = parse_genome("4:64,128,64,128,64,64,64,64", toy)
        b = parse_genome("4:64,128,64,128,128,128,128,128", toy)
        assert surrogate_eval(a, toy, 42).accuracy == surrogate_eval(b, toy, 42).accuracy

    def test_seed_changes_landscape(self, toy):
        g = parse_genome("6:64,128,64,128,64,128,64,128", toy)
        assert surrogate_eval(g, toy, 42).accuracy != surrogate_eval(g, toy, 43).accuracy

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_accuracy_in_unit_interval(self, toy, seed):
        gen = substream(seed, "surrogate-test")
        g = sample_random(toy, gen)
        res = surrogate_eval(g, toy, seed=42)
        assert 0.0 < res.accuracy < 1.0

    def test_evaluator_caches_by_phenotype(self, toy):
        ev = SurrogateEvaluator(toy, seed=42)
        a = parse_genome("4:64,64,64,64,64,64,64,64", toy)
        b = parse_genome("4:64,64,64,64,128,128,128,128", toy)
        ra, rb = ev.measure(a), ev.measure(b)
        assert ra.accuracy == rb.accuracy
        assert len(ev._cache) == 1


class TestEvalResult:
    def test_accuracy_bounds_enforced(self, toy):
        g = parse_genome("4:64,64,64,64,64,64,64,64", toy)
        with pytest.raises(ValueError):
            EvalResult(genome=g, accuracy=1.5, size_bytes=10, measured=True, seed=0)
        with pytest.raises(ValueError):
            EvalResult(genome=g, accuracy=0.5, size_bytes=0, measured=True, seed=0)

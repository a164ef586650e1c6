"""Alternating supernet/subnet trainer: schedule, determinism, divergence guard."""

import numpy as np
import pytest

import elastic_nas.elastic_net as en
from elastic_nas.archspace import toy_space
from elastic_nas.elastic_net import (
    DivergenceError,
    TrainConfig,
    init_supernet,
    parameter_tensors,
    sample_batch_starts,
    train_instatune,
)
from elastic_nas.tasks import gen_corpus


@pytest.fixture(scope="module")
def toy():
    return toy_space()


@pytest.fixture(scope="module")
def corpus():
    return gen_corpus(seed=0, n_tokens=8192)


def _cfg(**over):
    base = dict(steps=4, batch_size=4, seq_len=64, learning_rate=3e-4, seed=0)
    base.update(over)
    return TrainConfig(**base)


def test_schedule_tags(toy, corpus):
    w = init_supernet(toy.dims, 128, seed=0)
    _, trace = train_instatune(w, toy, corpus, _cfg(steps=4))
    assert [t.tag for t in trace] == ["full", "random", "full", "random"]
    assert [t.step for t in trace] == [0, 1, 2, 3]
    full_ph = (128,) * 8
    assert trace[0].phenotype == full_ph and trace[2].phenotype == full_ph


def test_min_steps_enforced():
    with pytest.raises(ValueError):
        _cfg(steps=1)


def test_determinism(toy, corpus):
    runs = []
    for _ in range(2):
        w = init_supernet(toy.dims, 128, seed=3)
        w2, trace = train_instatune(w, toy, corpus, _cfg(steps=10, seed=3))
        runs.append((w2, [t.loss for t in trace]))
    (wa, la), (wb, lb) = runs
    assert la == lb
    ta, tb = parameter_tensors(wa), parameter_tensors(wb)
    for name in ta:
        assert np.array_equal(ta[name], tb[name]), name


def test_seed_changes_trajectory(toy, corpus):
    w1 = init_supernet(toy.dims, 128, seed=3)
    _, t1 = train_instatune(w1, toy, corpus, _cfg(steps=6, seed=3))
    w2 = init_supernet(toy.dims, 128, seed=3)
    _, t2 = train_instatune(w2, toy, corpus, _cfg(steps=6, seed=4))
    assert [x.loss for x in t1] != [x.loss for x in t2]


def test_subnet_step_touches_only_sliced_regions(toy, corpus):
    from elastic_nas.elastic_net import AdamState, active_slices, adam_step, loss_and_grads

    w = init_supernet(toy.dims, 128, seed=5)
    before = {n: t.copy() for n, t in parameter_tensors(w).items()}
    ph = (64, 128, 64, 64)  # 4 of 8 layers, mixed widths
    tokens = corpus[:256].reshape(4, 64)
    _, grads = loss_and_grads(w, ph, tokens)
    adam_step(w, grads, active_slices(w, ph, 64), AdamState.init(w), 3e-4)
    after = parameter_tensors(w)
    assert not np.array_equal(before["blocks.0.w_gate"][:, :64], after["blocks.0.w_gate"][:, :64])
    assert np.array_equal(before["blocks.0.w_gate"][:, 64:], after["blocks.0.w_gate"][:, 64:])
    assert np.array_equal(before["blocks.0.w_down"][64:, :], after["blocks.0.w_down"][64:, :])
    for i in range(4, 8):
        for field in ("wq", "wk", "wv", "wo", "w_gate", "w_up", "w_down"):
            name = f"blocks.{i}.{field}"
            assert np.array_equal(before[name], after[name]), name
    assert not np.array_equal(before["head"], after["head"])


def test_training_reduces_loss(toy, corpus):
    w = init_supernet(toy.dims, 128, seed=1)
    _, trace = train_instatune(w, toy, corpus, _cfg(steps=120, learning_rate=1e-3))
    full = [t.loss for t in trace if t.tag == "full"]
    assert np.mean(full[-10:]) < np.mean(full[:10])


def test_divergence_guard(toy, corpus, monkeypatch):
    real = en.loss_and_grads
    calls = {"n": 0}

    def exploding(weights, pheno, tokens):
        value, grads = real(weights, pheno, tokens)
        calls["n"] += 1
        # report a loss far above 10x initial from step 1 onward
        fake = value if calls["n"] == 1 else value * 1000.0
        return fake, grads

    monkeypatch.setattr(en, "loss_and_grads", exploding)
    w = init_supernet(toy.dims, 128, seed=2)
    with pytest.raises(DivergenceError):
        train_instatune(w, toy, corpus, _cfg(steps=400))
    assert calls["n"] >= en.DIVERGENCE_PATIENCE


def test_record_aligned_starts(corpus):
    starts = sample_batch_starts(corpus, 0, 64)
    assert np.all(corpus[starts] == 0)
    assert np.all(starts + 64 <= corpus.size)


def test_corpus_too_short_for_window():
    tiny = np.ones(128, dtype=np.int64)  # no BOS anywhere
    with pytest.raises(ValueError):
        sample_batch_starts(tiny, 0, 64)

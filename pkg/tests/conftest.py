"""Shared fixtures; the expensive trained-supernet run happens once per session."""

import time

import pytest

from elastic_nas.archspace import toy_space
from elastic_nas.elastic_net import TrainConfig, init_supernet, train_instatune
from elastic_nas.tasks import gen_corpus

# Frozen training-sanity run configuration. steps/batch and the corpus format
# are fixed by the module contracts; the learning rate is raised above the
# 3e-4 default because 2000 steps at the default leave the copy mechanism
# only partially formed (MC accuracy ~0.41); at 3e-3 the full subnet reaches
# MC accuracy 1.0 on the held-out suite.
SANITY_TRAIN = dict(steps=2000, batch_size=32, seq_len=64, learning_rate=3e-3, seed=11)
SANITY_CORPUS_TOKENS = 131072


@pytest.fixture(scope="session")
def toy():
    return toy_space()


@pytest.fixture(scope="session")
def sanity_run(toy):
    """(trained weights, loss trace, wall seconds) for the 2000-step toy run."""
    corpus = gen_corpus(seed=SANITY_TRAIN["seed"], n_tokens=SANITY_CORPUS_TOKENS)
    weights = init_supernet(toy.dims, max(toy.inter_choices), seed=SANITY_TRAIN["seed"])
    config = TrainConfig(**SANITY_TRAIN)
    start = time.monotonic()
    weights, trace = train_instatune(weights, toy, corpus, config)
    wall = time.monotonic() - start
    return weights, trace, wall

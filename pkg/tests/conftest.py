"""Shared fixtures: small trained models reused across test modules."""

import time

import numpy as np
import pytest

from apeforge.corpus import Vocab
from apeforge.nmt import TrainConfig, init_model, train


def copy_task_pairs(n_pairs=50, n_types=12, max_len=6, seed=7):
    """Seeded identity-mapping dataset over a synthetic token alphabet."""
    rng = np.random.default_rng(seed)
    alphabet = [f"t{i}" for i in range(n_types)]
    vocab = Vocab(alphabet)
    pairs = []
    for _ in range(n_pairs):
        n = int(rng.integers(1, max_len + 1))
        seq = [vocab.id(alphabet[int(rng.integers(0, n_types))]) for _ in range(n)]
        pairs.append((seq, list(seq)))
    return vocab, pairs


@pytest.fixture(scope="session")
def copy_task():
    """A model trained to reproduce its input, with timing metadata.

    Returns (vocab, pairs, train result, wall seconds). The iteration budget
    was calibrated on this seed; convergence well inside it leaves headroom.
    """
    vocab, pairs = copy_task_pairs()
    model = init_model(vocab, vocab, embedding_dim=32, hidden_dim=32, seed=11)
    cfg = TrainConfig(
        batch_size=10,
        epochs=1000,
        shuffle_seed=5,
        checkpoint_every=10**9,
        log_every=100,
        max_iterations=1200,
    )
    started = time.monotonic()
    result = train(model, pairs, cfg)
    elapsed = time.monotonic() - started
    return vocab, pairs, result, elapsed

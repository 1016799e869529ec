from __future__ import annotations

import numpy as np
import pytest

from perturbkit.backends import load_backend
from perturbkit.remapping import Remapping, TokenString

CORPUS = [
    "the dog runs to the park",
    "the cat sleeps on the mat",
    "a bird sings in the tree",
    "the dog sleeps in the park",
    "a cat runs to the tree",
    "the bird runs on the mat",
]
EXTRA = ["glam", "blick", "dogs", "running"]


def small_model(mode: str = "causal", seed: int = 0, trained: bool = True, epochs: int = 60):
    return load_backend(
        {
            "name": "reference",
            "config": {"mode": mode, "seed": seed, "train_epochs": epochs, "embedding_dim": 16, "hidden_dim": 24},
            "corpus": CORPUS,
            "extra_words": EXTRA,
            "trained": trained,
        }
    )


@pytest.fixture(scope="session")
def causal_lm():
    return small_model("causal")


@pytest.fixture(scope="session")
def masked_lm():
    return small_model("masked")


def sentence_remapping(sentence: str, index: int, replacement: str) -> Remapping:
    """Replace word ``index`` (0-based) of ``sentence`` by ``replacement``."""
    words = sentence.split()
    ctx = TokenString.from_pairs((w, k + 1) for k, w in enumerate(words) if k != index)
    return Remapping(
        ctx,
        TokenString.from_words([words[index]], start=index + 1),
        ctx,
        TokenString.from_words([replacement], start=index + 1),
    )


def prefix_remapping(sentence: str, index: int, replacement: str) -> Remapping:
    """Like :func:`sentence_remapping` but drops the words after ``index`` (causal scoring)."""
    return sentence_remapping(" ".join(sentence.split()[: index + 1]), index, replacement)


def random_remapping(rng: np.random.Generator, vocab: list[str]) -> Remapping:
    n = int(rng.integers(2, 7))
    words = [vocab[i] for i in rng.integers(len(vocab), size=n)]
    return prefix_remapping(" ".join(words), n - 1, vocab[int(rng.integers(len(vocab)))])


"""Model backends: a uniform scoring/training surface over language models.

Every backend returns :class:`ModelHandle` objects. Handles are values from the
caller's point of view: ``train_step`` returns a new handle and never changes
the one it was called on.
"""

from __future__ import annotations

import abc
import importlib
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..remapping import TokenString

Span = tuple[TokenString, TokenString]  # (context, region)


class BackendError(RuntimeError):
    pass


class DivergenceError(BackendError):
    """Non-finite loss during a training step."""

    def __init__(self, message: str, remapping_id: str | None = None, step: int | None = None):
        super().__init__(message)
        self.remapping_id = remapping_id
        self.step = step


@dataclass(frozen=True)
class TokenizedRegion:
    subword_ids: tuple[int, ...]
    word_boundaries: tuple[tuple[int, int], ...]
    single_tokenized: tuple[bool, ...]

    def __post_init__(self):
        pos = 0
        for start, end in self.word_boundaries:
            if start != pos or end <= start:
                raise ValueError("word boundaries must tile the subword ids")
            pos = end
        if pos != len(self.subword_ids):
            raise ValueError("word boundaries must tile the subword ids")

    @property
    def final_ids(self) -> tuple[int, ...]:
        return tuple(self.subword_ids[end - 1] for _, end in self.word_boundaries)


class ModelHandle(abc.ABC):
    """Scoreable, trainable language model state.

    ``mode`` is ``"causal"`` or ``"masked"``. Scores are natural-log
    probabilities summed over critical-region subwords.
    """

    backend_id: str
    mode: str
    vocab_size: int
    depth: int

    @abc.abstractmethod
    def tokenize(self, region: TokenString) -> TokenizedRegion: ...

    @abc.abstractmethod
    def score_region(self, context: TokenString, region: TokenString, *, first_subword_only: bool = False) -> float: ...

    @abc.abstractmethod
    def pll_score_region(self, context: TokenString, region: TokenString, *, first_subword_only: bool = False) -> float: ...

    def score_many(self, spans: Sequence[Span], *, first_subword_only: Sequence[bool] | bool = False) -> np.ndarray:
        """Score several (context, region) pairs; backends override to batch."""
        flags = [first_subword_only] * len(spans) if isinstance(first_subword_only, bool) else first_subword_only
        return np.array(
            [self.score_region(c, r, first_subword_only=f) for (c, r), f in zip(spans, flags)],
            dtype=np.float64,
        )

    @abc.abstractmethod
    def train_step(self, positive, negative, learning_rate: float, **options) -> "ModelHandle": ...

    @abc.abstractmethod
    def clone_state(self) -> "ModelHandle": ...

    @abc.abstractmethod
    def restore_state(self, state: "ModelHandle") -> "ModelHandle": ...

    @abc.abstractmethod
    def embed(self, context: TokenString, region: TokenString, layer: int) -> np.ndarray: ...

    @abc.abstractmethod
    def perplexity(self, corpus: Sequence[TokenString]) -> float: ...

    def fingerprint(self) -> str:
        return self.backend_id


_REGISTRY: dict[str, str] = {
    "reference": "perturbkit.backends.reference:load_backend",
    "hf": "perturbkit.backends.hf:load_backend",
}


def register_backend(name: str, target: str | Callable) -> None:
    """Register a loader ``callable(spec: dict) -> ModelHandle`` under ``name``."""
    _REGISTRY[name] = target


def load_backend(spec: dict) -> ModelHandle:
    """Instantiate the backend named by ``spec["name"]``.

    Registered targets are either callables or ``"module:function"`` strings,
    which keeps heavyweight runtimes from being imported until needed.
    """
    name = spec.get("name", "reference")
    try:
        target = _REGISTRY[name]
    except KeyError:
        raise BackendError(f"unknown backend {name!r}; known: {sorted(_REGISTRY)}") from None
    if isinstance(target, str):
        module, _, func = target.partition(":")
        try:
            target = getattr(importlib.import_module(module), func)
        except ImportError as exc:
            raise BackendError(f"backend {name!r} unavailable: {exc}") from exc
    return target(spec)

"""Completion-region similarity between label multisets (modified Jaccard)."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np


@dataclass(frozen=True)
class LabelMultiset:
    counts: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for w, c in self.counts.items():
            if int(c) != c or c < 0:
                raise ValueError(f"count for {w!r} must be a non-negative integer, got {c!r}")
            if c:
                clean[w] = int(c)
        object.__setattr__(self, "counts", clean)

    @classmethod
    def from_words(cls, words: Iterable[str]) -> "LabelMultiset":
        return cls(dict(Counter(words)))

    @property
    def total(self) -> int:
        return sum(self.counts.values())


def crs_similarity(a: LabelMultiset, b: LabelMultiset) -> float:
    """``sum_w min(C_a(w), C_b(w)) / max(T_a, T_b)``."""
    ta, tb = a.total, b.total
    if ta == 0 or tb == 0:
        raise ValueError("CRS is undefined for an empty label multiset")
    small, large = (a.counts, b.counts) if len(a.counts) <= len(b.counts) else (b.counts, a.counts)
    shared = sum(min(c, large.get(w, 0)) for w, c in small.items())
    return shared / max(ta, tb)


def crs_matrix(multisets: Sequence[LabelMultiset]) -> np.ndarray:
    n = len(multisets)
    out = np.empty((n, n))
    for i in range(n):
        out[i, i] = crs_similarity(multisets[i], multisets[i])
        for j in range(i + 1, n):
            out[i, j] = out[j, i] = crs_similarity(multisets[i], multisets[j])
    return out

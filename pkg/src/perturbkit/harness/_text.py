"""Sentence splitting shared by the ingesters."""

from __future__ import annotations

import re

_WORD = re.compile(r"\w+(?:['’]\w+)*|[^\w\s]")


def words(sentence: str) -> list[str]:
    """Word and punctuation tokens; ``"taller."`` -> ``["taller", "."]``."""
    return _WORD.findall(sentence)


def occurrences(tokens: list[str], word: str, case_sensitive: bool = False) -> list[int]:
    if case_sensitive:
        return [i for i, t in enumerate(tokens) if t == word]
    w = word.lower()
    return [i for i, t in enumerate(tokens) if t.lower() == w]

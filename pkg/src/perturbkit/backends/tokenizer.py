"""Greedy longest-match subword tokenizer used by the reference LM.

Vocabulary entries beginning with ``##`` are word-internal continuation pieces,
so ``taller`` splits into ``tall ##er`` unless ``taller`` is itself listed.
"""

from __future__ import annotations

from typing import Iterable, Sequence

PAD, BOS, EOS, MASK = "<pad>", "<bos>", "<eos>", "<mask>"
SPECIALS = (PAD, BOS, EOS, MASK)


class TokenizationError(ValueError):
    pass


class WordPieceTokenizer:
    def __init__(self, vocab: Sequence[str]):
        entries = list(SPECIALS) + [w for w in vocab if w not in SPECIALS]
        if len(set(entries)) != len(entries):
            raise ValueError("vocabulary contains duplicate entries")
        self.vocab = entries
        self.index = {w: i for i, w in enumerate(entries)}
        self.pad_id, self.bos_id, self.eos_id, self.mask_id = (self.index[s] for s in SPECIALS)
        self._cache: dict[str, list[int]] = {}

    def __len__(self) -> int:
        return len(self.vocab)

    def __contains__(self, word: str) -> bool:
        try:
            self.encode_word(word)
        except TokenizationError:
            return False
        return True

    def encode_word(self, word: str) -> list[int]:
        hit = self._cache.get(word)
        if hit is not None:
            return hit
        ids: list[int] = []
        rest, prefix = word, ""
        while rest:
            for end in range(len(rest), 0, -1):
                piece = prefix + rest[:end]
                if piece in self.index:
                    ids.append(self.index[piece])
                    rest, prefix = rest[end:], "##"
                    break
            else:
                raise TokenizationError(f"no subword decomposition for {word!r}")
        if not ids:
            raise TokenizationError("empty word")
        self._cache[word] = ids
        return ids

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.vocab[i] for i in ids]


def build_vocab(texts: Iterable[str], pieces: Iterable[str] = ()) -> list[str]:
    """Sorted whitespace-word vocabulary of ``texts`` plus explicit subword ``pieces``."""
    words = {w for t in texts for w in t.split()}
    return sorted(words | set(pieces))

"""Word-sense items: per-word, per-sense sentence pools and balanced sampling."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ..remapping import Item, LabeledExampleSet, Remapping, TokenString
from ._text import occurrences, words

log = logging.getLogger(__name__)


class WsdDataError(ValueError):
    pass


@dataclass(frozen=True)
class WsdItem:
    id: str
    word: str
    sense_label: str
    sentence: str
    target_word_index: int  # 0-based token index of the word

    def __post_init__(self):
        if self.sentence != self.sentence.lower():
            raise WsdDataError(f"{self.id}: sentence must be lowercase")
        toks = words(self.sentence)
        hits = occurrences(toks, self.word, case_sensitive=True)
        if len(hits) != 1:
            raise WsdDataError(f"{self.id}: {self.word!r} occurs {len(hits)} times")
        if hits[0] != self.target_word_index:
            raise WsdDataError(f"{self.id}: target index {self.target_word_index} != {hits[0]}")


Pools = dict[str, dict[str, list[WsdItem]]]  # word -> sense -> items


def make_items(word: str, sense: str, sentences: Sequence[str]) -> tuple[list[WsdItem], int]:
    """Lowercase, keep sentences with exactly one occurrence; returns (items, rejected)."""
    word = word.lower()
    items, rejected = [], 0
    for k, s in enumerate(sentences):
        s = s.strip().lower()
        if not s:
            continue
        hits = occurrences(words(s), word, case_sensitive=True)
        if len(hits) != 1:
            rejected += 1
            continue
        items.append(WsdItem(f"{word}-{sense}-{k:05d}", word, sense, s, hits[0]))
    return items, rejected


def read_wsd_pools(root: str | Path) -> Pools:
    """``root/<word>/<sense>.txt`` with one sentence per line."""
    root = Path(root)
    pools: Pools = {}
    for wdir in sorted(p for p in root.iterdir() if p.is_dir()):
        senses = {}
        for f in sorted(wdir.glob("*.txt")):
            items, rejected = make_items(wdir.name, f.stem, f.read_text().splitlines())
            if rejected:
                log.info("%s/%s: rejected %d sentences with the word absent or repeated", wdir.name, f.stem, rejected)
            senses[f.stem] = items
        if senses:
            pools[wdir.name.lower()] = senses
    if not pools:
        raise WsdDataError(f"no word directories under {root}")
    return pools


def build_wsd_remappings(items: Sequence[WsdItem], target: str = "glam", dataset_id: str = "cwsd20") -> LabeledExampleSet:
    """<sentence with the word as region> -> same context with ``target`` in the region."""
    if len(target.split()) != 1:
        raise ValueError("target must be a single word")
    out = []
    for it in items:
        toks = words(it.sentence)
        if occurrences(toks, target):
            raise WsdDataError(f"{it.id}: target {target!r} already occurs in the sentence")
        i = it.target_word_index
        ctx = TokenString.from_pairs((w, k + 1) for k, w in enumerate(toks) if k != i)
        rem = Remapping(
            ctx,
            TokenString.from_words([toks[i]], start=i + 1),
            ctx,
            TokenString.from_words([target], start=i + 1),
        )
        out.append(Item(it.id, rem, it.sense_label, {"word": it.word}))
    return LabeledExampleSet(dataset_id, out)


def balanced_quotas(total: int, capacities: Mapping[str, int]) -> dict[str, int]:
    """Split ``total`` as evenly as possible under per-sense capacities.

    Saturated senses give their remainder to the rest; leftover units go to
    senses in sorted order.
    """
    remaining = min(total, sum(capacities.values()))
    # Fill the smallest pools first so each later sense sees its final even share.
    order = sorted(capacities, key=lambda s: (capacities[s], s))
    fill = {}
    for k, s in enumerate(order):
        fill[s] = min(capacities[s], remaining // (len(order) - k))
        remaining -= fill[s]
    # Unsaturated senses now differ by at most one; even them out and hand the
    # extra units to the first ones in sorted order.
    open_ = sorted(s for s in capacities if fill[s] < capacities[s])
    if open_:
        level, extra = divmod(sum(fill[s] for s in open_) + remaining, len(open_))
        for k, s in enumerate(open_):
            fill[s] = level + (k < extra)
    quotas = {s: fill[s] for s in capacities}
    return quotas


@dataclass
class BalancedSample:
    sets: dict[str, LabeledExampleSet]
    counts: dict[str, dict[str, int]]
    deficits: dict[str, dict[str, int]] = field(default_factory=dict)  # word -> sense -> shortfall

    @property
    def total(self) -> int:
        return sum(len(s) for s in self.sets.values())


def sample_balanced_wsd(
    pools: Pools,
    per_word: int,
    seed: int = 0,
    target: str = "glam",
) -> BalancedSample:
    """Per word, ``per_word`` items split evenly over senses; short senses are topped up by others."""
    if per_word <= 0:
        raise ValueError("per_word must be positive")
    sets, counts, deficits = {}, {}, {}
    for w_idx, word in enumerate(sorted(pools)):
        senses = pools[word]
        if len([s for s in senses if senses[s]]) < 2:
            raise WsdDataError(f"word {word!r} has fewer than two senses with items")
        quotas = balanced_quotas(per_word, {s: len(v) for s, v in senses.items()})
        even = balanced_quotas(per_word, {s: per_word for s in senses})
        short = {s: even[s] - quotas[s] for s in senses if quotas[s] < even[s]}
        if short:
            log.warning("word %r: senses below an even share %s; filled from other senses", word, short)
            deficits[word] = short
        rng = np.random.default_rng(np.random.SeedSequence([seed, w_idx]))
        chosen = []
        for s in sorted(senses):
            pool = senses[s]
            idx = np.sort(rng.choice(len(pool), size=quotas[s], replace=False)) if quotas[s] else []
            chosen.extend(pool[i] for i in idx)
        sets[word] = build_wsd_remappings(chosen, target, dataset_id=f"cwsd20-{word}")
        counts[word] = quotas
    return BalancedSample(sets, counts, deficits)

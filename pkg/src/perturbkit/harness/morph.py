"""-er morphology: deverbal vs comparative pairs placed in corpus sentences."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..remapping import Item, LabeledExampleSet, Remapping, TokenString
from ._text import occurrences, words

log = logging.getLogger(__name__)

CLASSES = ("deverbal", "comparative")
TOKENIZATION_LEVELS = ("single_single", "single_multi", "multi_same", "multi_diff")


class MorphDataError(ValueError):
    pass


@dataclass(frozen=True)
class MorphItem:
    base: str
    suffixed: str
    word_class: str
    sentence: str = ""

    def __post_init__(self):
        if not self.suffixed.endswith("er"):
            raise MorphDataError(f"{self.suffixed!r} does not end with 'er'")
        if self.word_class not in CLASSES:
            raise MorphDataError(f"class must be one of {CLASSES}, got {self.word_class!r}")

    @property
    def id(self) -> str:
        return f"{self.word_class}-{self.suffixed}"


def parse_bats(text: str, word_class: str) -> list[MorphItem]:
    """Two-column pair list (``base<TAB or space>suffixed``).

    The second column may list alternatives separated by ``/``; the first one
    ending in ``-er`` is used. Pairs with no such alternative are logged and skipped.
    """
    items = []
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(None, 1)
        if len(parts) != 2:
            raise MorphDataError(f"line {n}: expected two columns")
        base, alts = parts
        cands = [a.strip() for a in alts.split("/") if a.strip().endswith("er")]
        if not cands:
            log.warning("line %d: no -er form for %r; skipped", n, base)
            continue
        items.append(MorphItem(base, cands[0], word_class))
    return items


def read_bats(path: str | Path, word_class: str) -> list[MorphItem]:
    return parse_bats(Path(path).read_text(), word_class)


def attach_sentences(
    items: Sequence[MorphItem],
    pool: Iterable[str],
    seed: int = 0,
) -> list[MorphItem]:
    """Give each item one pool sentence containing its suffixed form exactly once.

    Candidates are drawn uniformly with a seeded generator; items with no
    usable sentence are logged and dropped.
    """
    pool = [s.strip() for s in pool if s.strip()]
    tokenized = [words(s) for s in pool]
    rng = np.random.default_rng(seed)
    out = []
    for it in items:
        cands = [s for s, toks in zip(pool, tokenized) if len(occurrences(toks, it.suffixed)) == 1]
        if not cands:
            log.warning("no sentence for %r; skipped", it.suffixed)
            continue
        out.append(replace(it, sentence=cands[int(rng.integers(len(cands)))]))
    return out


def _variant(variant) -> tuple[str, str | None]:
    if isinstance(variant, (tuple, list)):
        name, arg = variant
    else:
        name, _, arg = str(variant).partition(":")
        arg = arg or None
    if name not in ("standard", "no_context", "common_target", "novel_suffix"):
        raise ValueError(f"unknown morphology variant {variant!r}")
    if name in ("common_target", "novel_suffix") and not arg:
        raise ValueError(f"variant {name} needs an argument, e.g. '{name}:blue'")
    return name, arg


def build_morph_remappings(
    items: Sequence[MorphItem],
    variant="standard",
    dataset_id: str = "morph-er",
) -> LabeledExampleSet:
    """``standard``: <context, suffixed> -> <context, base>.

    ``no_context`` drops the context; ``common_target:W`` uses ``W`` as every
    alternate region; ``novel_suffix:S`` uses ``base + S`` (talleze) as the
    alternate, so evaluation contrasts it with the suffixed form.
    """
    name, arg = _variant(variant)
    out = []
    for it in items:
        toks = words(it.sentence)
        hits = occurrences(toks, it.suffixed)
        if not hits:
            raise MorphDataError(f"sentence for {it.id} lacks {it.suffixed!r}: {it.sentence!r}")
        i = hits[0]
        surface = toks[i]
        ctx = TokenString.from_pairs((w, k + 1) for k, w in enumerate(toks) if k != i)
        if name == "no_context":
            ctx = TokenString()
        alt = {"common_target": arg, "novel_suffix": it.base + (arg or "")}.get(name, it.base)
        # keep sentence-initial capitalization consistent across both regions
        if surface[:1].isupper():
            alt = alt[:1].upper() + alt[1:]
        slot = 1 if name == "no_context" else i + 1
        rem = Remapping(
            ctx,
            TokenString.from_words([surface], start=slot),
            ctx,
            TokenString.from_words([alt], start=slot),
        )
        out.append(Item(it.id, rem, it.word_class, {"base": it.base, "suffixed": it.suffixed, "variant": name}))
    return LabeledExampleSet(dataset_id, out)


# -- backend-dependent tokenization factor ------------------------------------------------


def annotate_tokenization(model, dataset: LabeledExampleSet) -> LabeledExampleSet:
    """Add ``tok_count`` ("single"/"multi") and ``tok_final`` item factors for ``model``.

    An item counts as single when every word of its original region is one
    subword; ``tok_final`` is the final subword id of that region.
    """
    items = []
    for it in dataset:
        t = model.tokenize(it.remapping.region_original)
        single = all(t.single_tokenized)
        items.append(Item(it.id, it.remapping, it.class_label,
                          {**it.factors, "tok_count": "single" if single else "multi",
                           "tok_final": str(t.subword_ids[-1])}))
    return LabeledExampleSet(dataset.dataset_id, items)


def tokenization_pair(a: dict, b: dict) -> str:
    """Tokenization level of a (perturbation, evaluation) pair from their item factors."""
    sa, sb = a["tok_count"] == "single", b["tok_count"] == "single"
    if sa and sb:
        return "single_single"
    if sa or sb:
        return "single_multi"
    return "multi_same" if a["tok_final"] == b["tok_final"] else "multi_diff"


def add_tokenization_factor(records) -> list:
    """Set ``tokenization`` on records made by ``matrix_to_records`` from annotated items."""
    for r in records:
        m = r.metadata
        r.metadata["tokenization"] = tokenization_pair(
            {"tok_count": m["train_tok_count"], "tok_final": m["train_tok_final"]},
            {"tok_count": m["eval_tok_count"], "tok_final": m["eval_tok_final"]},
        )
    return records


def class_relation(records) -> list:
    """``class3`` factor: within-deverbal, within-comparative or between."""
    for r in records:
        m = r.metadata
        r.metadata["class3"] = f"within_{m['train_class']}" if m["train_class"] == m["eval_class"] else "between"
    return records

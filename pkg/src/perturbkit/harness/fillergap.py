"""Filler-gap minimal pairs: ingestion, role-specific remappings, demo templates.

CSV rows follow the slot layout of the filler-gap minimal-pair table:
``construction, animacy, embedded, prefix, filler, nc, embedding, article, np,
verb, label`` (``id`` and ``embedding`` optional). A slot written ``a/b`` holds
the FG (or training-side control) alternative first and the non-FG one
second; ``""`` is the empty string; a slot without ``/`` is shared.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..remapping import Item, LabeledExampleSet, Remapping, TokenString

FG_CONSTRUCTIONS = ("know", "wonder", "matrix_wh", "restr_rel", "cleft", "pseudocleft", "topicalization")
CONTROL_CONSTRUCTIONS = ("ctrl_agr", "ctrl_trans")
CONSTRUCTIONS = FG_CONSTRUCTIONS + CONTROL_CONSTRUCTIONS
ANIMACY = ("animate", "inanimate")
EMBEDDING = ("unembedded", "embedded")
SLOTS = ("prefix", "filler", "nc", "embedding", "article", "np", "verb")
ROLES = ("train", "eval_fg", "eval_nonfg", "eval_ctrl")


class FgDataError(ValueError):
    pass


@dataclass(frozen=True)
class FgItem:
    id: str
    construction: str
    animacy: str
    embedded: str
    prefix_fg: str
    prefix_nonfg: str
    label_fg: str
    label_nonfg: str

    def __post_init__(self):
        if self.construction not in CONSTRUCTIONS:
            raise FgDataError(f"{self.id}: unknown construction {self.construction!r}")
        if self.animacy not in ANIMACY:
            raise FgDataError(f"{self.id}: animacy must be one of {ANIMACY}")
        if self.embedded not in EMBEDDING:
            raise FgDataError(f"{self.id}: embedded must be one of {EMBEDDING}")
        if not self.prefix_fg.split():
            raise FgDataError(f"{self.id}: empty FG prefix")
        if not self.label_fg.split() or not self.label_nonfg.split():
            raise FgDataError(f"{self.id}: both labels must be nonempty")
        if self.label_fg.split()[0] == self.label_nonfg.split()[0]:
            raise FgDataError(f"{self.id}: labels share their first word")

    @property
    def is_control(self) -> bool:
        return self.construction in CONTROL_CONSTRUCTIONS

    @property
    def condition(self) -> str:
        return f"{self.construction}-{self.animacy}-{self.embedded}"

    @property
    def factors(self) -> dict[str, str]:
        return {
            "condition": self.condition,
            "construction": self.construction,
            "animacy": self.animacy,
            "embedded": self.embedded,
            "family": "ctrl" if self.is_control else "fg",
        }


def _split_slot(text: str) -> tuple[str, str]:
    text = (text or "").strip()
    a, sep, b = text.partition("/")
    if not sep:
        b = a
    unq = lambda s: "" if s.strip() == '""' else s.strip()
    return unq(a), unq(b)


def _join(parts: Iterable[str]) -> str:
    return " ".join(p for p in parts if p)


def read_fg_csv(path: str | Path) -> list[FgItem]:
    return parse_fg_csv(Path(path).read_text())


def parse_fg_csv(text: str) -> list[FgItem]:
    """Parse filler-gap CSV text into items; errors name the line."""
    rows = csv.DictReader(io.StringIO(text))
    required = {"construction", "animacy", "embedded", "label"}
    if rows.fieldnames is None or not required <= set(rows.fieldnames):
        raise FgDataError(f"filler-gap CSV needs columns {sorted(required)} plus slot columns")
    items, seen = [], set()
    for n, row in enumerate(rows, start=2):
        try:
            alts = [_split_slot(row.get(s, "")) for s in SLOTS]
            label_fg, label_nonfg = _split_slot(row["label"])
            item_id = (row.get("id") or "").strip() or f"fg{n - 1:05d}"
            if item_id in seen:
                raise FgDataError(f"duplicate id {item_id!r}")
            seen.add(item_id)
            items.append(
                FgItem(
                    item_id,
                    row["construction"].strip(),
                    row["animacy"].strip(),
                    row["embedded"].strip(),
                    _join(a for a, _ in alts),
                    _join(b for _, b in alts),
                    label_fg,
                    label_nonfg,
                )
            )
        except FgDataError as exc:
            raise FgDataError(f"line {n}: {exc}") from None
    return items


def write_fg_csv(items: Sequence[FgItem]) -> str:
    """Inverse of :func:`parse_fg_csv` (prefixes stored whole in the prefix slot)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "construction", "animacy", "embedded", "prefix", "label"])
    q = lambda s: s or '""'
    for it in items:
        w.writerow([
            it.id, it.construction, it.animacy, it.embedded,
            f"{q(it.prefix_fg)}/{q(it.prefix_nonfg)}", f"{it.label_fg}/{it.label_nonfg}",
        ])
    return buf.getvalue()


def _remapping(prefix: str, label_from: str, label_to: str) -> Remapping:
    ctx = TokenString.from_words(prefix.split())
    slot = len(ctx) + 1
    # only the first word of a completion is scored, and only its first subword
    return Remapping(
        ctx,
        TokenString.from_words([label_from.split()[0]], start=slot),
        ctx,
        TokenString.from_words([label_to.split()[0]], start=slot),
        first_subword_only=True,
    )


def critical_region(item: FgItem) -> tuple[str, str]:
    return item.label_fg.split()[0], item.label_nonfg.split()[0]


def build_fg_remappings(
    items: Sequence[FgItem],
    role: str,
    train_item: FgItem | None = None,
    disjoint: bool = True,
    dataset_id: str = "fillergap",
) -> LabeledExampleSet:
    """Remappings for one role.

    ``train``: training-side prefix, correct completion remapped to the
    incorrect one. ``eval_fg``/``eval_ctrl``: the same remapping on FG/control
    items. ``eval_nonfg``: the non-FG prefix with the same labels (for controls,
    the second alternative of their prefix). With ``train_item`` and
    ``disjoint``, an evaluation item with the training item's critical region
    is an error.
    """
    if role not in ROLES:
        raise ValueError(f"role must be one of {ROLES}")
    out = []
    for it in items:
        if role == "eval_fg" and it.is_control:
            raise FgDataError(f"{it.id}: control item in eval_fg; use eval_ctrl")
        if role == "eval_ctrl" and not it.is_control:
            raise FgDataError(f"{it.id}: FG item in eval_ctrl; use eval_fg")
        if role.startswith("eval") and train_item is not None and disjoint:
            if critical_region(it) == critical_region(train_item):
                raise FgDataError(
                    f"{it.id} shares critical region {critical_region(it)} with training item {train_item.id}"
                )
        if role == "eval_nonfg":
            if not it.prefix_nonfg.split():
                raise FgDataError(f"{it.id}: empty non-FG prefix")
            rem = _remapping(it.prefix_nonfg, it.label_fg, it.label_nonfg)
        else:
            rem = _remapping(it.prefix_fg, it.label_fg, it.label_nonfg)
        out.append(Item(it.id, rem, it.construction, {**it.factors, "role": role}))
    return LabeledExampleSet(dataset_id, out)


def disjoint_pool(items: Sequence[FgItem], train_item: FgItem) -> list[FgItem]:
    return [it for it in items if critical_region(it) != critical_region(train_item)]


def fg_matrix_sets(items: Sequence[FgItem]) -> tuple[LabeledExampleSet, dict[str, LabeledExampleSet]]:
    """Training set plus the ``fg`` and ``nonfg`` evaluation sets over all conditions."""
    fg = [it for it in items if not it.is_control]
    ctrl = [it for it in items if it.is_control]
    train = build_fg_remappings(items, "train")
    eval_fg = LabeledExampleSet(
        "fillergap", list(build_fg_remappings(fg, "eval_fg").items) + list(build_fg_remappings(ctrl, "eval_ctrl").items)
    )
    eval_nonfg = build_fg_remappings(items, "eval_nonfg")
    return train, {"fg": eval_fg, "nonfg": eval_nonfg}


def check_split(train: Sequence[FgItem], test: Sequence[FgItem]) -> None:
    shared = {it.id for it in train} & {it.id for it in test}
    if shared:
        raise FgDataError(f"train and test pools share ids: {sorted(shared)[:5]}")


# -- demo templates -----------------------------------------------------------------------

_ANIMATE = {"wh": "who", "Wh": "Who", "rel": "who", "head": "The boy",
            "pro": ("him", "her", "them"), "obj": ("the boy", "a girl", "my friend")}
_INANIMATE = {"wh": "what", "Wh": "What", "rel": "which", "head": "The book",
              "pro": ("it", "them", "this"), "obj": ("the book", "a car", "my letter")}
_NOUNS = ("man", "woman", "teacher", "doctor")
_VERBS = (("liked", "like"), ("saw", "see"), ("helped", "help"), ("met", "meet"))
_INTRANSITIVE = ("ran", "slept", "left", "smiled")

# prefix, filler, nc, label; {..} filled from the animacy table and the sampled pronoun
_TEMPLATES = {
    "know": ("I know", "{wh}/that", "", "./{pro}"),
    "wonder": ("I wonder", "{wh}/if", "", "./{pro}"),
    "matrix_wh": ("", '{Wh}/""', "did", "?/{pro}"),
    "restr_rel": ("{head}", "{rel}/and", "", "was/{pro}"),
    "cleft": ("It was", "{obj}/clear", "that", "./{obj}"),
    "pseudocleft": ("", "{Wh}/That", "", "was/{pro}"),
    "topicalization": ("Actually,", '{obj}/""', "", "./{obj}"),
}


def demo_fg_items(per_condition: int = 6, seed: int = 0) -> list[FgItem]:
    """Template-generated items for all 34 conditions (7 FG x 2 x 2, ctrl_trans 2 x 2, ctrl_agr 2).

    Nouns, verbs and pronouns vary so every condition has items with differing
    critical regions.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for cons in CONSTRUCTIONS:
        for anim in ANIMACY:
            if cons == "ctrl_agr" and anim == "inanimate":
                continue
            lex = _ANIMATE if anim == "animate" else _INANIMATE
            for emb in EMBEDDING:
                embedding = "you said" if emb == "embedded" else ""
                for k in range(per_condition):
                    noun = _NOUNS[rng.integers(len(_NOUNS))]
                    past, bare = _VERBS[rng.integers(len(_VERBS))]
                    pro = lex["pro"][k % len(lex["pro"])]
                    obj = lex["obj"][k % len(lex["obj"])]
                    if cons == "ctrl_agr":
                        slots = {"prefix": "The", "filler": "boy/boys", "nc": "that", "embedding": embedding,
                                 "article": "the", "np": noun, "verb": past}
                        label = ("is", "are") if k % 2 == 0 else ("has", "have")
                    elif cons == "ctrl_trans":
                        intr = _INTRANSITIVE[rng.integers(len(_INTRANSITIVE))]
                        slots = {"prefix": "", "filler": "Once/Today", "nc": "", "embedding": embedding,
                                 "article": "some/that", "np": f"{noun}/boy", "verb": f"{intr}/{past}"}
                        label = (".", pro)
                    else:
                        prefix, filler, nc, lab = _TEMPLATES[cons]
                        fill = lambda s: s.format(pro=pro, obj=obj, wh=lex["wh"], Wh=lex["Wh"], rel=lex["rel"], head=lex["head"])
                        slots = {"prefix": fill(prefix), "filler": fill(filler), "nc": nc,
                                 "embedding": embedding, "article": "the", "np": noun,
                                 "verb": bare if cons == "matrix_wh" else past}
                        label = _split_slot(fill(lab))
                    alts = [_split_slot(slots[s]) for s in SLOTS]
                    rows.append(FgItem(
                        f"{cons}-{anim}-{emb}-{k:03d}", cons, anim, emb,
                        _join(a for a, _ in alts), _join(b for _, b in alts), label[0], label[1],
                    ))
    return rows


def fg_vocab(items: Sequence[FgItem]) -> list[str]:
    words = set()
    for it in items:
        for text in (it.prefix_fg, it.prefix_nonfg, it.label_fg, it.label_nonfg):
            words.update(text.split())
    return sorted(words)


def fg_corpus(items: Sequence[FgItem]) -> list[str]:
    """Grammatical sentences from the items: FG prefix + FG label, non-FG prefix + non-FG label."""
    out = []
    for it in items:
        out.append(f"{it.prefix_fg} {it.label_fg}")
        if it.prefix_nonfg:
            out.append(f"{it.prefix_nonfg} {it.label_nonfg}")
    return out

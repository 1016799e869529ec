"""Remapping value types and their JSONL serialization.

A remapping pairs an *original* string with an *alternate* string, each split
into a context and a critical region. Tokens here are whitespace words with
1-based positions; subword handling belongs to the model backends.
"""

from __future__ import annotations

import json
import warnings
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Iterable, Iterator, Sequence

FORMAT_NAME = "perturbkit.remappings"
FORMAT_VERSION = 1


class RemappingError(ValueError):
    """Raised when a record cannot be turned into a valid remapping."""


class RemappingParseError(RemappingError):
    """Malformed serialized stream; ``line`` is 1-based."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True, order=True)
class Token:
    position: int
    surface: str

    def __post_init__(self):
        if self.position < 0:
            raise ValueError(f"negative position {self.position}")


@dataclass(frozen=True)
class TokenString:
    """A set of tokens with pairwise distinct positions, stored in position order."""

    tokens: tuple[Token, ...] = ()

    def __post_init__(self):
        toks = tuple(sorted(self.tokens))
        positions = [t.position for t in toks]
        dupes = sorted(p for p, c in Counter(positions).items() if c > 1)
        if dupes:
            raise ValueError(f"duplicate positions in token string: {dupes}")
        object.__setattr__(self, "tokens", toks)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, int]]) -> "TokenString":
        return cls(tuple(Token(position=i, surface=w) for w, i in pairs))

    @classmethod
    def from_words(cls, words: Sequence[str], start: int = 1) -> "TokenString":
        return cls(tuple(Token(position=start + k, surface=w) for k, w in enumerate(words)))

    @property
    def words(self) -> list[str]:
        return [t.surface for t in self.tokens]

    @property
    def positions(self) -> list[int]:
        return [t.position for t in self.tokens]

    @property
    def text(self) -> str:
        return " ".join(self.words)

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self) -> Iterator[Token]:
        return iter(self.tokens)

    def __bool__(self) -> bool:
        return bool(self.tokens)

    def __repr__(self) -> str:
        inner = ", ".join(f"({t.surface},{t.position})" for t in self.tokens)
        return "{" + inner + "}"


EMPTY = TokenString()


def merge(a: TokenString, b: TokenString) -> list[Token]:
    """Position-ordered union of two strings (duplicates kept so callers can detect them)."""
    return sorted(list(a.tokens) + list(b.tokens))


@dataclass(frozen=True)
class Remapping:
    context_original: TokenString
    region_original: TokenString
    context_alternate: TokenString
    region_alternate: TokenString
    deletion: bool = False
    # Only the first subword of each region is scored (autoregressive filler-gap targets).
    first_subword_only: bool = False

    @property
    def original(self) -> tuple[TokenString, TokenString]:
        return self.context_original, self.region_original

    @property
    def alternate(self) -> tuple[TokenString, TokenString]:
        return self.context_alternate, self.region_alternate

    def __str__(self) -> str:
        def render(ctx, reg):
            return " ".join(
                f"**{t.surface}**" if t in reg.tokens else t.surface for t in merge(ctx, reg)
            )

        return f"{render(*self.original)} -> {render(*self.alternate)}"


@dataclass
class ValidationReport:
    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def __len__(self) -> int:
        return len(self.errors)

    def __iter__(self):
        return iter(self.errors)


def validate(remapping: Remapping) -> ValidationReport:
    """Collect every invariant violation of ``remapping`` without raising."""
    report = ValidationReport()
    for side, ctx, reg in (
        ("original", remapping.context_original, remapping.region_original),
        ("alternate", remapping.context_alternate, remapping.region_alternate),
    ):
        shared = sorted(set(ctx.positions) & set(reg.positions))
        if shared:
            report.errors.append(
                f"{side}: duplicate positions {shared} between context and region"
            )
        if not reg and not remapping.deletion:
            report.errors.append(
                f"{side}: empty region on a training remapping not flagged as deletion"
            )
    if remapping.context_original.words != remapping.context_alternate.words:
        report.warnings.append("original and alternate contexts differ")
    return report


# -- record parsing ---------------------------------------------------------------


def _normalize_span(span: Any, n_words: int, side: str) -> list[tuple[int, int]]:
    if span is None or span == []:
        return []
    if isinstance(span, int):
        ranges = [(span, span)]
    elif (
        isinstance(span, (list, tuple))
        and len(span) == 2
        and all(isinstance(x, int) for x in span)
    ):
        ranges = [(span[0], span[1])]
    elif isinstance(span, (list, tuple)):
        ranges = []
        for r in span:
            if isinstance(r, int):
                ranges.append((r, r))
            elif isinstance(r, (list, tuple)) and len(r) == 2:
                ranges.append((int(r[0]), int(r[1])))
            else:
                raise RemappingError(f"{side}: cannot read span element {r!r}")
    else:
        raise RemappingError(f"{side}: cannot read span {span!r}")
    seen: set[int] = set()
    for start, end in ranges:
        if start > end:
            raise RemappingError(f"{side}: span [{start}, {end}] is reversed")
        if start < 1 or end > n_words:
            raise RemappingError(
                f"{side}: span [{start}, {end}] outside string bounds 1..{n_words}"
            )
        covered = set(range(start, end + 1))
        if covered & seen:
            raise RemappingError(f"{side}: overlapping region spans at words {sorted(covered & seen)}")
        seen |= covered
    return sorted(ranges)


def _split(text: str, span: Any, side: str) -> tuple[TokenString, TokenString]:
    words = text.split()
    ranges = _normalize_span(span, len(words), side)
    in_region = {i for s, e in ranges for i in range(s, e + 1)}
    ctx = TokenString.from_pairs((w, i) for i, w in enumerate(words, 1) if i not in in_region)
    reg = TokenString.from_pairs((w, i) for i, w in enumerate(words, 1) if i in in_region)
    return ctx, reg


def parse_remapping(record: dict) -> Remapping:
    """Build a :class:`Remapping` from a record with texts and 1-based word spans.

    ``region_original_span`` / ``region_alternate_span`` accept an int, a
    ``[start, end]`` pair (inclusive) or a list of such pairs.
    """
    try:
        orig = record["original_text"]
        alt = record["alternate_text"]
    except KeyError as exc:
        raise RemappingError(f"record missing field {exc.args[0]!r}") from None
    co, ro = _split(orig, record.get("region_original_span"), "original")
    ca, ra = _split(alt, record.get("region_alternate_span"), "alternate")
    remapping = Remapping(
        co,
        ro,
        ca,
        ra,
        deletion=bool(record.get("deletion", False)),
        first_subword_only=bool(record.get("first_subword_only", False)),
    )
    report = validate(remapping)
    if report.errors:
        raise RemappingError("; ".join(report.errors))
    for w in report.warnings:
        warnings.warn(f"remapping {record.get('id', '?')}: {w}", stacklevel=2)
    return remapping


def _spans_of(ctx: TokenString, reg: TokenString) -> list[list[int]]:
    """Word-index ranges (1-based, rank order) of ``reg`` inside ``ctx ∪ reg``."""
    order = merge(ctx, reg)
    region = set(reg.tokens)
    idx = [k for k, t in enumerate(order, 1) if t in region]
    spans: list[list[int]] = []
    for k in idx:
        if spans and spans[-1][1] == k - 1:
            spans[-1][1] = k
        else:
            spans.append([k, k])
    return spans


def remapping_to_record(remapping: Remapping) -> dict:
    rec = {
        "original_text": " ".join(t.surface for t in merge(*remapping.original)),
        "alternate_text": " ".join(t.surface for t in merge(*remapping.alternate)),
        "region_original_span": _spans_of(*remapping.original) or None,
        "region_alternate_span": _spans_of(*remapping.alternate) or None,
    }
    if remapping.deletion:
        rec["deletion"] = True
    if remapping.first_subword_only:
        rec["first_subword_only"] = True
    return rec


# -- labeled sets -----------------------------------------------------------------


@dataclass(frozen=True)
class Item:
    id: str
    remapping: Remapping
    class_label: str
    factors: dict[str, str] = field(default_factory=dict, hash=False)


@dataclass
class LabeledExampleSet:
    dataset_id: str
    items: list[Item] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self) -> Iterator[Item]:
        return iter(self.items)

    def __getitem__(self, k):
        if isinstance(k, slice):
            return LabeledExampleSet(self.dataset_id, self.items[k])
        return self.items[k]

    @property
    def ids(self) -> list[str]:
        return [it.id for it in self.items]

    @property
    def class_labels(self) -> list[str]:
        return [it.class_label for it in self.items]

    def by_id(self, item_id: str) -> Item:
        for it in self.items:
            if it.id == item_id:
                return it
        raise KeyError(item_id)

    def subset(self, ids: Iterable[str]) -> "LabeledExampleSet":
        wanted = list(ids)
        index = {it.id: it for it in self.items}
        return LabeledExampleSet(self.dataset_id, [index[i] for i in wanted])

    def filter(self, pred) -> "LabeledExampleSet":
        return LabeledExampleSet(self.dataset_id, [it for it in self.items if pred(it)])

    def validate(self) -> ValidationReport:
        report = ValidationReport()
        ids = Counter(it.id for it in self.items)
        for i, c in ids.items():
            if c > 1:
                report.errors.append(f"duplicate item id {i!r}")
        keysets = {frozenset(it.factors) for it in self.items}
        if len(keysets) > 1:
            report.errors.append(
                f"factor maps do not share a key set: {sorted(sorted(k) for k in keysets)}"
            )
        for it in self.items:
            sub = validate(it.remapping)
            report.errors.extend(f"{it.id}: {e}" for e in sub.errors)
            report.warnings.extend(f"{it.id}: {w}" for w in sub.warnings)
        return report


def item_to_record(item: Item) -> dict:
    rec = {"id": item.id, "class": item.class_label}
    rec.update(remapping_to_record(item.remapping))
    rec["factors"] = dict(item.factors)
    return rec


def item_from_record(rec: dict) -> Item:
    for key in ("id", "class"):
        if key not in rec:
            raise RemappingError(f"record missing field {key!r}")
    factors = rec.get("factors") or {}
    if not isinstance(factors, dict):
        raise RemappingError("factors must be an object")
    return Item(
        id=str(rec["id"]),
        remapping=parse_remapping(rec),
        class_label=str(rec["class"]),
        factors={str(k): str(v) for k, v in factors.items()},
    )


def serialize_set(dataset: LabeledExampleSet) -> bytes:
    """UTF-8 JSONL: one header line, then one record per item."""
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "dataset_id": dataset.dataset_id,
        "count": len(dataset.items),
    }
    lines = [json.dumps(header, ensure_ascii=False, sort_keys=True)]
    lines += [json.dumps(item_to_record(it), ensure_ascii=False) for it in dataset.items]
    return ("\n".join(lines) + "\n").encode("utf-8")


def deserialize_set(stream: bytes | str) -> LabeledExampleSet:
    text = stream.decode("utf-8") if isinstance(stream, (bytes, bytearray)) else stream
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise RemappingParseError(1, "missing header")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise RemappingParseError(1, f"invalid JSON header: {exc.msg}") from None
    if not isinstance(header, dict) or header.get("format") != FORMAT_NAME:
        raise RemappingParseError(1, "not a perturbkit remapping stream")
    items = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise RemappingParseError(lineno, f"invalid JSON: {exc.msg}") from None
        if not isinstance(rec, dict):
            raise RemappingParseError(lineno, "record is not an object")
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                items.append(item_from_record(rec))
        except RemappingError as exc:
            raise RemappingParseError(lineno, str(exc)) from None
    count = header.get("count")
    if count is not None and count != len(items):
        raise RemappingParseError(len(lines), f"header count {count} != {len(items)} records")
    return LabeledExampleSet(dataset_id=str(header.get("dataset_id", "")), items=items)


def read_set(path) -> LabeledExampleSet:
    with open(path, "rb") as fh:
        return deserialize_set(fh.read())

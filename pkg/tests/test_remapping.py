from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perturbkit.remapping import (
    Item,
    LabeledExampleSet,
    Remapping,
    RemappingError,
    RemappingParseError,
    TokenString,
    deserialize_set,
    parse_remapping,
    remapping_to_record,
    serialize_set,
    validate,
)


def test_parse_simple_substitution():
    r = parse_remapping(
        {"original_text": "the runner was fast", "alternate_text": "the run was fast",
         "region_original_span": 2, "region_alternate_span": 2}
    )
    assert r.region_original.words == ["runner"]
    assert r.region_alternate.words == ["run"]
    assert r.context_original.words == ["the", "was", "fast"]
    assert r.context_original == r.context_alternate


def test_parse_discontiguous_region():
    r = parse_remapping(
        {"original_text": "a b c d e", "alternate_text": "a x c y e",
         "region_original_span": [[2, 2], [4, 4]], "region_alternate_span": [[2, 2], [4, 4]]}
    )
    assert r.region_original.positions == [2, 4]
    assert r.region_alternate.words == ["x", "y"]


@pytest.mark.parametrize(
    "span, message",
    [([3, 2], "reversed"), ([0, 1], "outside"), ([1, 9], "outside"), ([[1, 2], [2, 3]], "overlapping")],
)
def test_parse_rejects_bad_spans(span, message):
    with pytest.raises(RemappingError, match=message):
        parse_remapping({"original_text": "a b c", "alternate_text": "a b c",
                         "region_original_span": span, "region_alternate_span": 1})


def test_empty_region_requires_deletion_flag():
    rec = {"original_text": "a b c", "alternate_text": "a c", "region_original_span": 2}
    with pytest.raises(RemappingError, match="empty region"):
        parse_remapping(rec)
    r = parse_remapping({**rec, "deletion": True})
    assert not r.region_alternate and r.deletion


def test_duplicate_positions_rejected():
    with pytest.raises(ValueError, match="duplicate"):
        TokenString.from_pairs([("a", 1), ("b", 1)])
    ctx = TokenString.from_words(["a", "b"])
    reg = TokenString.from_words(["c"], start=2)
    report = validate(Remapping(ctx, reg, ctx, reg))
    assert not report.ok and "duplicate positions" in report.errors[0]


def test_differing_contexts_warn():
    with pytest.warns(UserWarning, match="contexts differ"):
        parse_remapping({"original_text": "a b c", "alternate_text": "x b c",
                         "region_original_span": 2, "region_alternate_span": 2})


def test_missing_field_and_missing_header():
    with pytest.raises(RemappingError, match="original_text"):
        parse_remapping({"alternate_text": "a"})
    with pytest.raises(RemappingParseError, match="line 1"):
        deserialize_set(b'{"id": "x"}\n')


def test_parse_error_reports_line_number():
    header = json.dumps({"format": "perturbkit.remappings", "version": 1, "dataset_id": "d"})
    good = json.dumps({"id": "a", "class": "c", "original_text": "a b", "alternate_text": "a c",
                       "region_original_span": 2, "region_alternate_span": 2})
    bad = json.dumps({"id": "b", "class": "c", "original_text": "a b", "alternate_text": "a c",
                      "region_original_span": 5, "region_alternate_span": 2})
    with pytest.raises(RemappingParseError) as exc:
        deserialize_set("\n".join([header, good, bad]))
    assert exc.value.line == 3


def test_header_count_mismatch():
    header = json.dumps({"format": "perturbkit.remappings", "version": 1, "dataset_id": "d", "count": 2})
    with pytest.raises(RemappingParseError, match="count"):
        deserialize_set(header + "\n")


def test_set_validation_duplicate_ids_and_factor_keys():
    ctx = TokenString.from_words(["a"])
    reg = TokenString.from_words(["b"], start=2)
    r = Remapping(ctx, reg, ctx, TokenString.from_words(["c"], start=2))
    ds = LabeledExampleSet("d", [Item("x", r, "k", {"f": "1"}), Item("x", r, "k", {"g": "1"})])
    errs = ds.validate().errors
    assert any("duplicate item id" in e for e in errs)
    assert any("key set" in e for e in errs)


# -- round trips ------------------------------------------------------------------------

word = st.text(alphabet="abcdefghijklmnopqrstuvwxyzäé'", min_size=1, max_size=6)


@st.composite
def remappings(draw):
    n = draw(st.integers(1, 6))
    words_o = draw(st.lists(word, min_size=n, max_size=n))
    i = draw(st.integers(0, n - 1))
    j = draw(st.integers(i, n - 1))
    alt_region = draw(st.lists(word, min_size=0, max_size=3))
    ctx_words = words_o[:i] + words_o[j + 1:]
    ctx_o = TokenString.from_pairs([(w, k + 1) for k, w in enumerate(words_o) if not i <= k <= j])
    reg_o = TokenString.from_words(words_o[i:j + 1], start=i + 1)
    # the alternate string is rebuilt with its own contiguous numbering
    alt_words = words_o[:i] + alt_region + words_o[j + 1:]
    ctx_a = TokenString.from_pairs(
        [(w, k + 1) for k, w in enumerate(alt_words) if not i <= k < i + len(alt_region)]
    )
    reg_a = TokenString.from_words(alt_region, start=i + 1)
    assert ctx_a.words == ctx_words
    return Remapping(ctx_o, reg_o, ctx_a, reg_a, deletion=not alt_region,
                     first_subword_only=draw(st.booleans()))


@given(remappings())
@settings(max_examples=200, deadline=None)
def test_record_round_trip(r):
    assert parse_remapping(remapping_to_record(r)) == r


@given(st.lists(remappings(), min_size=0, max_size=5), st.data())
@settings(max_examples=100, deadline=None)
def test_set_round_trip_is_byte_stable(rs, data):
    items = [Item(f"id{k}", r, data.draw(st.sampled_from(["a", "b"])), {"f": str(k)}) for k, r in enumerate(rs)]
    ds = LabeledExampleSet("prop", items)
    blob = serialize_set(ds)
    back = deserialize_set(blob)
    assert back == ds
    assert serialize_set(back) == blob

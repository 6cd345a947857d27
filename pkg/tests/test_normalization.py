import string

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctc_seg.errors import AllDroppedError, InputFormatError, MissingTokenError
from ctc_seg.normalization import (
    STRIP_CHARS,
    Dropped,
    NormalizationRules,
    encode,
    example_rules,
    normalize,
    parse_rules,
)
from ctc_seg.posterior_io import TokenTable, TranscriptSet

LATIN = frozenset(string.ascii_lowercase)


def test_number_and_punctuation_replacement():
    rules = NormalizationRules(LATIN, {"1800": "achtzehnhundert", ".": ""})
    assert normalize("Es war 1800.", rules) == "es war achtzehnhundert"


def test_empty_text():
    assert normalize("", NormalizationRules(LATIN)) == ""


def test_disallowed_char_drops_utterance():
    result = normalize("naïve", NormalizationRules(LATIN))
    assert result == Dropped("ï")
    assert "ï" in result.reason


def test_strip_policy_removes_disallowed():
    rules = NormalizationRules(LATIN, drop_policy=STRIP_CHARS)
    assert normalize("naïve  Idee", rules) == "nave idee"


def test_whitespace_is_folded():
    assert normalize("  a\t\tb \n c ", NormalizationRules(LATIN)) == "a b c"


def test_nfc_composes_before_filtering():
    rules = NormalizationRules(frozenset("aäb"))
    assert normalize("äb", rules) == "äb"


def test_longest_key_wins():
    rules = NormalizationRules(LATIN, {"1": "eins", "18": "achtzehn", "1800": "achtzehnhundert"})
    assert normalize("1800 18 1", rules) == "achtzehnhundert achtzehn eins"


def test_replace_runs_before_lowercase():
    rules = NormalizationRules(LATIN, {"Dr.": "doktor", "dr.": "drive"})
    assert normalize("Dr. x", rules) == "doktor x"


@pytest.mark.parametrize("table", [
    {"": "x"},
    {"1": "Ü"},
    {"ab": "xaby"},
])
def test_bad_replacement_tables(table):
    with pytest.raises(InputFormatError):
        NormalizationRules(LATIN, table)


def test_shipped_german_rules():
    rules = example_rules()
    assert normalize("Es war 1800.", rules) == "es war achtzehnhundert"
    assert normalize("Er muß z.B. 12 km gehen!", rules) == "er muss zum beispiel zwölf kilometer gehen"
    assert isinstance(normalize("naïv", rules), Dropped)


def test_parse_rules_file():
    rules = parse_rules(
        "# comment\n[charset]\nabc\n[replace]\n1\tb\n&\t a \n[options]\n"
        "lowercase = false\ndrop_policy = strip_chars\n"
    )
    assert rules.allowed_charset == frozenset("abc ")
    assert rules.replacement_table == {"1": "b", "&": " a "}
    assert not rules.lowercase and rules.drop_policy == STRIP_CHARS
    assert normalize("a&1X", rules) == "a a b"


@pytest.mark.parametrize("text", [
    "[replace]\n1\tb\n",
    "[charset]\nab\n[replace]\nno tab\n",
    "[charset]\nab\n[options]\ncolor=red\n",
    "[charset]\nab\n[options]\nlowercase=maybe\n",
    "stray\n[charset]\nab\n",
])
def test_bad_rules_files(text):
    with pytest.raises(InputFormatError):
        parse_rules(text)


ABT = TokenTable(["<blank>", "a", "b", " "], 0)


def test_encode_two_utterances():
    enc = encode(TranscriptSet([("u1", "ab"), ("u2", "ba")]), ABT, NormalizationRules.for_tokens(ABT))
    assert enc.indices.tolist() == [1, 2, 3, 2, 1]
    assert enc.spans == [(0, 2), (3, 5)]
    assert enc.utterance_ids == ["u1", "u2"]
    assert enc.decode(ABT) == "ab ba"


def test_encode_single_char():
    enc = encode(TranscriptSet([("u", "a")]), ABT, NormalizationRules.for_tokens(ABT))
    assert enc.indices.tolist() == [1] and enc.spans == [(0, 1)]


def test_encode_strips_char_without_token():
    rules = NormalizationRules.for_tokens(ABT, drop_policy=STRIP_CHARS)
    enc = encode(TranscriptSet([("u", "aqb ba")]), ABT, rules)
    assert enc.decode(ABT) == "ab ba"
    assert 0 not in enc.indices


def test_encode_skips_dropped_utterances():
    rules = NormalizationRules.for_tokens(ABT)
    enc = encode(TranscriptSet([("u1", "ab"), ("u2", "aq"), ("u3", "b")]), ABT, rules)
    assert enc.utterance_ids == ["u1", "u3"]
    assert [u for u, _ in enc.skipped] == ["u2"]


def test_encode_all_dropped():
    with pytest.raises(AllDroppedError):
        encode(TranscriptSet([("u", "qq")]), ABT, NormalizationRules.for_tokens(ABT))


def test_encode_missing_token():
    rules = NormalizationRules(frozenset("abc"), lowercase=False)
    with pytest.raises(MissingTokenError) as err:
        encode(TranscriptSet([("u7", "abc")]), ABT, rules)
    assert err.value.char == "c"


def test_missing_space_token_between_utterances():
    table = TokenTable(["<blank>", "a", "b"], 0)
    with pytest.raises(MissingTokenError):
        encode(TranscriptSet([("u1", "a"), ("u2", "b")]), table, NormalizationRules.for_tokens(table))


# keys always contain a digit or punctuation, so they can never match normalized output
KEYS = st.text(alphabet="0123456789.,!?%&", min_size=1, max_size=4)
TARGETS = st.text(alphabet="abcdefgh ", max_size=8)
RAW = st.text(alphabet="abcdefghABCDEFGH 0123456789.,!?%&\t\nïé", max_size=40)


@settings(max_examples=150, derandomize=True, deadline=None)
@given(st.dictionaries(KEYS, TARGETS, max_size=5), RAW, st.sampled_from(["drop_utterance", STRIP_CHARS]))
def test_normalize_is_idempotent(table, raw, policy):
    try:
        rules = NormalizationRules(frozenset("abcdefgh"), table, drop_policy=policy)
    except InputFormatError:
        return  # a key occurring inside a target is rejected up front
    once = normalize(raw, rules)
    if isinstance(once, Dropped):
        return
    assert normalize(once, rules) == once
    assert set(once) <= rules.allowed_charset
    assert once == once.strip() and "  " not in once


@settings(max_examples=150, derandomize=True, deadline=None)
@given(st.lists(st.text(alphabet="ab ", min_size=1, max_size=10), min_size=1, max_size=6))
def test_decode_inverts_encode(texts):
    transcripts = TranscriptSet([(f"u{i}", t) for i, t in enumerate(texts)])
    rules = NormalizationRules.for_tokens(ABT)
    kept = [" ".join(t.split()) for t in texts if t.strip()]
    if not kept:
        with pytest.raises(AllDroppedError):
            encode(transcripts, ABT, rules)
        return
    enc = encode(transcripts, ABT, rules)
    assert enc.decode(ABT) == " ".join(kept)
    assert [enc.decode(ABT)[b:e] for b, e in enc.spans] == kept
    assert np.all(enc.indices != ABT.blank_index)

"""Ground-truth text cleaning and encoding into token indices."""
from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import AllDroppedError, InputFormatError, MissingTokenError
from .posterior_io import TokenTable, TranscriptSet

DROP_UTTERANCE = "drop_utterance"
STRIP_CHARS = "strip_chars"
_WHITESPACE = re.compile(r"\s+")


@dataclass(frozen=True)
class Dropped:
    """Marker returned by :func:`normalize` for an utterance that must be dropped."""

    char: str

    @property
    def reason(self) -> str:
        return f"character {self.char!r} (U+{ord(self.char):04X}) not in charset"


@dataclass
class NormalizationRules:
    """Charset, replacement table and policies for transcript cleaning.

    The space character is always allowed; it separates words. Replacement
    keys are matched longest first, left to right, in one pass. For
    :func:`normalize` to be idempotent no key may reappear in normalized
    output; keys that contain a character outside the charset can never
    match twice, which is the usual case (digits, punctuation, units).
    """

    allowed_charset: frozenset[str]
    replacement_table: dict[str, str] = field(default_factory=dict)
    lowercase: bool = True
    drop_policy: str = DROP_UTTERANCE

    def __post_init__(self):
        self.allowed_charset = frozenset(self.allowed_charset) | {" "}
        if self.drop_policy not in (DROP_UTTERANCE, STRIP_CHARS):
            raise InputFormatError(f"unknown drop_policy {self.drop_policy!r}")
        for key, target in self.replacement_table.items():
            if not key:
                raise InputFormatError("replacement table has an empty key")
            check = target.lower() if self.lowercase else target
            bad = [c for c in check if c not in self.allowed_charset]
            if bad:
                raise InputFormatError(
                    f"replacement target {target!r} for {key!r} uses disallowed {bad[0]!r}"
                )
        for key in self.replacement_table:
            for target in self.replacement_table.values():
                if key in target:
                    raise InputFormatError(
                        f"replacement key {key!r} occurs inside target {target!r}"
                    )
        keys = sorted(self.replacement_table, key=len, reverse=True)
        self._pattern = re.compile("|".join(map(re.escape, keys))) if keys else None

    def apply_replacements(self, text: str) -> str:
        if self._pattern is None:
            return text
        return self._pattern.sub(lambda m: self.replacement_table[m.group(0)], text)

    @classmethod
    def for_tokens(cls, table: TokenTable, **kwargs) -> "NormalizationRules":
        """Rules that allow exactly the single-character tokens of ``table``."""
        kwargs.setdefault("lowercase", False)
        return cls(frozenset(table.char_map()), **kwargs)


def parse_rules(text: str) -> NormalizationRules:
    section = None
    charset: str | None = None
    table: dict[str, str] = {}
    options = {"lowercase": "true", "drop_policy": DROP_UTTERANCE}
    for lineno, line in enumerate(text.split("\n"), 1):
        line = line.rstrip("\r")
        header = line.strip()
        if header in ("[charset]", "[replace]", "[options]"):
            section = header[1:-1]
            continue
        if section == "charset":
            if charset is None and line:
                charset = line
            elif line.strip():
                raise InputFormatError(f"rules line {lineno}: [charset] takes one line")
        elif section == "replace":
            if not line:
                continue
            if "\t" not in line:
                raise InputFormatError(f"rules line {lineno}: expected 'source\\ttarget'")
            src, dst = line.split("\t", 1)
            if src in table:
                raise InputFormatError(f"rules line {lineno}: duplicate key {src!r}")
            table[src] = dst
        elif section == "options":
            if not header or header.startswith("#"):
                continue
            if "=" not in header:
                raise InputFormatError(f"rules line {lineno}: expected 'key=value'")
            key, value = (s.strip() for s in header.split("=", 1))
            if key not in options:
                raise InputFormatError(f"rules line {lineno}: unknown option {key!r}")
            options[key] = value
        elif header and not header.startswith("#"):
            raise InputFormatError(f"rules line {lineno}: text outside of a section")
    if charset is None:
        raise InputFormatError("rules file has no [charset] line")
    if options["lowercase"] not in ("true", "false"):
        raise InputFormatError(f"lowercase must be true or false, got {options['lowercase']!r}")
    return NormalizationRules(
        allowed_charset=frozenset(charset),
        replacement_table=table,
        lowercase=options["lowercase"] == "true",
        drop_policy=options["drop_policy"],
    )


def read_rules(path) -> NormalizationRules:
    return parse_rules(Path(path).read_text(encoding="utf-8"))


def example_rules() -> NormalizationRules:
    """German example rules shipped with the package."""
    text = resources.files("ctc_seg").joinpath("data/rules_de.txt").read_text(encoding="utf-8")
    return parse_rules(text)


def normalize(text: str, rules: NormalizationRules) -> str | Dropped:
    """Map raw text onto the allowed charset.

    Order: Unicode NFC, replacement table, lowercasing, whitespace folding,
    charset filtering. Returns a :class:`Dropped` marker when the drop
    policy is ``drop_utterance`` and a disallowed character remains.

    >>> rules = NormalizationRules(frozenset("abcdefghijklmnopqrstuvwxyz"),
    ...                            {"1800": "achtzehnhundert", ".": ""})
    >>> normalize("Es war 1800.", rules)
    'es war achtzehnhundert'
    """
    text = unicodedata.normalize("NFC", text)
    text = rules.apply_replacements(text)
    if rules.lowercase:
        text = text.lower()
    text = _WHITESPACE.sub(" ", text)
    allowed = rules.allowed_charset
    if rules.drop_policy == DROP_UTTERANCE:
        for c in text:
            if c not in allowed:
                return Dropped(c)
    else:
        text = "".join(c for c in text if c in allowed)
    return _WHITESPACE.sub(" ", text).strip()


@dataclass
class EncodedText:
    """Transcript as one token sequence.

    ``spans[i]`` is the half-open index range of utterance ``utterance_ids[i]``.
    Consecutive utterances are separated by a single space token that
    belongs to neither span.
    """

    indices: np.ndarray
    spans: list[tuple[int, int]]
    utterance_ids: list[str]
    texts: list[str]
    skipped: list[tuple[str, str]] = field(default_factory=list)

    def __len__(self):
        return len(self.indices)

    def decode(self, table: TokenTable) -> str:
        return "".join(table.tokens[i] for i in self.indices)


def encode(
    transcripts: TranscriptSet, table: TokenTable, rules: NormalizationRules
) -> EncodedText:
    chars = table.char_map()
    space = chars.get(" ")
    indices: list[int] = []
    spans, ids, texts, skipped = [], [], [], []
    for utt_id, raw in transcripts.utterances:
        norm = normalize(raw, rules)
        if isinstance(norm, Dropped):
            skipped.append((utt_id, norm.reason))
            continue
        if not norm:
            skipped.append((utt_id, "empty after normalization"))
            continue
        if indices:
            if space is None:
                raise MissingTokenError(" ", utt_id)
            indices.append(space)
        begin = len(indices)
        for c in norm:
            if c not in chars:
                raise MissingTokenError(c, utt_id)
            indices.append(chars[c])
        spans.append((begin, len(indices)))
        ids.append(utt_id)
        texts.append(norm)
    if not spans:
        raise AllDroppedError(
            f"all {len(transcripts)} utterances were dropped during normalization"
        )
    return EncodedText(np.array(indices, dtype=np.int64), spans, ids, texts, skipped)

"""File formats: posterior matrices, token tables, transcripts and segment manifests.

Posterior file layout (little-endian)::

    magic    4 bytes  b"CTCP"
    version  u32      1
    frames   u32      T
    tokens   u32      C
    blank    u32      blank token index
    duration f32      seconds per frame
    payload  T*C f32  natural-log probabilities, frame-major

log(0) is stored as the finite sentinel ``LOG_ZERO``; any value <= -1e29 is
read as log(0).
"""
from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InputFormatError, PosteriorFormatError, TruncatedPayloadError

logger = logging.getLogger(__name__)

MAGIC = b"CTCP"
VERSION = 1
_HEADER = struct.Struct("<4sIIIIf")

# float32(-1e30), so the sentinel survives a float32 round trip unchanged
LOG_ZERO = float(np.float32(-1e30))
LOG_ZERO_THRESHOLD = -1e29
NORMALIZATION_TOLERANCE = 1e-3

SPACE_ALIAS = "<space>"


def is_log_zero(x) -> np.ndarray | bool:
    return np.asarray(x) <= LOG_ZERO_THRESHOLD


def _row_logsumexp(data: np.ndarray) -> np.ndarray:
    x = np.where(data <= LOG_ZERO_THRESHOLD, -np.inf, data)
    peak = x.max(axis=1)
    safe = np.where(np.isfinite(peak), peak, 0.0)
    with np.errstate(divide="ignore"):
        return safe + np.log(np.exp(x - safe[:, None]).sum(axis=1))


@dataclass
class PosteriorMatrix:
    """Frame-wise log posteriors of a CTC model for one recording.

    ``data`` has shape (frames, tokens). Entries are natural-log
    probabilities; log(0) is held as ``LOG_ZERO``. Rows that are not
    normalized within ``NORMALIZATION_TOLERANCE`` are accepted but listed
    in ``warnings``.
    """

    data: np.ndarray
    index_duration: float
    blank_index: int = 0
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ValueError(f"posteriors must be 2-D, got shape {data.shape}")
        frames, tokens = data.shape
        if frames < 1:
            raise ValueError("posteriors need at least one frame")
        if tokens < 2:
            raise ValueError("posteriors need at least two tokens (blank plus one label)")
        if np.isnan(data).any() or np.isposinf(data).any():
            raise ValueError("posteriors contain NaN or +inf")
        data[data <= LOG_ZERO_THRESHOLD] = LOG_ZERO
        if (data > 1e-6).any():
            raise ValueError("log probabilities must be <= 0")
        if not 0 <= self.blank_index < tokens:
            raise ValueError(f"blank_index {self.blank_index} out of range for {tokens} tokens")
        if not (math.isfinite(self.index_duration) and self.index_duration > 0):
            raise ValueError(f"index_duration must be positive, got {self.index_duration}")
        self.data = data
        self.blank_index = int(self.blank_index)
        self.index_duration = float(self.index_duration)

        deviation = np.abs(_row_logsumexp(data))
        bad = np.flatnonzero(~(deviation <= NORMALIZATION_TOLERANCE))
        if bad.size and not self.warnings:
            self.warnings.append(
                f"{bad.size} of {frames} frames not normalized "
                f"(first frame {int(bad[0])}, |logsumexp|={deviation[bad[0]]:.3g})"
            )

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def tokens(self) -> int:
        return self.data.shape[1]

    @property
    def duration(self) -> float:
        return self.frames * self.index_duration

    @property
    def normalized(self) -> bool:
        return not self.warnings

    def log_probs(self) -> np.ndarray:
        """Return the data with log(0) as ``-inf``, ready for arithmetic."""
        out = self.data.copy()
        out[out <= LOG_ZERO_THRESHOLD] = -np.inf
        return out


def write_posteriors(matrix: PosteriorMatrix, path) -> None:
    header = _HEADER.pack(
        MAGIC, VERSION, matrix.frames, matrix.tokens, matrix.blank_index,
        matrix.index_duration,
    )
    payload = np.ascontiguousarray(matrix.data, dtype="<f4").tobytes()
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload)


def read_posteriors(path) -> PosteriorMatrix:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise PosteriorFormatError(
            f"{path}: file too short for header ({len(raw)} < {_HEADER.size} bytes)"
        )
    magic, version, frames, tokens, blank, duration = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise PosteriorFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise PosteriorFormatError(f"{path}: unsupported version {version}")
    if frames < 1:
        raise PosteriorFormatError(f"{path}: frame count must be >= 1")
    if tokens < 2:
        raise PosteriorFormatError(f"{path}: token count must be >= 2, got {tokens}")
    if blank >= tokens:
        raise PosteriorFormatError(f"{path}: blank_index {blank} >= token count {tokens}")
    if not (math.isfinite(duration) and duration > 0):
        raise PosteriorFormatError(f"{path}: index duration must be positive, got {duration}")
    expected = frames * tokens * 4
    actual = len(raw) - _HEADER.size
    if actual != expected:
        raise TruncatedPayloadError(expected, actual)
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(frames, tokens)
    if not np.isfinite(data).all():
        raise PosteriorFormatError(f"{path}: payload contains non-finite values")
    if (data > 1e-6).any():
        raise PosteriorFormatError(f"{path}: payload contains positive log probabilities")
    # shortest decimal that round-trips through float32, e.g. 0.01 rather than 0.0099999998
    duration = float(np.format_float_positional(np.float32(duration), unique=True))
    matrix = PosteriorMatrix(data.astype(np.float64), duration, int(blank))
    for w in matrix.warnings:
        logger.warning("%s: %s", path, w)
    return matrix


@dataclass
class TokenTable:
    tokens: list[str]
    blank_index: int = 0

    def __post_init__(self):
        self.tokens = list(self.tokens)
        if len(self.tokens) < 2:
            raise InputFormatError("token table needs at least two tokens")
        if any(t == "" for t in self.tokens):
            raise InputFormatError("token table contains an empty token")
        seen = set()
        for i, t in enumerate(self.tokens):
            if t in seen:
                raise InputFormatError(f"duplicate token {t!r} at index {i}")
            seen.add(t)
        if not 0 <= self.blank_index < len(self.tokens):
            raise InputFormatError(
                f"blank_index {self.blank_index} out of range for {len(self.tokens)} tokens"
            )

    def __len__(self):
        return len(self.tokens)

    def char_map(self) -> dict[str, int]:
        """Single-character tokens (blank excluded) keyed by their character."""
        return {
            t: i for i, t in enumerate(self.tokens)
            if len(t) == 1 and i != self.blank_index
        }


def read_token_table(path, blank_index: int = 0) -> TokenTable:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    tokens = [line.rstrip("\r") for line in lines]
    # editors strip trailing blanks, so the space token may be spelled out
    tokens = [" " if t == SPACE_ALIAS else t for t in tokens]
    return TokenTable(tokens, blank_index)


def write_token_table(table: TokenTable, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for t in table.tokens:
            f.write(t + "\n")


@dataclass
class TranscriptSet:
    utterances: list[tuple[str, str]]
    recording_id: str = "rec"

    def __post_init__(self):
        self.utterances = [(str(u), str(t)) for u, t in self.utterances]
        if not self.utterances:
            raise InputFormatError("transcript contains no utterances")
        seen = set()
        for utt_id, _ in self.utterances:
            if not utt_id:
                raise InputFormatError("empty utterance id")
            if utt_id in seen:
                raise InputFormatError(f"duplicate utterance id {utt_id!r}")
            seen.add(utt_id)

    def __len__(self):
        return len(self.utterances)


def read_transcripts(path, recording_id: str = "rec") -> TranscriptSet:
    utterances = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            if "\t" not in line:
                raise InputFormatError(f"{path}:{lineno}: expected '<utterance_id>\\t<text>'")
            utt_id, text = line.split("\t", 1)
            utterances.append((utt_id.strip(), text))
    return TranscriptSet(utterances, recording_id)


def write_transcripts(transcripts: TranscriptSet, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for utt_id, text in transcripts.utterances:
            f.write(f"{utt_id}\t{text}\n")


@dataclass
class Segment:
    """One utterance located in a recording.

    ``first_frame`` and ``last_frame`` are the 1-based frames the boundaries
    were derived from (None for segments read from files).
    """

    utterance_id: str
    start: float
    end: float
    score_log: float = 0.0
    text: str = ""
    filtered: bool = False
    degenerate: bool = False
    first_frame: int | None = None
    last_frame: int | None = None

    def to_dict(self) -> dict:
        return {
            "utterance_id": self.utterance_id,
            "start": _centis(self.start),
            "end": _centis(self.end),
            "score_log": None if math.isinf(self.score_log) else round(self.score_log, 6),
            "text": self.text,
            "filtered": self.filtered,
            "degenerate": self.degenerate,
        }


def _centis(x: float) -> float:
    return float(f"{x:.2f}")


@dataclass
class SegmentManifest:
    segments: list[Segment]
    recording_id: str = "rec"

    def __post_init__(self):
        self.segments = sorted(self.segments, key=lambda s: s.start)

    def __len__(self):
        return len(self.segments)

    def __iter__(self):
        return iter(self.segments)

    def by_id(self) -> dict[str, Segment]:
        return {s.utterance_id: s for s in self.segments}

    def validate(self, duration: float | None = None) -> None:
        """Raise ValueError unless segments are ordered, non-empty and disjoint."""
        prev_end = -math.inf
        for s in self.segments:
            if not s.degenerate and not s.start < s.end:
                raise ValueError(f"segment {s.utterance_id}: start {s.start} >= end {s.end}")
            if s.start < 0 or (duration is not None and s.end > duration + 1e-9):
                raise ValueError(f"segment {s.utterance_id} outside the recording")
            if s.start < prev_end - 1e-9:
                raise ValueError(f"segment {s.utterance_id} overlaps its predecessor")
            prev_end = s.end


def format_kaldi(manifest: SegmentManifest) -> str:
    return "".join(
        f"{s.utterance_id} {manifest.recording_id} {s.start:.2f} {s.end:.2f}\n"
        for s in manifest.segments
    )


def format_json(manifest: SegmentManifest) -> str:
    doc = {
        "recording_id": manifest.recording_id,
        "segments": [s.to_dict() for s in manifest.segments],
    }
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"


def write_segments(manifest: SegmentManifest, fmt: str, path) -> None:
    if fmt == "kaldi":
        content = format_kaldi(manifest)
    elif fmt == "json":
        content = format_json(manifest)
    else:
        raise ValueError(f"unknown segment format {fmt!r}")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(content)


def read_segments(path, fmt: str | None = None) -> SegmentManifest:
    """Read a kaldi ``segments`` file or a JSON manifest.

    The format is guessed from the suffix when ``fmt`` is None. Kaldi files
    may hold several recordings; only the first recording id is kept as the
    manifest id.
    """
    path = Path(path)
    if fmt is None:
        fmt = "json" if path.suffix.lower() == ".json" else "kaldi"
    if fmt == "json":
        doc = json.loads(path.read_text(encoding="utf-8"))
        segments = [
            Segment(
                utterance_id=d["utterance_id"],
                start=float(d["start"]),
                end=float(d["end"]),
                score_log=-math.inf if d.get("score_log") is None else float(d["score_log"]),
                text=d.get("text", ""),
                filtered=bool(d.get("filtered", False)),
                degenerate=bool(d.get("degenerate", False)),
            )
            for d in doc["segments"]
        ]
        return SegmentManifest(segments, doc.get("recording_id", "rec"))
    if fmt != "kaldi":
        raise ValueError(f"unknown segment format {fmt!r}")

    segments = []
    recording_id = None
    seen = set()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) < 4:
                raise InputFormatError(f"{path}:{lineno}: expected '<utt> <rec> <start> <end>'")
            utt_id, rec, start, end = parts[:4]
            if utt_id in seen:
                raise InputFormatError(f"{path}:{lineno}: duplicate utterance id {utt_id!r}")
            seen.add(utt_id)
            try:
                segments.append(Segment(utt_id, float(start), float(end)))
            except ValueError as e:
                raise InputFormatError(f"{path}:{lineno}: {e}") from None
            recording_id = recording_id or rec
    return SegmentManifest(segments, recording_id or "rec")


def manifest_from_pairs(
    pairs: Iterable[tuple[str, float, float]], recording_id: str = "rec"
) -> SegmentManifest:
    return SegmentManifest([Segment(u, s, e) for u, s, e in pairs], recording_id)


def token_table_for(chars: Sequence[str], blank: str = "<blank>") -> TokenTable:
    """Build a table with the blank at index 0 followed by ``chars``."""
    return TokenTable([blank, *chars], 0)

"""Synthetic posteriors with planted alignments, and an exhaustive path oracle."""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import SynthesisError
from .normalization import EncodedText
from .posterior_io import (
    LOG_ZERO,
    PosteriorMatrix,
    Segment,
    SegmentManifest,
    TokenTable,
    TranscriptSet,
)

MAX_ORACLE_FRAMES = 14
MAX_ORACLE_CHARS = 5


@dataclass
class SynthUtterance:
    utterance_id: str
    text: str
    # explicit planted start in seconds; None places it after the previous one
    start: float | None = None
    # False: listed in the transcript but absent from the audio
    present: bool = True


@dataclass
class SynthSpec:
    token_table: TokenTable
    utterances: list[SynthUtterance]
    frames_per_char: int = 1
    blank_gap_frames: int = 0
    peak_prob: float = 0.95
    noise: float = 0.0
    noise_seed: int = 0
    index_duration: float = 0.01
    prologue_sec: float = 0.0
    epilogue_sec: float = 0.0
    recording_id: str = "synth"

    def __post_init__(self):
        n_tokens = len(self.token_table)
        if self.frames_per_char < 1:
            raise SynthesisError("frames_per_char must be >= 1")
        if self.blank_gap_frames < 0:
            raise SynthesisError("blank_gap_frames must be >= 0")
        if not (1.0 / n_tokens - 1e-12 <= self.peak_prob <= 1.0):
            raise SynthesisError(f"peak_prob must lie in [1/C, 1], got {self.peak_prob}")
        if self.noise < 0:
            raise SynthesisError("noise must be >= 0")
        if not self.index_duration > 0:
            raise SynthesisError("index_duration must be positive")
        if not self.utterances:
            raise SynthesisError("no utterances")
        ids = [u.utterance_id for u in self.utterances]
        if len(set(ids)) != len(ids):
            raise SynthesisError("duplicate utterance ids")

    def transcripts(self) -> TranscriptSet:
        return TranscriptSet(
            [(u.utterance_id, u.text) for u in self.utterances], self.recording_id
        )

    @classmethod
    def from_dict(cls, doc: dict) -> "SynthSpec":
        doc = dict(doc)
        table = TokenTable(doc.pop("tokens"), doc.pop("blank_index", 0))
        utts = [
            SynthUtterance(u["id"], u["text"], u.get("start"), u.get("present", True))
            for u in doc.pop("utterances")
        ]
        known = set(cls.__dataclass_fields__) - {"token_table", "utterances"}
        unknown = set(doc) - known
        if unknown:
            raise SynthesisError(f"unknown synth spec fields: {sorted(unknown)}")
        return cls(table, utts, **doc)

    def to_dict(self) -> dict:
        return {
            "recording_id": self.recording_id,
            "tokens": self.token_table.tokens,
            "blank_index": self.token_table.blank_index,
            "utterances": [
                {"id": u.utterance_id, "text": u.text, "start": u.start, "present": u.present}
                for u in self.utterances
            ],
            "frames_per_char": self.frames_per_char,
            "blank_gap_frames": self.blank_gap_frames,
            "peak_prob": self.peak_prob,
            "noise": self.noise,
            "noise_seed": self.noise_seed,
            "index_duration": self.index_duration,
            "prologue_sec": self.prologue_sec,
            "epilogue_sec": self.epilogue_sec,
        }


def read_synth_spec(path) -> SynthSpec:
    return SynthSpec.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _frames(seconds: float, dt: float) -> int:
    return int(round(seconds / dt))


def generate(spec: SynthSpec) -> tuple[PosteriorMatrix, SegmentManifest]:
    """Build posteriors whose best alignment is the planted layout.

    Every frame of a character's span gives that character ``peak_prob``;
    silence (prologue, gaps, epilogue) gives it to blank. The remaining mass
    is spread evenly over the other tokens.
    """
    table = spec.token_table
    chars = table.char_map()
    dt = spec.index_duration
    fpc = spec.frames_per_char

    labels: list[int] = []          # per-frame peak token
    planted: list[Segment] = []
    blank = table.blank_index
    labels.extend([blank] * _frames(spec.prologue_sec, dt))
    cursor = len(labels)
    for u in spec.utterances:
        if not u.present:
            continue
        for c in u.text:
            if c not in chars:
                raise SynthesisError(f"character {c!r} of {u.utterance_id!r} has no token")
        if u.start is not None:
            begin = _frames(u.start, dt)
            if begin < cursor:
                raise SynthesisError(
                    f"planted segment {u.utterance_id!r} overlaps the previous one"
                )
            labels.extend([blank] * (begin - len(labels)))
        elif planted:
            labels.extend([blank] * spec.blank_gap_frames)
        begin = len(labels)
        for c in u.text:
            labels.extend([chars[c]] * fpc)
        planted.append(Segment(
            u.utterance_id, begin * dt, len(labels) * dt, 0.0, u.text,
            first_frame=begin + 1, last_frame=len(labels),
        ))
        cursor = len(labels)
    labels.extend([blank] * _frames(spec.epilogue_sec, dt))
    if not labels:
        raise SynthesisError("spec produces an empty recording")

    n_tokens = len(table)
    rest = (1.0 - spec.peak_prob) / (n_tokens - 1)
    probs = np.full((len(labels), n_tokens), rest)
    probs[np.arange(len(labels)), labels] = spec.peak_prob
    if spec.noise > 0:
        rng = np.random.default_rng(spec.noise_seed)
        probs += rng.uniform(0.0, spec.noise, size=probs.shape)
    probs /= probs.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore"):
        logp = np.log(probs)
    logp[probs == 0] = LOG_ZERO

    matrix = PosteriorMatrix(logp, dt, blank)
    return matrix, SegmentManifest(planted, spec.recording_id)


@dataclass
class OraclePath:
    log_prob: float
    # per frame, 1-based character index (0 before the text); None if no path
    char_index: np.ndarray | None
    end_frame: int | None
    # best and second-best distinct path scores, for uniqueness checks
    runner_up: float = -math.inf
    n_paths: int = field(default=0)

    @property
    def unique(self) -> bool:
        return self.char_index is not None and self.log_prob - self.runner_up > 1e-9


def brute_force_best_path(
    posteriors: PosteriorMatrix,
    text: EncodedText | np.ndarray,
    *,
    blank_stay_includes_char: bool = False,
) -> OraclePath:
    """Enumerate every admissible path and return the most probable one.

    A path is fixed by the strictly increasing frames ``s_1 < ... < s_M`` at
    which characters are consumed and by an end frame ``e >= s_M``. Frames
    before ``s_1`` are free; every other frame up to ``e`` pays the blank
    (stay) probability.
    """
    chars = np.asarray(getattr(text, "indices", text))
    frames, length = posteriors.frames, len(chars)
    if frames > MAX_ORACLE_FRAMES or length > MAX_ORACLE_CHARS:
        raise SynthesisError(
            f"instance too large to enumerate (T={frames}, M={length}; "
            f"limits {MAX_ORACLE_FRAMES}, {MAX_ORACLE_CHARS})"
        )
    lp = posteriors.log_probs()
    blank = lp[:, posteriors.blank_index]

    best, second = -math.inf, -math.inf
    best_path = None
    count = 0
    for steps in itertools.combinations(range(1, frames + 1), length):
        # score up to s_M, then extend frame by frame to every end frame
        score = 0.0
        k = 0
        for t in range(steps[0], steps[-1] + 1):
            if k < length and steps[k] == t:
                score += lp[t - 1, chars[k]]
                k += 1
            else:
                stay = blank[t - 1]
                if blank_stay_includes_char:
                    stay = max(stay, lp[t - 1, chars[k - 1]])
                score += stay
        for end in range(steps[-1], frames + 1):
            if end > steps[-1]:
                stay = blank[end - 1]
                if blank_stay_includes_char:
                    stay = max(stay, lp[end - 1, chars[-1]])
                score += stay
            count += 1
            if score > best:
                best, second = score, best
                best_path = (steps, end)
            elif score > second:
                second = score
    if best_path is None or not math.isfinite(best):
        return OraclePath(-math.inf, None, None, n_paths=count)
    steps, end = best_path
    a = np.zeros(frames, dtype=np.int64)
    for j, s in enumerate(steps, 1):
        a[s - 1:] = j
    return OraclePath(best, a, end, second, count)

"""CTC segmentation: trellis, backtracking, segment extraction and scoring.

The trellis holds, for every frame ``t`` (1-based, row 0 is the state before
any audio) and character ``j`` (1-based, column 0 is the virtual start), the
best log joint probability of having consumed characters ``1..j`` by frame
``t``::

    k[t][0] = 0                  for all t   (text may start anywhere)
    k[0][j] = -inf               for j > 0
    k[t][j] = max(k[t-1][j]   + log p(blank | t),
                  k[t-1][j-1] + log p(c_j   | t))

Everything is computed in the log domain; ``-inf`` stands for log(0).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    InfeasibleLengthError,
    InputFormatError,
    NoPathError,
    WindowEscapeError,
    WindowInfeasibleError,
)
from .normalization import EncodedText, NormalizationRules, encode
from .posterior_io import (
    PosteriorMatrix,
    Segment,
    SegmentManifest,
    TokenTable,
    TranscriptSet,
)

logger = logging.getLogger(__name__)

DEFAULT_WINDOW = 8000
DEFAULT_CHUNK_LEN = 30
DEFAULT_MIN_SCORE = -1.5
MIN_WINDOW = 16


@dataclass
class AlignConfig:
    window_W: int = DEFAULT_WINDOW
    score_chunk_L: int = DEFAULT_CHUNK_LEN
    min_score_log: float = DEFAULT_MIN_SCORE
    auto_widen: bool = False
    max_widen_doublings: int = 4
    # stay on a character through its own label as well as through blank
    blank_stay_includes_char: bool = False

    def __post_init__(self):
        if self.window_W != 0 and self.window_W < MIN_WINDOW:
            raise ValueError(f"window must be 0 (full) or >= {MIN_WINDOW}, got {self.window_W}")
        if self.score_chunk_L < 1:
            raise ValueError(f"score chunk length must be >= 1, got {self.score_chunk_L}")
        if self.max_widen_doublings < 0:
            raise ValueError("max_widen_doublings must be >= 0")


@dataclass
class Trellis:
    """Band-stored trellis.

    Row ``t`` stores columns ``row_lo[t]..row_hi[t]`` in
    ``values[t, :row_hi[t] - row_lo[t] + 1]``. Column 0 and row 0 are
    implicit. For the full trellis every row spans ``1..M``.
    """

    values: np.ndarray
    row_lo: np.ndarray
    row_hi: np.ndarray
    col_lo: np.ndarray
    col_hi: np.ndarray
    window: int = 0
    centers: np.ndarray | None = None

    @property
    def frames(self) -> int:
        return self.values.shape[0] - 1

    @property
    def length(self) -> int:
        return len(self.col_lo) - 1

    @property
    def computed_region(self) -> list[tuple[int, int]]:
        """Filled frame interval per character ``j = 1..M``."""
        return [(int(a), int(b)) for a, b in zip(self.col_lo[1:], self.col_hi[1:])]

    @property
    def filled_cells(self) -> int:
        return int(np.maximum(self.col_hi[1:] - self.col_lo[1:] + 1, 0).sum())

    def is_filled(self, t: int, j: int) -> bool:
        if j == 0:
            return True
        return t >= 1 and self.row_lo[t] <= j <= self.row_hi[t]

    def value(self, t: int, j: int) -> float:
        if j == 0:
            return 0.0
        if t == 0 or not self.row_lo[t] <= j <= self.row_hi[t]:
            return -math.inf
        return float(self.values[t, j - self.row_lo[t]])

    def column(self, j: int) -> np.ndarray:
        out = np.full(self.frames + 1, -np.inf)
        if j == 0:
            out[:] = 0.0
            return out
        lo, hi = self.col_lo[j], self.col_hi[j]
        if lo <= hi:
            ts = np.arange(lo, hi + 1)
            out[ts] = self.values[ts, j - self.row_lo[ts]]
        return out

    def to_dense(self) -> np.ndarray:
        """(T+1) x (M+1) matrix of all cells, unfilled ones as ``-inf``."""
        dense = np.full((self.frames + 1, self.length + 1), -np.inf)
        dense[:, 0] = 0.0
        for t in range(1, self.frames + 1):
            lo, hi = self.row_lo[t], self.row_hi[t]
            if lo <= hi:
                dense[t, lo:hi + 1] = self.values[t, : hi - lo + 1]
        return dense


def _check_lengths(posteriors: PosteriorMatrix, text: EncodedText) -> None:
    frames, length = posteriors.frames, len(text.indices)
    if length < 1:
        raise InfeasibleLengthError("text is empty")
    if length > frames:
        raise InfeasibleLengthError(
            f"text has {length} characters but posteriors only {frames} frames"
        )
    if np.any(text.indices == posteriors.blank_index):
        raise InputFormatError("encoded text contains the blank index")
    if np.any((text.indices < 0) | (text.indices >= posteriors.tokens)):
        raise InputFormatError("encoded text has indices outside the token range")


def _fill(
    posteriors: PosteriorMatrix,
    text: EncodedText,
    col_lo: np.ndarray,
    col_hi: np.ndarray,
    window: int,
    centers: np.ndarray | None,
    blank_stay_includes_char: bool,
) -> Trellis:
    lp = posteriors.log_probs()
    chars = text.indices
    frames = lp.shape[0]
    blank = lp[:, posteriors.blank_index]

    # bands are monotone in j, so the columns active in one row are contiguous
    ts = np.arange(frames + 1)
    row_lo = np.searchsorted(col_hi[1:], ts, side="left") + 1
    row_hi = np.searchsorted(col_lo[1:], ts, side="right")
    row_lo[0], row_hi[0] = 1, 0
    width = max(int((row_hi - row_lo + 1).max()), 1)
    values = np.full((frames + 1, width), -np.inf)

    for t in range(1, frames + 1):
        lo, hi = int(row_lo[t]), int(row_hi[t])
        if lo > hi:
            continue
        plo, phi = int(row_lo[t - 1]), int(row_hi[t - 1])
        prev = values[t - 1]
        n = hi - lo + 1
        emit = lp[t - 1, chars[lo - 1:hi]]

        # step from column j-1
        step = np.full(n, -np.inf)
        a, b = max(lo, plo + 1), min(hi, phi + 1)
        if a <= b:
            step[a - lo:b - lo + 1] = prev[a - 1 - plo:b - plo]
        if lo == 1:
            step[0] = 0.0
        step += emit

        # stay in column j
        stay = np.full(n, -np.inf)
        a, b = max(lo, plo), min(hi, phi)
        if a <= b:
            stay[a - lo:b - lo + 1] = prev[a - plo:b - plo + 1]
        if blank_stay_includes_char:
            stay += np.maximum(emit, blank[t - 1])
        else:
            stay += blank[t - 1]

        values[t, :n] = np.maximum(stay, step)

    return Trellis(values, row_lo, row_hi, col_lo, col_hi, window, centers)


def compute_trellis(
    posteriors: PosteriorMatrix,
    text: EncodedText,
    *,
    blank_stay_includes_char: bool = False,
) -> Trellis:
    """Fill the complete (T+1) x (M+1) trellis."""
    _check_lengths(posteriors, text)
    frames, length = posteriors.frames, len(text.indices)
    col_lo = np.ones(length + 1, dtype=np.int64)
    col_hi = np.full(length + 1, frames, dtype=np.int64)
    col_lo[0] = 0
    return _fill(posteriors, text, col_lo, col_hi, 0, None, blank_stay_includes_char)


def window_bands(frames: int, length: int, window: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Band centers ``round(j*T/M)`` and clipped frame bounds per character."""
    half = window // 2
    j = np.arange(length + 1, dtype=np.int64)
    centers = (2 * j * frames + length) // (2 * length)
    col_lo = np.maximum(centers - half, 1)
    col_hi = np.minimum(centers + half, frames)
    col_lo[0], col_hi[0] = 0, frames
    return centers, col_lo, col_hi


def compute_trellis_windowed(
    posteriors: PosteriorMatrix,
    text: EncodedText,
    window: int,
    *,
    blank_stay_includes_char: bool = False,
) -> Trellis:
    """Fill only frames ``[t* - W/2, t* + W/2]`` of each character column.

    ``t* = round(j*T/M)`` is the frame proportional to character ``j``.
    Work and memory are O(M*W) instead of O(M*T).
    """
    _check_lengths(posteriors, text)
    frames, length = posteriors.frames, len(text.indices)
    if (window // 2) * length < frames:
        raise WindowInfeasibleError(
            f"window {window} too small for {frames} frames / {length} characters; "
            f"need W/2 >= T/M = {frames / length:.1f}"
        )
    if window < MIN_WINDOW:
        raise ValueError(f"window must be >= {MIN_WINDOW}, got {window}")
    centers, col_lo, col_hi = window_bands(frames, length, window)
    return _fill(posteriors, text, col_lo, col_hi, window, centers, blank_stay_includes_char)


@dataclass
class FrameAlignment:
    """Frame-to-character assignment recovered from a trellis.

    Arrays are indexed by 0-based frame ``i`` (audio frame ``i + 1``).
    ``char_index[i]`` is the 1-based character aligned there, 0 before the
    text starts. ``transition_log_prob[i]`` is the log probability of the
    transition taken into that frame. ``end_frame`` is 1-based.
    """

    char_index: np.ndarray
    transition_log_prob: np.ndarray
    end_frame: int
    path_log_prob: float

    @property
    def step_frames(self) -> np.ndarray:
        """1-based frame at which each character ``1..M`` is consumed."""
        length = int(self.char_index.max())
        return np.searchsorted(self.char_index, np.arange(1, length + 1), side="left") + 1

    @property
    def first_frame(self) -> int:
        return int(np.searchsorted(self.char_index, 1, side="left")) + 1


def backtrack(
    trellis: Trellis,
    posteriors: PosteriorMatrix,
    text: EncodedText,
    *,
    blank_stay_includes_char: bool = False,
) -> FrameAlignment:
    """Recover the best path, starting at the most probable end frame.

    Walking back from frame ``t+1`` on character ``j``, the path stays on
    ``j`` only if that transition is strictly more probable than the step
    from ``j-1``.
    """
    lp = posteriors.log_probs()
    blank = lp[:, posteriors.blank_index]
    chars = text.indices
    frames, length = trellis.frames, trellis.length
    windowed = trellis.window > 0

    last = trellis.column(length)[1:]
    end = int(np.argmax(last)) + 1
    if not np.isfinite(last[end - 1]):
        if windowed:
            raise WindowEscapeError(length, trellis.window)
        raise NoPathError("no path reaches the last character")
    if windowed and trellis.col_lo[length] > 1 and end == trellis.col_lo[length]:
        raise WindowEscapeError(length, trellis.window)

    def stay_lp(frame: int, j: int) -> float:
        s = blank[frame - 1]
        if blank_stay_includes_char and j > 0:
            s = max(s, lp[frame - 1, chars[j - 1]])
        return s

    a = np.zeros(frames, dtype=np.int64)
    rho = np.empty(frames)
    a[end - 1:] = length
    for frame in range(end + 1, frames + 1):
        rho[frame - 1] = stay_lp(frame, length)

    j = length
    for t in range(end - 1, 0, -1):
        if j == 0:
            break
        if windowed and not (trellis.is_filled(t, j) and trellis.is_filled(t, j - 1)):
            raise WindowEscapeError(j, trellis.window)
        stay = trellis.value(t, j) + stay_lp(t + 1, j)
        emit = lp[t, chars[j - 1]]
        step = trellis.value(t, j - 1) + emit
        if stay > step:
            rho[t] = stay_lp(t + 1, j)
        else:
            rho[t] = emit
            j -= 1
        a[t - 1] = j
    if a[0] == 1:
        rho[0] = lp[0, chars[0]]
    pre = a == 0
    rho[pre] = blank[pre]

    return FrameAlignment(a, rho, end, float(last[end - 1]))


def chunk_means(values: np.ndarray, chunk: int) -> np.ndarray:
    """Means over consecutive chunks; the last, shorter chunk over its own length."""
    n = len(values)
    starts = np.arange(0, n, chunk)
    sums = np.add.reduceat(values, starts) if n else np.zeros(0)
    counts = np.minimum(starts + chunk, n) - starts
    return sums / counts


def segment_score(rho: np.ndarray, chunk: int) -> float:
    """Minimum chunk mean of per-frame transition log probabilities."""
    if len(rho) == 0:
        return -math.inf
    return float(chunk_means(np.asarray(rho, dtype=np.float64), chunk).min())


def extract_segments(
    alignment: FrameAlignment,
    text: EncodedText,
    posteriors: PosteriorMatrix,
    config: AlignConfig | None = None,
    recording_id: str = "rec",
) -> SegmentManifest:
    """Turn a frame alignment into one scored segment per utterance.

    A segment runs from the leading edge of the frame where its first
    character is consumed to the trailing edge of the frame where its last
    character is consumed.
    """
    config = config or AlignConfig()
    dt = posteriors.index_duration
    steps = alignment.step_frames
    rho = alignment.transition_log_prob
    a = alignment.char_index
    if config.blank_stay_includes_char:
        lp = posteriors.data
        blank = lp[:, posteriors.blank_index]
    segments = []
    for utt_id, utt_text, (b, e) in zip(text.utterance_ids, text.texts, text.spans):
        if e <= b or e > len(steps):
            segments.append(Segment(utt_id, 0.0, 0.0, -math.inf, utt_text,
                                    filtered=True, degenerate=True))
            continue
        first, last = int(steps[b]), int(steps[e - 1])
        if config.blank_stay_includes_char:
            # frames that stay on the last character through its own label
            c = text.indices[e - 1]
            while last < len(a) and a[last] == e and lp[last, c] > blank[last]:
                last += 1
        score = segment_score(rho[first - 1:last], config.score_chunk_L)
        segments.append(Segment(
            utterance_id=utt_id,
            start=(first - 1) * dt,
            end=last * dt,
            score_log=score,
            text=utt_text,
            filtered=score < config.min_score_log,
            first_frame=first,
            last_frame=last,
        ))
    return SegmentManifest(segments, recording_id)


def align_encoded(
    posteriors: PosteriorMatrix,
    text: EncodedText,
    config: AlignConfig | None = None,
) -> tuple[FrameAlignment, Trellis]:
    """Trellis plus backtracking, widening the window on request."""
    config = config or AlignConfig()
    flag = config.blank_stay_includes_char
    window = config.window_W
    doublings = 0
    while True:
        try:
            if window == 0:
                trellis = compute_trellis(posteriors, text, blank_stay_includes_char=flag)
            else:
                trellis = compute_trellis_windowed(
                    posteriors, text, window, blank_stay_includes_char=flag
                )
            return backtrack(trellis, posteriors, text, blank_stay_includes_char=flag), trellis
        except (WindowInfeasibleError, WindowEscapeError) as err:
            if not config.auto_widen or doublings >= config.max_widen_doublings:
                raise
            doublings += 1
            window *= 2
            logger.info("%s; widening window to %d", err, window)


def align(
    posteriors: PosteriorMatrix,
    transcripts: TranscriptSet,
    table: TokenTable,
    rules: NormalizationRules | None = None,
    config: AlignConfig | None = None,
) -> SegmentManifest:
    """Normalize, encode, align and segment one recording."""
    config = config or AlignConfig()
    if len(table) != posteriors.tokens:
        raise InputFormatError(
            f"token table has {len(table)} tokens, posteriors have {posteriors.tokens}"
        )
    if table.blank_index != posteriors.blank_index:
        raise InputFormatError(
            f"blank index mismatch: table {table.blank_index}, posteriors {posteriors.blank_index}"
        )
    rules = rules or NormalizationRules.for_tokens(table)
    text = encode(transcripts, table, rules)
    for utt_id, reason in text.skipped:
        logger.warning("skipping utterance %s: %s", utt_id, reason)
    alignment, _ = align_encoded(posteriors, text, config)
    steps = np.diff(alignment.char_index)
    assert steps.min(initial=0) >= 0 and steps.max(initial=0) <= 1, "non-monotone alignment"
    return extract_segments(alignment, text, posteriors, config, transcripts.recording_id)

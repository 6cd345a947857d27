"""Boundary accuracy against reference segmentations, and preamble/postamble augmentation."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import EvaluationError
from .posterior_io import PosteriorMatrix, Segment, SegmentManifest

DEFAULT_THRESHOLD = 0.5
HISTOGRAM_BINS = 60
AUGMENT_RANGE = (10.0, 30.0)


@dataclass
class BoundaryStats:
    mean: float
    std: float
    within_ratio: float


@dataclass
class EvalReport:
    mean_dev: float
    std_dev: float
    within_ratio: float
    threshold: float
    n_boundaries: int
    start: BoundaryStats
    end: BoundaryStats
    unmatched_predicted: list[str] = field(default_factory=list)
    unmatched_reference: list[str] = field(default_factory=list)

    def table_row(self) -> str:
        return (
            f"Mean {self.mean_dev:.2f}s Std {self.std_dev:.2f} "
            f"<{self.threshold:g}s {100 * self.within_ratio:.1f}%"
        )

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2) + "\n"


def _stats(dev: np.ndarray, threshold: float) -> BoundaryStats:
    return BoundaryStats(float(dev.mean()), float(dev.std()), float((dev <= threshold).mean()))


def matched_deviations(
    predicted: SegmentManifest, reference: SegmentManifest
) -> tuple[np.ndarray, np.ndarray, list[str], list[str]]:
    """Signed start and end deviations (predicted - reference) of matched ids."""
    pred, ref = predicted.by_id(), reference.by_id()
    ids = [s.utterance_id for s in reference.segments if s.utterance_id in pred]
    starts = np.array([pred[u].start - ref[u].start for u in ids], dtype=np.float64)
    ends = np.array([pred[u].end - ref[u].end for u in ids], dtype=np.float64)
    unmatched_pred = sorted(set(pred) - set(ref))
    unmatched_ref = sorted(set(ref) - set(pred))
    return starts, ends, unmatched_pred, unmatched_ref


def evaluate(
    predicted: SegmentManifest,
    reference: SegmentManifest,
    threshold: float = DEFAULT_THRESHOLD,
) -> EvalReport:
    """Mean, population std and within-threshold ratio of boundary deviations.

    Start and end deviations are pooled as absolute values. Segments are
    matched by utterance id; unmatched ids are listed and otherwise ignored.
    """
    starts, ends, unmatched_pred, unmatched_ref = matched_deviations(predicted, reference)
    if len(starts) == 0:
        raise EvaluationError("no utterance id is shared by prediction and reference")
    starts, ends = np.abs(starts), np.abs(ends)
    pooled = np.concatenate([starts, ends])
    overall = _stats(pooled, threshold)
    return EvalReport(
        mean_dev=overall.mean,
        std_dev=overall.std,
        within_ratio=overall.within_ratio,
        threshold=threshold,
        n_boundaries=len(pooled),
        start=_stats(starts, threshold),
        end=_stats(ends, threshold),
        unmatched_predicted=unmatched_pred,
        unmatched_reference=unmatched_ref,
    )


def deviation_histogram(
    predicted: SegmentManifest, reference: SegmentManifest, bins: int = HISTOGRAM_BINS
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Histogram of signed deviations; returns (edges, start_counts, end_counts).

    Both histograms share edges spanning the pooled deviation range.
    """
    starts, ends, _, _ = matched_deviations(predicted, reference)
    if len(starts) == 0:
        raise EvaluationError("no utterance id is shared by prediction and reference")
    pooled = np.concatenate([starts, ends])
    lo, hi = float(pooled.min()), float(pooled.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, bins + 1)
    return edges, np.histogram(starts, edges)[0], np.histogram(ends, edges)[0]


def write_histogram_csv(
    predicted: SegmentManifest, reference: SegmentManifest, path, bins: int = HISTOGRAM_BINS
) -> None:
    edges, start_counts, end_counts = deviation_histogram(predicted, reference, bins)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["bin_left", "bin_right", "count_start", "count_end"])
        for i in range(bins):
            w.writerow([repr(float(edges[i])), repr(float(edges[i + 1])),
                        int(start_counts[i]), int(end_counts[i])])


def sample_augmentation(seed: int, low: float = AUGMENT_RANGE[0],
                        high: float = AUGMENT_RANGE[1]) -> tuple[float, float]:
    """Draw (prepend, append) durations in seconds, uniform on [low, high]."""
    rng = np.random.default_rng(seed)
    n, m = rng.uniform(low, high, size=2)
    return float(n), float(m)


def _whole_frames(seconds: float, dt: float) -> int:
    # tolerate representation error such as 0.3 / 0.1 = 2.9999999999999996
    return int(math.floor(seconds / dt + 1e-9))


def augment(
    posteriors: PosteriorMatrix,
    n_sec: float,
    m_sec: float,
    reference: SegmentManifest,
) -> tuple[PosteriorMatrix, SegmentManifest]:
    """Prepend the last ``n_sec`` and append the first ``m_sec`` of the recording.

    Frame counts are floored; reference times shift by the realized prepend
    duration.
    """
    duration = posteriors.duration
    for name, value in (("n", n_sec), ("m", m_sec)):
        if value < 0 or value > duration + 1e-9:
            raise ValueError(f"{name}={value} s outside [0, {duration}] s recording length")
    dt = posteriors.index_duration
    n_frames = min(_whole_frames(n_sec, dt), posteriors.frames)
    m_frames = min(_whole_frames(m_sec, dt), posteriors.frames)
    data = posteriors.data
    parts = [data[data.shape[0] - n_frames:], data, data[:m_frames]]
    out = PosteriorMatrix(np.concatenate(parts), dt, posteriors.blank_index)
    shift = n_frames * dt
    segments = [
        Segment(s.utterance_id, s.start + shift, s.end + shift, s.score_log, s.text,
                s.filtered, s.degenerate,
                None if s.first_frame is None else s.first_frame + n_frames,
                None if s.last_frame is None else s.last_frame + n_frames)
        for s in reference.segments
    ]
    return out, SegmentManifest(segments, reference.recording_id)

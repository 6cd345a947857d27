import csv
import math

import numpy as np
import pytest

from ctc_seg.errors import EvaluationError
from ctc_seg.evaluation import (
    HISTOGRAM_BINS,
    augment,
    deviation_histogram,
    evaluate,
    sample_augmentation,
    write_histogram_csv,
)
from ctc_seg.posterior_io import PosteriorMatrix, Segment, SegmentManifest


def manifest(pairs, prefix="u"):
    return SegmentManifest([Segment(f"{prefix}{i}", s, e) for i, (s, e) in enumerate(pairs)])


def test_single_start_offset():
    report = evaluate(manifest([(0.0, 1.0)]), manifest([(0.2, 1.0)]), 0.5)
    assert abs(report.mean_dev - 0.1) < 1e-9
    assert abs(report.std_dev - 0.1) < 1e-9
    assert report.within_ratio == 1.0
    assert report.n_boundaries == 2


def test_identity():
    ref = manifest([(0.0, 1.0), (1.5, 2.5), (3.0, 4.2)])
    report = evaluate(ref, ref)
    assert (report.mean_dev, report.std_dev, report.within_ratio) == (0.0, 0.0, 1.0)
    assert report.table_row() == "Mean 0.00s Std 0.00 <0.5s 100.0%"


def test_shifted_starts():
    ref = manifest([(2.0 * i, 2.0 * i + 1.5) for i in range(10)])
    pred = manifest([(2.0 * i + 0.6, 2.0 * i + 1.5) for i in range(10)])
    report = evaluate(pred, ref, 0.5)
    assert abs(report.mean_dev - 0.3) < 1e-9
    assert abs(report.std_dev - 0.3) < 1e-9
    assert report.within_ratio == 0.5
    assert report.start.within_ratio == 0.0 and report.end.within_ratio == 1.0
    assert report.table_row() == "Mean 0.30s Std 0.30 <0.5s 50.0%"


def test_against_direct_computation():
    rng = np.random.default_rng(11)
    ref_pairs = [(3.0 * i, 3.0 * i + 2.0) for i in range(40)]
    pred_pairs = [(s + rng.normal(0, 0.4), e + rng.normal(0, 0.4)) for s, e in ref_pairs]
    report = evaluate(manifest(pred_pairs), manifest(ref_pairs), 0.5)
    dev = np.abs(np.array(pred_pairs) - np.array(ref_pairs)).ravel()
    assert abs(report.mean_dev - dev.mean()) < 1e-9
    assert abs(report.std_dev - math.sqrt(((dev - dev.mean()) ** 2).mean())) < 1e-9
    assert abs(report.within_ratio - (dev <= 0.5).sum() / dev.size) < 1e-9


def test_symmetry():
    a = manifest([(0.0, 1.0), (2.0, 3.1)])
    b = manifest([(0.3, 0.8), (2.4, 3.0)])
    ab, ba = evaluate(a, b), evaluate(b, a)
    assert (ab.mean_dev, ab.std_dev, ab.within_ratio) == pytest.approx(
        (ba.mean_dev, ba.std_dev, ba.within_ratio), abs=1e-12)


def test_unmatched_ids_are_listed():
    pred = SegmentManifest([Segment("a", 0, 1), Segment("x", 5, 6)])
    ref = SegmentManifest([Segment("a", 0, 1), Segment("b", 2, 3)])
    report = evaluate(pred, ref)
    assert report.unmatched_predicted == ["x"] and report.unmatched_reference == ["b"]
    assert report.n_boundaries == 2


def test_nothing_matched():
    with pytest.raises(EvaluationError):
        evaluate(manifest([(0, 1)], "p"), manifest([(0, 1)], "r"))


def test_histogram_csv_matches_recount(tmp_path):
    rng = np.random.default_rng(3)
    ref_pairs = [(3.0 * i, 3.0 * i + 2.0) for i in range(50)]
    pred_pairs = [(s + rng.normal(0, 0.3), e + rng.normal(0, 0.5)) for s, e in ref_pairs]
    pred, ref = manifest(pred_pairs), manifest(ref_pairs)
    path = tmp_path / "hist.csv"
    write_histogram_csv(pred, ref, path)
    with open(path) as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == HISTOGRAM_BINS
    starts = np.array([p[0] - r[0] for p, r in zip(pred_pairs, ref_pairs)])
    ends = np.array([p[1] - r[1] for p, r in zip(pred_pairs, ref_pairs)])
    lo = min(starts.min(), ends.min())
    hi = max(starts.max(), ends.max())
    width = (hi - lo) / HISTOGRAM_BINS
    for values, key in ((starts, "count_start"), (ends, "count_end")):
        recount = np.zeros(HISTOGRAM_BINS, dtype=int)
        for v in values:
            recount[min(int((v - lo) / width), HISTOGRAM_BINS - 1)] += 1
        assert [int(r[key]) for r in rows] == recount.tolist()
    assert float(rows[0]["bin_left"]) == lo and float(rows[-1]["bin_right"]) == hi


def test_constant_deviation_histogram():
    ref = manifest([(0.0, 1.0)])
    edges, starts, ends = deviation_histogram(ref, ref)
    assert edges[0] == -0.5 and edges[-1] == 0.5
    assert starts.sum() == 1 and ends.sum() == 1


def ramp(frames=1000, dt=0.01):
    probs = np.full((frames, 2), 0.5)
    probs[:, 0] = np.linspace(0.1, 0.9, frames)
    probs[:, 1] = 1 - probs[:, 0]
    return PosteriorMatrix(np.log(probs), dt, 0)


def test_augment_identity():
    posteriors = ramp()
    ref = manifest([(1.0, 2.0)])
    out, shifted = augment(posteriors, 0.0, 0.0, ref)
    assert np.array_equal(out.data, posteriors.data)
    assert [(s.start, s.end) for s in shifted] == [(1.0, 2.0)]


def test_augment_prepend():
    posteriors = ramp()
    ref = manifest([(1.0, 2.0), (3.5, 4.25)])
    out, shifted = augment(posteriors, 2.0, 0.0, ref)
    assert out.frames == 1200
    assert np.array_equal(out.data[:200], posteriors.data[800:1000])
    assert np.array_equal(out.data[200:], posteriors.data)
    assert [s.start for s in shifted] == pytest.approx([3.0, 5.5])
    assert [s.end for s in shifted] == pytest.approx([4.0, 6.25])


def test_augment_append_and_floor():
    posteriors = ramp()
    out, _ = augment(posteriors, 0.015, 0.3, manifest([(1.0, 2.0)]))
    assert out.frames == 1000 + 1 + 30
    assert np.array_equal(out.data[-30:], posteriors.data[:30])


def test_augment_rejects_bad_durations():
    with pytest.raises(ValueError):
        augment(ramp(), -1.0, 0.0, manifest([(1.0, 2.0)]))
    with pytest.raises(ValueError):
        augment(ramp(), 0.0, 20.0, manifest([(1.0, 2.0)]))


def test_sampling_is_reproducible():
    draws = [sample_augmentation(seed) for seed in range(20)]
    assert draws == [sample_augmentation(seed) for seed in range(20)]
    assert all(10.0 <= v <= 30.0 for pair in draws for v in pair)
    assert len(set(draws)) == 20

"""Align long transcripts to audio using CTC label posteriors."""

__version__ = "0.1.0"

from .alignment import (
    AlignConfig,
    FrameAlignment,
    Trellis,
    align,
    backtrack,
    compute_trellis,
    compute_trellis_windowed,
    extract_segments,
)
from .evaluation import EvalReport, augment, evaluate
from .normalization import EncodedText, NormalizationRules, encode, normalize
from .posterior_io import (
    PosteriorMatrix,
    Segment,
    SegmentManifest,
    TokenTable,
    TranscriptSet,
    read_posteriors,
    write_posteriors,
)
from .synthesis import SynthSpec, SynthUtterance, brute_force_best_path, generate

__all__ = [
    "AlignConfig", "FrameAlignment", "Trellis", "align", "backtrack", "compute_trellis",
    "compute_trellis_windowed", "extract_segments",
    "EvalReport", "augment", "evaluate",
    "EncodedText", "NormalizationRules", "encode", "normalize",
    "PosteriorMatrix", "Segment", "SegmentManifest", "TokenTable", "TranscriptSet",
    "read_posteriors", "write_posteriors",
    "SynthSpec", "SynthUtterance", "brute_force_best_path", "generate",
]

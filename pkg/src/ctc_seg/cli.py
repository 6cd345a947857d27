"""ctc-seg command line interface.

Exit codes: 0 success, 1 error, 2 ``align`` succeeded but at least one
segment scored below ``--min-score``.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .alignment import (
    DEFAULT_CHUNK_LEN,
    DEFAULT_MIN_SCORE,
    DEFAULT_WINDOW,
    AlignConfig,
    align,
)
from .errors import CtcSegError
from .evaluation import (
    DEFAULT_THRESHOLD,
    augment,
    evaluate,
    sample_augmentation,
    write_histogram_csv,
)
from .normalization import Dropped, NormalizationRules, normalize, read_rules
from .posterior_io import (
    SegmentManifest,
    read_posteriors,
    read_segments,
    read_token_table,
    read_transcripts,
    write_posteriors,
    write_segments,
    write_token_table,
    write_transcripts,
)
from .synthesis import generate, read_synth_spec

PROG = "ctc-seg"
LOG_ENV = "CTC_SEG_LOG"
EXIT_OK, EXIT_ERROR, EXIT_FILTERED = 0, 1, 2
POSTERIOR_SUFFIX = ".ctcp"
TRANSCRIPT_SUFFIX = ".txt"

logger = logging.getLogger("ctc_seg")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fail(kind: str, message: str) -> int:
    message = " ".join(str(message).split())
    print(f"{PROG}: {kind}: {message}", file=sys.stderr)
    return EXIT_ERROR


def _setup_logging(level: str | None) -> None:
    level = (level or os.environ.get(LOG_ENV) or "WARNING").upper()
    root = logging.getLogger("ctc_seg")
    root.handlers.clear()
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(f"{PROG}: %(levelname)s: %(message)s"))
    root.addHandler(handler)
    root.setLevel(getattr(logging, level, logging.WARNING))
    root.propagate = False


def _add_align_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--window", type=int, default=DEFAULT_WINDOW,
                   help="band width W in frames, 0 for the full trellis")
    p.add_argument("--chunk-len", type=int, default=DEFAULT_CHUNK_LEN,
                   help="frames per chunk for the confidence score")
    p.add_argument("--min-score", type=float, default=DEFAULT_MIN_SCORE,
                   help="log-domain confidence threshold")
    p.add_argument("--auto-widen", action="store_true",
                   help="double the window when the path leaves it")
    p.add_argument("--max-widen-doublings", type=int, default=4)
    p.add_argument("--blank-stay-includes-char", action="store_true",
                   help="allow staying on a character through its own label")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog=PROG, description="CTC segmentation of long transcripts.",
                     formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--log-level", default=None,
                        help=f"logging level (default: ${LOG_ENV} or WARNING)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("align", help="align transcripts to posteriors",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--posteriors", required=True,
                   help=f"posterior file, or directory of *{POSTERIOR_SUFFIX} files")
    p.add_argument("--tokens", required=True, help="token table")
    p.add_argument("--transcript", required=True,
                   help=f"transcript file, or directory of <recording>{TRANSCRIPT_SUFFIX}")
    p.add_argument("--recording-id", default=None,
                   help="recording id (single-file mode; required there)")
    p.add_argument("--rules", default=None,
                   help="normalization rules file (default: token charset, no replacements)")
    p.add_argument("--output-dir", default=".")
    p.add_argument("--format", choices=("kaldi", "json", "both"), default="both")
    p.add_argument("--jobs", type=int, default=1)
    _add_align_flags(p)

    p = sub.add_parser("eval", help="compare segments against a reference")
    p.add_argument("--predicted", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    p.add_argument("--report", default=None, help="write the report as JSON")
    p.add_argument("--histogram", default=None, help="write the 60-bin histogram CSV")
    p.add_argument("--skip-filtered", action="store_true",
                   help="ignore predicted segments flagged as filtered")

    p = sub.add_parser("synth", help="generate synthetic posteriors with planted truth")
    p.add_argument("--spec", required=True, help="synthesis spec (JSON)")
    p.add_argument("--output-dir", default=".")

    p = sub.add_parser("augment", help="prepend/append recording parts")
    p.add_argument("--posteriors", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--n", type=float, default=None, help="seconds to prepend")
    p.add_argument("--m", type=float, default=None, help="seconds to append")
    p.add_argument("--seed", type=int, default=0,
                   help="seed for sampling --n/--m uniformly from [10, 30] s when absent")
    p.add_argument("--out-posteriors", required=True)
    p.add_argument("--out-reference", required=True)

    p = sub.add_parser("normalize", help="normalize text lines")
    p.add_argument("--rules", required=True)
    p.add_argument("input", nargs="?", default=None, help="text file (default: stdin)")
    p.add_argument("--ids", action="store_true",
                   help="lines are '<utterance_id>\\t<text>'")
    return parser


def _config(args) -> AlignConfig:
    return AlignConfig(
        window_W=args.window,
        score_chunk_L=args.chunk_len,
        min_score_log=args.min_score,
        auto_widen=args.auto_widen,
        max_widen_doublings=args.max_widen_doublings,
        blank_stay_includes_char=args.blank_stay_includes_char,
    )


def _align_one(job: tuple) -> tuple[str, SegmentManifest]:
    posteriors_path, transcript_path, recording_id, tokens_path, rules_path, config = job
    posteriors = read_posteriors(posteriors_path)
    table = read_token_table(tokens_path, posteriors.blank_index)
    transcripts = read_transcripts(transcript_path, recording_id)
    rules = read_rules(rules_path) if rules_path else NormalizationRules.for_tokens(table)
    return recording_id, align(posteriors, transcripts, table, rules, config)


def _align_jobs(args, config: AlignConfig) -> list[tuple]:
    post, trans = Path(args.posteriors), Path(args.transcript)
    if post.is_dir():
        if not trans.is_dir():
            raise UsageError("--transcript must be a directory when --posteriors is one")
        jobs = []
        for p in sorted(post.glob(f"*{POSTERIOR_SUFFIX}")):
            t = trans / (p.stem + TRANSCRIPT_SUFFIX)
            if not t.exists():
                raise UsageError(f"no transcript {t} for {p}")
            jobs.append((str(p), str(t), p.stem, args.tokens, args.rules, config))
        if not jobs:
            raise UsageError(f"no *{POSTERIOR_SUFFIX} files in {post}")
        return jobs
    if args.recording_id is None:
        raise UsageError("--recording-id is required when aligning a single file")
    return [(str(post), str(trans), args.recording_id, args.tokens, args.rules, config)]


def cmd_align(args) -> int:
    config = _config(args)
    jobs = _align_jobs(args, config)
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_align_one, jobs))
    else:
        results = [_align_one(job) for job in jobs]

    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    any_filtered = False
    for recording_id, manifest in results:
        if args.format in ("kaldi", "both"):
            write_segments(manifest, "kaldi", out / f"{recording_id}.segments")
        if args.format in ("json", "both"):
            write_segments(manifest, "json", out / f"{recording_id}.json")
        for s in manifest.segments:
            status = "degenerate" if s.degenerate else "filtered" if s.filtered else "ok"
            any_filtered |= s.filtered
            print(f"{recording_id}\t{s.utterance_id}\t{s.start:.2f}\t{s.end:.2f}\t"
                  f"{s.score_log:.4f}\t{status}")
    return EXIT_FILTERED if any_filtered else EXIT_OK


def cmd_eval(args) -> int:
    predicted = read_segments(args.predicted)
    reference = read_segments(args.reference)
    if args.skip_filtered:
        predicted = SegmentManifest(
            [s for s in predicted.segments if not s.filtered], predicted.recording_id
        )
    report = evaluate(predicted, reference, args.threshold)
    for u in report.unmatched_predicted:
        logger.warning("predicted utterance %s has no reference", u)
    for u in report.unmatched_reference:
        logger.warning("reference utterance %s was not predicted", u)
    print(report.table_row())
    if args.report:
        Path(args.report).write_text(report.to_json(), encoding="utf-8")
    if args.histogram:
        write_histogram_csv(predicted, reference, args.histogram)
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = read_synth_spec(args.spec)
    posteriors, truth = generate(spec)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rec = spec.recording_id
    write_posteriors(posteriors, out / f"{rec}{POSTERIOR_SUFFIX}")
    write_token_table(spec.token_table, out / f"{rec}.tokens")
    write_transcripts(spec.transcripts(), out / f"{rec}{TRANSCRIPT_SUFFIX}")
    write_segments(truth, "kaldi", out / f"{rec}.truth.segments")
    write_segments(truth, "json", out / f"{rec}.truth.json")
    print(f"{rec}: {posteriors.frames} frames, {len(truth)} planted segments")
    return EXIT_OK


def cmd_augment(args) -> int:
    posteriors = read_posteriors(args.posteriors)
    reference = read_segments(args.reference)
    n, m = args.n, args.m
    if n is None or m is None:
        sampled_n, sampled_m = sample_augmentation(args.seed)
        n = sampled_n if n is None else n
        m = sampled_m if m is None else m
    out_post, out_ref = augment(posteriors, n, m, reference)
    write_posteriors(out_post, args.out_posteriors)
    fmt = "json" if str(args.out_reference).lower().endswith(".json") else "kaldi"
    write_segments(out_ref, fmt, args.out_reference)
    print(f"prepended {n:.2f} s, appended {m:.2f} s: "
          f"{posteriors.frames} -> {out_post.frames} frames")
    return EXIT_OK


def cmd_normalize(args) -> int:
    rules = read_rules(args.rules)
    stream = open(args.input, encoding="utf-8") if args.input else sys.stdin
    with stream:
        for lineno, line in enumerate(stream, 1):
            line = line.rstrip("\r\n")
            prefix = ""
            if args.ids:
                if "\t" not in line:
                    if line.strip():
                        logger.warning("line %d has no utterance id", lineno)
                    continue
                utt_id, line = line.split("\t", 1)
                prefix = utt_id + "\t"
            result = normalize(line, rules)
            if isinstance(result, Dropped):
                print(f"{PROG}: dropped line {lineno}: {result.reason}", file=sys.stderr)
                continue
            print(prefix + result)
    return EXIT_OK


COMMANDS = {
    "align": cmd_align,
    "eval": cmd_eval,
    "synth": cmd_synth,
    "augment": cmd_augment,
    "normalize": cmd_normalize,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        return _fail("usage-error", e)
    _setup_logging(args.log_level)
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        return _fail("usage-error", e)
    except (CtcSegError, ValueError, OSError) as e:
        return _fail("error", f"{type(e).__name__}: {e}")


if __name__ == "__main__":
    sys.exit(main())

"""Inference-time decoders for the two segmentation representations.

The main decoder adapts the segment branch's predicted lengths using the
framewise scores: over all integer length assignments summing to T it
maximizes the summed per-frame log probability of each segment's action
plus a Poisson log prior centered on the predicted absolute lengths,
solved exactly by dynamic programming over (segment, frame) states in
O(M T^2). A brute-force enumerator over integer compositions provides an
independent oracle for tests.

Also here: the averaging-fusion ablation, the single-branch readouts, and
the alignment baseline that decodes every candidate transcript and keeps
the best-scoring one (the scheme whose cost grows linearly with the
candidate pool).
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._backend import dp_best_lengths
from .core import FrameLogits, Segmentation, SegmentPrediction, Transcript, write_atomic
from .errors import ContractError, DataError, InfeasibleError
from .losses import log_softmax, softmax
from .maskgen import Localization, normalize_lengths

# Poisson means below this are floored to keep log pmf finite on
# degenerate length predictions.
MIN_POISSON_MEAN = 0.5

ORACLE_MAX_FRAMES = 16
ORACLE_MAX_SEGMENTS = 4


@dataclass(frozen=True)
class DecodeResult:
    """A segmentation with its objective value and timing bookkeeping."""

    segmentation: Segmentation
    log_score: float
    decode_time: float
    candidates_evaluated: int


def poisson_log_pmf(count: int, mean: float) -> float:
    """log of mean^count * exp(-mean) / count! via lgamma."""
    if count < 0:
        raise ContractError("Poisson count must be nonnegative")
    if mean <= 0:
        raise ContractError("Poisson mean must be positive")
    return count * math.log(mean) - mean - math.lgamma(count + 1)


def _check_dp_inputs(frame_logits: FrameLogits, transcript: Transcript,
                     poisson_means: np.ndarray) -> np.ndarray:
    means = np.asarray(poisson_means, dtype=np.float64)
    m_count = len(transcript)
    if means.shape != (m_count,):
        raise ContractError(
            f"poisson_means shape {means.shape} does not match M={m_count}"
        )
    if not np.all(np.isfinite(means)) or np.any(means <= 0):
        raise ContractError("poisson_means must be finite and positive")
    if np.any(transcript.actions >= frame_logits.num_classes):
        raise ContractError("transcript action id out of range for frame logits")
    if m_count > frame_logits.num_frames:
        raise InfeasibleError(
            f"{m_count} segments cannot cover {frame_logits.num_frames} frames"
        )
    return np.maximum(means, MIN_POISSON_MEAN)


def _dp_tables(frame_logits: FrameLogits, transcript: Transcript,
               means: np.ndarray):
    """Prefix sums of per-action frame log probs and the length prior table."""
    num_frames = frame_logits.num_frames
    logp = log_softmax(frame_logits.scores, axis=1)
    prefix = np.zeros((len(transcript), num_frames + 1))
    prefix[:, 1:] = np.cumsum(logp[:, transcript.actions].T, axis=1)
    counts = np.arange(num_frames + 1, dtype=np.float64)
    lgam = np.array([math.lgamma(i + 1) for i in range(num_frames + 1)])
    log_pois = counts[None, :] * np.log(means)[:, None] - means[:, None] \
        - lgam[None, :]
    log_pois[:, 0] = 0.0  # placeholder, never read: lengths start at 1
    return prefix, log_pois


def _objective(prefix: np.ndarray, log_pois: np.ndarray,
               lengths: np.ndarray) -> float:
    """Recompute the decode objective for a given length assignment."""
    total = 0.0
    t = 0
    for m, seg_len in enumerate(lengths):
        total += prefix[m, t + seg_len] - prefix[m, t] + log_pois[m, seg_len]
        t += int(seg_len)
    return total


def dp_fuse(frame_logits: FrameLogits, transcript: Transcript,
            poisson_means) -> DecodeResult:
    """Best integer segment lengths for a fixed transcript.

    Maximizes sum_t log softmax(y_t)[action at t] + sum_m log
    Poisson(length_m; mean_m) over positive integer lengths summing to T.
    Ties prefer the lexicographically smallest length vector. Means below
    0.5 are floored; non-integer means enter the Poisson log pmf directly
    through lgamma.
    """
    means = _check_dp_inputs(frame_logits, transcript, poisson_means)
    start = time.perf_counter()
    prefix, log_pois = _dp_tables(frame_logits, transcript, means)
    lengths, score = dp_best_lengths(prefix, log_pois)
    elapsed = time.perf_counter() - start
    seg = Segmentation(tuple(zip(transcript.as_tuple(),
                                 (int(x) for x in lengths))))
    return DecodeResult(segmentation=seg, log_score=float(score),
                        decode_time=elapsed, candidates_evaluated=1)


def _compositions(total: int, parts: int):
    """Integer compositions of ``total`` into ``parts`` positive parts,
    lexicographic order."""
    if parts == 1:
        yield (total,)
        return
    for first in range(1, total - parts + 2):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def brute_force_oracle(frame_logits: FrameLogits, transcript: Transcript,
                       poisson_means) -> DecodeResult:
    """Exhaustive maximization over all integer compositions.

    Same objective and tie rule as :func:`dp_fuse`; refuses instances
    larger than T=16 or M=4, where enumeration stops being a sensible
    oracle.
    """
    num_frames = frame_logits.num_frames
    m_count = len(transcript)
    if num_frames > ORACLE_MAX_FRAMES or m_count > ORACLE_MAX_SEGMENTS:
        raise ContractError(
            f"oracle refuses T={num_frames}, M={m_count} "
            f"(bounds: T<={ORACLE_MAX_FRAMES}, M<={ORACLE_MAX_SEGMENTS})"
        )
    means = _check_dp_inputs(frame_logits, transcript, poisson_means)
    start = time.perf_counter()
    prefix, log_pois = _dp_tables(frame_logits, transcript, means)
    best_score = -math.inf
    best_lengths = None
    count = 0
    for lengths in _compositions(num_frames, m_count):
        count += 1
        score = _objective(prefix, log_pois, np.asarray(lengths))
        if score > best_score:
            best_score = score
            best_lengths = lengths
    elapsed = time.perf_counter() - start
    seg = Segmentation(tuple(zip(transcript.as_tuple(), best_lengths)))
    return DecodeResult(segmentation=seg, log_score=float(best_score),
                        decode_time=elapsed, candidates_evaluated=count)


def largest_remainder_lengths(values: np.ndarray, total: int) -> np.ndarray:
    """Round positive reals summing to ``total`` onto positive integers.

    Largest-remainder rounding with ties to the lower index; afterwards
    any zero is bumped to one frame, taken from the largest segments, so
    the result is always a valid length vector.
    """
    values = np.asarray(values, dtype=np.float64)
    m_count = values.size
    if m_count > total:
        raise InfeasibleError(f"{m_count} segments cannot cover {total} frames")
    floors = np.floor(values).astype(np.int64)
    remainders = values - floors
    deficit = int(total - floors.sum())
    order = np.argsort(-remainders, kind="stable")
    lengths = floors.copy()
    if deficit > 0:
        lengths[order[:deficit]] += 1
    for i in range(m_count):
        while lengths[i] < 1:
            donor = int(np.argmax(lengths))
            if lengths[donor] <= 1:
                raise InfeasibleError("cannot repair zero-length segments")
            lengths[donor] -= 1
            lengths[i] += 1
    return lengths


def mucon_s_only(seg_pred: SegmentPrediction, num_frames: int,
                 num_classes: int) -> DecodeResult:
    """Segment branch alone: argmax actions, rounded normalized lengths."""
    start = time.perf_counter()
    actions = seg_pred.action_logits[:seg_pred.num_segments, :num_classes] \
        .argmax(axis=1)
    loc = normalize_lengths(seg_pred.rel_log_lengths, num_frames)
    lengths = largest_remainder_lengths(loc.abs_lengths, num_frames)
    logp = log_softmax(
        seg_pred.action_logits[:seg_pred.num_segments, :num_classes], axis=1
    )
    score = float(logp[np.arange(actions.size), actions].sum())
    elapsed = time.perf_counter() - start
    seg = Segmentation(tuple(zip((int(a) for a in actions),
                                 (int(x) for x in lengths))))
    return DecodeResult(segmentation=seg, log_score=score,
                        decode_time=elapsed, candidates_evaluated=1)


def mucon_y(frame_logits: FrameLogits) -> DecodeResult:
    """Framewise branch alone: per-frame argmax, run-length encoded."""
    start = time.perf_counter()
    logp = log_softmax(frame_logits.scores, axis=1)
    labels = logp.argmax(axis=1)
    score = float(logp[np.arange(labels.size), labels].sum())
    boundaries = np.flatnonzero(np.diff(labels)) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [labels.size]))
    seg = Segmentation(tuple((int(labels[s]), int(e - s))
                             for s, e in zip(starts, ends)))
    elapsed = time.perf_counter() - start
    return DecodeResult(segmentation=seg, log_score=score,
                        decode_time=elapsed, candidates_evaluated=1)


def average_fuse(frame_logits: FrameLogits, seg_pred: SegmentPrediction,
                 loc: Localization) -> DecodeResult:
    """Average the two branches' per-frame distributions, then argmax.

    Each segment's action distribution (softmax over the N action
    classes, end symbol dropped) is expanded over its rounded span and
    averaged elementwise with the framewise softmax; the per-frame argmax
    is run-length encoded. The reported score is the summed log of the
    chosen averaged probabilities.
    """
    num_frames = frame_logits.num_frames
    num_classes = frame_logits.num_classes
    if loc.num_segments != seg_pred.num_segments:
        raise ContractError("localization does not match the segment count")
    start = time.perf_counter()
    spans = largest_remainder_lengths(loc.abs_lengths, num_frames)
    seg_dist = softmax(
        seg_pred.action_logits[:seg_pred.num_segments, :num_classes], axis=1
    )
    expanded = np.repeat(seg_dist, spans, axis=0)
    avg = 0.5 * (softmax(frame_logits.scores, axis=1) + expanded)
    labels = avg.argmax(axis=1)
    score = float(np.log(avg[np.arange(num_frames), labels]).sum())
    boundaries = np.flatnonzero(np.diff(labels)) + 1
    seg_starts = np.concatenate(([0], boundaries))
    seg_ends = np.concatenate((boundaries, [num_frames]))
    seg = Segmentation(tuple((int(labels[s]), int(e - s))
                             for s, e in zip(seg_starts, seg_ends)))
    elapsed = time.perf_counter() - start
    return DecodeResult(segmentation=seg, log_score=score,
                        decode_time=elapsed, candidates_evaluated=1)


def align_all_transcripts(frame_logits: FrameLogits, candidates,
                          mean_policy: str = "uniform",
                          parallel: bool = False):
    """Decode every candidate transcript and keep the best-scoring one.

    ``mean_policy="uniform"`` gives every candidate Poisson means T/M, which
    keeps the comparison against the single-transcript decoder about
    candidate count only. Scores are compared raw (not length
    normalized); ties keep the earliest candidate. Returns
    (best transcript, DecodeResult with the summed decode time and the
    number of candidates evaluated).
    """
    candidates = list(candidates)
    if not candidates:
        raise ContractError("candidate set must be nonempty")
    if mean_policy != "uniform":
        raise ContractError(f"unknown mean policy {mean_policy!r}")
    num_frames = frame_logits.num_frames
    feasible = [c for c in candidates if len(c) <= num_frames]
    if not feasible:
        raise InfeasibleError("every candidate transcript exceeds the frame count")

    def _decode(cand: Transcript) -> DecodeResult:
        means = np.full(len(cand), num_frames / len(cand))
        return dp_fuse(frame_logits, cand, means)

    start = time.perf_counter()
    if parallel:
        with ThreadPoolExecutor() as pool:
            results = list(pool.map(_decode, feasible))
    else:
        results = [_decode(c) for c in feasible]
    elapsed = time.perf_counter() - start
    best_i = 0
    for i in range(1, len(results)):
        if results[i].log_score > results[best_i].log_score:
            best_i = i
    best = results[best_i]
    return feasible[best_i], DecodeResult(
        segmentation=best.segmentation,
        log_score=best.log_score,
        decode_time=elapsed,
        candidates_evaluated=len(feasible),
    )


# ---------------------------------------------------------------------------
# Prediction records (JSON lines), consumed by metrics and the CLI reporter
# ---------------------------------------------------------------------------


def write_predictions(path: str, records: list):
    """records: list of dicts with id, mode, actions, lengths, log_score,
    decode_time, candidates_evaluated."""
    lines = [json.dumps(rec) for rec in records]
    write_atomic(path, ("\n".join(lines) + "\n").encode())


def read_predictions(path: str) -> list:
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = [line for line in f.read().splitlines() if line.strip()]
    except OSError as exc:
        raise DataError(f"cannot read predictions {path}: {exc}") from exc
    if not lines:
        raise DataError(f"predictions file {path} is empty")
    try:
        records = [json.loads(line) for line in lines]
    except json.JSONDecodeError as exc:
        raise DataError(f"predictions file {path} is not valid JSON lines: {exc}") \
            from exc
    for i, rec in enumerate(records):
        if "id" not in rec or "actions" not in rec or "lengths" not in rec:
            raise DataError(f"prediction record {i} is missing required fields")
    return records


def result_to_record(video_id: str, mode: str, result: DecodeResult) -> dict:
    return {
        "id": video_id,
        "mode": mode,
        "actions": [a for a, _ in result.segmentation.segments],
        "lengths": [n for _, n in result.segmentation.segments],
        "log_score": result.log_score,
        "decode_time": result.decode_time,
        "candidates_evaluated": result.candidates_evaluated,
    }

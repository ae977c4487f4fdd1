"""Shared domain types, validation, and dataset serialization.

A video is described by up to three interchangeable views:

- per-frame features (the model input),
- a transcript: the ordered actions occurring in the video, no timing,
- a segmentation: ordered (action, length) runs covering all frames,
  equivalent to a per-frame labeling via run-length coding.

Action ids are dense integers in [0, N); the reserved end symbol used by
the segment decoder is id N and never appears in transcripts or labels.

All types are immutable after construction (arrays are copied and marked
read-only) and safe to share across threads.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DataError

END_SYMBOL_OFFSET = 0  # end symbol id is num_classes + this offset


def _frozen_array(values, dtype=np.float64, ndim=None) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    if ndim is not None and arr.ndim != ndim:
        raise ContractError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class FeatureSequence:
    """T x D matrix of per-frame feature vectors."""

    frames: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.frames, ndim=2)
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ContractError(f"feature matrix must be at least 1x1, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ContractError("feature matrix contains non-finite entries")
        object.__setattr__(self, "frames", arr)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True)
class Transcript:
    """Ordered action ids occurring in a video (the weak label)."""

    actions: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.actions, dtype=np.int64, ndim=1)
        if arr.size < 1:
            raise ContractError("transcript must contain at least one action")
        if np.any(arr < 0):
            raise ContractError("transcript contains negative action ids")
        object.__setattr__(self, "actions", arr)

    def __len__(self) -> int:
        return int(self.actions.size)

    def as_tuple(self) -> tuple[int, ...]:
        return tuple(int(a) for a in self.actions)


@dataclass(frozen=True)
class FrameLabeling:
    """Per-frame action ids; length equals the video's frame count."""

    labels: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.labels, dtype=np.int64, ndim=1)
        if arr.size < 1:
            raise ContractError("frame labeling must cover at least one frame")
        if np.any(arr < 0):
            raise ContractError("frame labeling contains negative action ids")
        object.__setattr__(self, "labels", arr)

    def __len__(self) -> int:
        return int(self.labels.size)


@dataclass(frozen=True)
class Segmentation:
    """Ordered (action, length) runs; lengths are positive and sum to T."""

    segments: tuple

    def __post_init__(self):
        segs = tuple((int(a), int(n)) for a, n in self.segments)
        if not segs:
            raise ContractError("segmentation must contain at least one segment")
        for a, n in segs:
            if a < 0:
                raise ContractError("segmentation contains a negative action id")
            if n < 1:
                raise ContractError("segment lengths must be positive integers")
        object.__setattr__(self, "segments", segs)

    @property
    def num_frames(self) -> int:
        return sum(n for _, n in self.segments)

    @property
    def transcript(self) -> Transcript:
        return Transcript(np.array([a for a, _ in self.segments], dtype=np.int64))

    def __len__(self) -> int:
        return len(self.segments)


@dataclass(frozen=True)
class FrameLogits:
    """T x N matrix of unnormalized per-frame class scores."""

    scores: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.scores, ndim=2)
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ContractError(f"frame logits must be at least 1x1, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ContractError("frame logits contain non-finite entries")
        object.__setattr__(self, "scores", arr)

    @property
    def num_frames(self) -> int:
        return self.scores.shape[0]

    @property
    def num_classes(self) -> int:
        return self.scores.shape[1]


@dataclass(frozen=True)
class SegmentPrediction:
    """Segment-branch outputs: per-position action logits and log lengths.

    ``action_logits`` has one row per emitted position over N+1 classes
    (N actions plus the end symbol at index N). ``rel_log_lengths`` holds
    one relative log length per *segment* position; in teacher-forced
    training the logits carry one extra row for the end position, so the
    two leading dimensions may differ by one.
    """

    action_logits: np.ndarray
    rel_log_lengths: np.ndarray

    def __post_init__(self):
        logits = _frozen_array(self.action_logits, ndim=2)
        lengths = _frozen_array(self.rel_log_lengths, ndim=1)
        if not np.all(np.isfinite(logits)) or not np.all(np.isfinite(lengths)):
            raise ContractError("segment prediction contains non-finite entries")
        if logits.shape[0] not in (lengths.size, lengths.size + 1):
            raise ContractError(
                f"action logit rows ({logits.shape[0]}) must equal the number of "
                f"segments ({lengths.size}) or exceed it by one"
            )
        object.__setattr__(self, "action_logits", logits)
        object.__setattr__(self, "rel_log_lengths", lengths)

    @property
    def num_segments(self) -> int:
        return int(self.rel_log_lengths.size)


@dataclass(frozen=True)
class MaskSet:
    """M x T soft segment masks with entries in [0, 1]."""

    masks: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.masks, ndim=2)
        if np.any(arr < 0.0) or np.any(arr > 1.0):
            raise ContractError("mask entries must lie in [0, 1]")
        object.__setattr__(self, "masks", arr)

    @property
    def num_segments(self) -> int:
        return self.masks.shape[0]

    @property
    def num_frames(self) -> int:
        return self.masks.shape[1]


# ---------------------------------------------------------------------------
# Label <-> segment conversions
# ---------------------------------------------------------------------------


def labels_to_segments(labeling: FrameLabeling) -> Segmentation:
    """Run-length encode a per-frame labeling into ordered segments."""
    labels = labeling.labels
    boundaries = np.flatnonzero(np.diff(labels)) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [labels.size]))
    return Segmentation(
        tuple((int(labels[s]), int(e - s)) for s, e in zip(starts, ends))
    )


def segments_to_labels(segmentation: Segmentation) -> FrameLabeling:
    """Expand ordered segments into a per-frame labeling."""
    return FrameLabeling(
        np.repeat(
            np.array([a for a, _ in segmentation.segments], dtype=np.int64),
            np.array([n for _, n in segmentation.segments], dtype=np.int64),
        )
    )


# ---------------------------------------------------------------------------
# Dataset container and validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VideoRecord:
    """One weakly labeled video: features, transcript, optional frame labels."""

    video_id: str
    features: FeatureSequence
    transcript: Transcript
    labels: FrameLabeling | None = None


@dataclass(frozen=True)
class Dataset:
    """A collection of videos sharing a class inventory and feature space."""

    items: tuple
    num_classes: int
    feature_dim: int

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))
        if self.num_classes < 1:
            raise ContractError("dataset must declare at least one action class")
        if self.feature_dim < 1:
            raise ContractError("dataset must declare a positive feature dimension")

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)


@dataclass
class ValidationReport:
    """Per-item constraint violations; empty means the dataset is valid."""

    violations: list = field(default_factory=list)

    def add(self, index: int, message: str):
        self.violations.append((index, message))

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self) -> str:
        if self.ok:
            return "dataset valid"
        return "\n".join(f"item {i}: {msg}" for i, msg in self.violations)


def validate_dataset(dataset: Dataset) -> ValidationReport:
    """Check every item against the shared type invariants.

    Reports (does not raise) label-length mismatches, out-of-range action
    ids, feature-dimension mismatches, and label/transcript disagreements.
    """
    report = ValidationReport()
    n = dataset.num_classes
    for i, item in enumerate(dataset.items):
        if item.features.feature_dim != dataset.feature_dim:
            report.add(i, "feature dimension != dataset feature_dim")
        if np.any(item.transcript.actions >= n):
            report.add(i, "action id out of range")
        if item.labels is not None:
            if len(item.labels) != item.features.num_frames:
                report.add(i, "label length != T")
            if np.any(item.labels.labels >= n):
                report.add(i, "frame label out of range")
            rle = labels_to_segments(item.labels)
            if rle.transcript.as_tuple() != item.transcript.as_tuple():
                report.add(i, "frame labels do not run-length encode to the transcript")
    return report


# ---------------------------------------------------------------------------
# Serialization: JSON-lines manifest + raw float32 feature blobs
# ---------------------------------------------------------------------------
#
# Layouts are documented in docs/formats.md and pinned by tests/test_formats.py.

MANIFEST_NAME = "manifest.jsonl"
_BLOB_HEADER = struct.Struct("<II")  # (T, D), little endian


def write_atomic(path: str, data: bytes):
    """Write a file via temp + rename so readers never see partial content."""
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def save_feature_blob(path: str, features: FeatureSequence):
    """Feature blob: (T, D) uint32 header, then T*D little-endian float32."""
    data = features.frames.astype("<f4").tobytes(order="C")
    header = _BLOB_HEADER.pack(features.num_frames, features.feature_dim)
    write_atomic(path, header + data)


def load_feature_blob(path: str) -> FeatureSequence:
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as exc:
        raise DataError(f"cannot read feature blob {path}: {exc}") from exc
    if len(raw) < _BLOB_HEADER.size:
        raise DataError(f"feature blob {path} truncated before header")
    t, d = _BLOB_HEADER.unpack_from(raw)
    expected = _BLOB_HEADER.size + 4 * t * d
    if len(raw) != expected:
        raise DataError(
            f"feature blob {path}: expected {expected} bytes for T={t} D={d}, "
            f"got {len(raw)}"
        )
    frames = np.frombuffer(raw, dtype="<f4", offset=_BLOB_HEADER.size)
    return FeatureSequence(frames.astype(np.float64).reshape(t, d))


def save_dataset(dataset: Dataset, out_dir: str):
    """Write ``manifest.jsonl`` plus one feature blob per video.

    The first manifest line is a meta record carrying the class inventory;
    each following line describes one video and references its blob by a
    path relative to the manifest.
    """
    os.makedirs(out_dir, exist_ok=True)
    blob_dir = os.path.join(out_dir, "blobs")
    os.makedirs(blob_dir, exist_ok=True)
    lines = [
        json.dumps(
            {
                "type": "meta",
                "format_version": 1,
                "num_classes": dataset.num_classes,
                "feature_dim": dataset.feature_dim,
            }
        )
    ]
    for item in dataset.items:
        rel = os.path.join("blobs", f"{item.video_id}.bin")
        save_feature_blob(os.path.join(out_dir, rel), item.features)
        record = {
            "type": "video",
            "id": item.video_id,
            "features": rel,
            "transcript": [int(a) for a in item.transcript.actions],
            "labels": None
            if item.labels is None
            else [int(x) for x in item.labels.labels],
        }
        lines.append(json.dumps(record))
    write_atomic(
        os.path.join(out_dir, MANIFEST_NAME), ("\n".join(lines) + "\n").encode()
    )


def load_dataset(manifest_path: str) -> Dataset:
    """Load a dataset saved by :func:`save_dataset`."""
    if os.path.isdir(manifest_path):
        manifest_path = os.path.join(manifest_path, MANIFEST_NAME)
    base = os.path.dirname(os.path.abspath(manifest_path))
    try:
        with open(manifest_path, "r", encoding="utf-8") as f:
            raw_lines = [line for line in f.read().splitlines() if line.strip()]
    except OSError as exc:
        raise DataError(f"cannot read manifest {manifest_path}: {exc}") from exc
    if not raw_lines:
        raise DataError(f"manifest {manifest_path} is empty")
    try:
        records = [json.loads(line) for line in raw_lines]
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest {manifest_path} is not valid JSON lines: {exc}") from exc
    meta = records[0]
    if meta.get("type") != "meta":
        raise DataError("manifest must start with a meta record")
    items = []
    for i, rec in enumerate(records[1:]):
        if rec.get("type") != "video":
            raise DataError(f"manifest item {i}: unknown record type {rec.get('type')!r}")
        try:
            features = load_feature_blob(os.path.join(base, rec["features"]))
            labels = rec.get("labels")
            items.append(
                VideoRecord(
                    video_id=str(rec["id"]),
                    features=features,
                    transcript=Transcript(np.asarray(rec["transcript"], dtype=np.int64)),
                    labels=None
                    if labels is None
                    else FrameLabeling(np.asarray(labels, dtype=np.int64)),
                )
            )
        except (KeyError, ContractError) as exc:
            raise DataError(f"manifest item {i}: {exc}") from exc
    return Dataset(
        items=tuple(items),
        num_classes=int(meta["num_classes"]),
        feature_dim=int(meta["feature_dim"]),
    )

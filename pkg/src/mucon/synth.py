"""Synthetic weakly supervised segmentation data with known ground truth.

Each dataset draws one Gaussian prototype vector per action class; a video
is a random transcript (no immediate repeats unless a grammar allows
them), random integer segment lengths, and per-frame features equal to
the active class prototype plus isotropic Gaussian noise. Frame labels
are kept on the records as hidden ground truth for evaluation; training
consumes only features and transcripts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Dataset, FeatureSequence, FrameLabeling, Transcript, VideoRecord
from .errors import ContractError, SplitError


@dataclass(frozen=True)
class SynthConfig:
    """Generator settings; defaults are the desk-scale acceptance setup."""

    num_classes: int = 6
    feature_dim: int = 16
    num_videos: int = 60
    min_segments: int = 3
    max_segments: int = 6
    min_length: int = 10
    max_length: int = 30
    noise_sigma: float = 0.5
    grammar: dict | None = None
    seed: int = 0

    def validate(self):
        if self.num_classes < 1:
            raise ContractError("num_classes must be >= 1")
        if self.feature_dim < 1:
            raise ContractError("feature_dim must be >= 1")
        if self.num_videos < 1:
            raise ContractError("num_videos must be >= 1")
        if not (1 <= self.min_segments <= self.max_segments):
            raise ContractError("segment count range must satisfy 1 <= min <= max")
        if not (1 <= self.min_length <= self.max_length):
            raise ContractError("segment length range must satisfy 1 <= min <= max")
        if self.noise_sigma < 0:
            raise ContractError("noise_sigma must be nonnegative")
        if self.num_classes == 1 and self.max_segments > 1 and self.grammar is None:
            raise ContractError(
                "cannot sample repeat-free transcripts longer than 1 "
                "from a single class"
            )
        if self.grammar is not None:
            for src, nxt in self.grammar.items():
                if not nxt:
                    raise ContractError(f"grammar dead-ends at action {src}")
                if any(a < 0 or a >= self.num_classes for a in nxt):
                    raise ContractError("grammar references an unknown action id")


def _sample_transcript(rng: np.random.Generator, config: SynthConfig) -> np.ndarray:
    length = int(rng.integers(config.min_segments, config.max_segments + 1))
    actions = np.empty(length, dtype=np.int64)
    actions[0] = rng.integers(config.num_classes)
    for i in range(1, length):
        if config.grammar is not None:
            options = np.asarray(config.grammar[int(actions[i - 1])], dtype=np.int64)
        else:
            options = np.delete(np.arange(config.num_classes), actions[i - 1])
        actions[i] = options[rng.integers(options.size)]
    return actions


def generate(config: SynthConfig) -> Dataset:
    """Generate a dataset; deterministic given the config seed."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    prototypes = rng.normal(0.0, 1.0, size=(config.num_classes, config.feature_dim))
    items = []
    for v in range(config.num_videos):
        actions = _sample_transcript(rng, config)
        lengths = rng.integers(config.min_length, config.max_length + 1,
                               size=actions.size)
        labels = np.repeat(actions, lengths)
        features = prototypes[labels]
        if config.noise_sigma > 0:
            features = features + config.noise_sigma * rng.normal(
                size=features.shape
            )
        items.append(
            VideoRecord(
                video_id=f"vid_{v:04d}",
                features=FeatureSequence(features),
                transcript=Transcript(actions),
                labels=FrameLabeling(labels),
            )
        )
    return Dataset(items=tuple(items), num_classes=config.num_classes,
                   feature_dim=config.feature_dim)


def holdout_transcripts(dataset: Dataset, fraction: float,
                        seed: int = 0) -> tuple[Dataset, Dataset]:
    """Split so that no test video's transcript occurs in the train split.

    Whole transcript-equivalence groups are moved into the test side until
    it holds at least round(fraction * num_videos) videos.
    """
    if not (0.0 <= fraction < 1.0):
        raise ContractError("holdout fraction must be in [0, 1)")
    groups: dict[tuple, list] = {}
    for idx, item in enumerate(dataset.items):
        groups.setdefault(item.transcript.as_tuple(), []).append(idx)
    target = int(round(fraction * len(dataset.items)))
    if target == 0:
        return dataset, Dataset((), dataset.num_classes, dataset.feature_dim)
    rng = np.random.default_rng(seed)
    keys = list(groups.keys())
    order = rng.permutation(len(keys))
    test_idx: set[int] = set()
    for gi in order:
        if len(test_idx) >= target:
            break
        test_idx.update(groups[keys[gi]])
    if not test_idx or len(test_idx) == len(dataset.items):
        raise SplitError(
            "cannot satisfy the holdout: the dataset does not contain enough "
            "distinct transcripts"
        )
    train = tuple(it for i, it in enumerate(dataset.items) if i not in test_idx)
    test = tuple(it for i, it in enumerate(dataset.items) if i in test_idx)
    return (
        Dataset(train, dataset.num_classes, dataset.feature_dim),
        Dataset(test, dataset.num_classes, dataset.feature_dim),
    )

"""Evaluation metrics: frame accuracy, overlap quality, transcript similarity.

- MoF: fraction of frames whose predicted label equals the ground truth.
  The dataset-level number pools frames across videos (total correct over
  total frames); a per-video mean is reported alongside for transparency.
- IoD: for each ground-truth segment, among predicted segments of the
  same action that overlap it, take the one with the largest
  intersection and score intersection / detection length (0 when no
  prediction matches); the metric is the mean over ground-truth segments.
- matching score: normalized Levenshtein similarity between transcripts,
  1 - distance / max(len); unit-cost edits over action-id tokens. The
  exact convention is artifact-defined here, as is the IoD matching
  policy (no class is excluded unless a background set is given).
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .core import FrameLabeling, Segmentation, Transcript, write_atomic
from .errors import ContractError


def mof(pred: FrameLabeling, gt: FrameLabeling) -> float:
    """Fraction of frames with equal labels."""
    if len(pred) != len(gt):
        raise ContractError(
            f"labelings disagree on length: {len(pred)} vs {len(gt)}"
        )
    return float(np.mean(pred.labels == gt.labels))


def _segment_spans(seg: Segmentation):
    spans = []
    start = 0
    for action, length in seg.segments:
        spans.append((action, start, start + length))
        start += length
    return spans


def iod(pred: Segmentation, gt: Segmentation,
        exclude: set | None = None) -> float:
    """Mean intersection-over-detection across ground-truth segments.

    ``exclude`` optionally drops ground-truth segments of the given
    action ids (background-style evaluation); by default nothing is
    excluded.
    """
    if pred.num_frames != gt.num_frames:
        raise ContractError(
            f"segmentations disagree on span: {pred.num_frames} vs "
            f"{gt.num_frames}"
        )
    pred_spans = _segment_spans(pred)
    scores = []
    for action, gs, ge in _segment_spans(gt):
        if exclude and action in exclude:
            continue
        best = 0.0
        best_inter = 0
        for p_action, ps, pe in pred_spans:
            if p_action != action:
                continue
            inter = min(ge, pe) - max(gs, ps)
            if inter > 0 and inter > best_inter:
                best_inter = inter
                best = inter / (pe - ps)
        scores.append(best)
    if not scores:
        raise ContractError("no ground-truth segments left to score")
    return float(np.mean(scores))


def matching_score(pred: Transcript, gt: Transcript) -> float:
    """1 - Levenshtein(pred, gt) / max(|pred|, |gt|), unit edit costs."""
    a = pred.actions
    b = gt.actions
    prev = np.arange(b.size + 1)
    for i in range(1, a.size + 1):
        cur = np.empty_like(prev)
        cur[0] = i
        for j in range(1, b.size + 1):
            sub = prev[j - 1] + (a[i - 1] != b[j - 1])
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, sub)
        prev = cur
    distance = int(prev[-1])
    return 1.0 - distance / max(a.size, b.size)


@dataclass
class EvalReport:
    """Aggregate metrics plus the per-video breakdown used to compute them."""

    mof: float
    mof_per_video: float
    iod: float
    matching_score: float
    per_video: list = field(default_factory=list)

    CSV_COLUMNS = ("video_id", "mof", "iod", "matching_score",
                   "frames", "gt_segments", "pred_segments")

    def to_json(self) -> str:
        return json.dumps(
            {
                "mof": self.mof,
                "mof_per_video": self.mof_per_video,
                "iod": self.iod,
                "matching_score": self.matching_score,
                "num_videos": len(self.per_video),
            },
            indent=2,
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(self.CSV_COLUMNS)
        for row in self.per_video:
            writer.writerow([row[c] for c in self.CSV_COLUMNS])
        return buf.getvalue()

    def save(self, json_path: str, csv_path: str):
        write_atomic(json_path, self.to_json().encode())
        write_atomic(csv_path, self.to_csv().encode())


def evaluate(items: list) -> EvalReport:
    """Score (video_id, predicted Segmentation, ground-truth Segmentation) triples."""
    if not items:
        raise ContractError("nothing to evaluate")
    correct = 0
    total = 0
    per_video = []
    from .core import segments_to_labels

    for video_id, pred_seg, gt_seg in items:
        pred_labels = segments_to_labels(pred_seg)
        gt_labels = segments_to_labels(gt_seg)
        v_mof = mof(pred_labels, gt_labels)
        v_iod = iod(pred_seg, gt_seg)
        v_match = matching_score(pred_seg.transcript, gt_seg.transcript)
        correct += int(round(v_mof * len(gt_labels)))
        total += len(gt_labels)
        per_video.append(
            {
                "video_id": video_id,
                "mof": v_mof,
                "iod": v_iod,
                "matching_score": v_match,
                "frames": len(gt_labels),
                "gt_segments": len(gt_seg),
                "pred_segments": len(pred_seg),
            }
        )
    return EvalReport(
        mof=correct / total,
        mof_per_video=float(np.mean([r["mof"] for r in per_video])),
        iod=float(np.mean([r["iod"] for r in per_video])),
        matching_score=float(np.mean([r["matching_score"] for r in per_video])),
        per_video=per_video,
    )

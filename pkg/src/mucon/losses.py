"""Training losses and their analytic gradients.

Three losses supervise the two segmentation representations produced by
the model:

- the consistency loss: inside each predicted segment window, the
  masked average of the framewise scores must point at that segment's
  ground-truth action (cross entropy after softmax over the average);
- the transcript loss: per-position cross entropy on the segment
  branch's action logits, including the terminating end symbol;
- the length regularizer: a symmetric hinge keeping relative log lengths
  inside [-width, width].

Every loss returns a :class:`LossResult` carrying its value and gradient
blocks w.r.t. the model outputs it touches; blocks it does not touch are
``None`` (identically zero). The consistency loss differentiates through
both occurrences of the predicted length: the soft mask (via the mask
Jacobian) and the averaging denominator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import FrameLogits, MaskSet, Transcript
from .errors import ContractError
from .maskgen import (
    DEFAULT_TEMPLATE_SIZE,
    Localization,
    affine_params,
    localization_jacobian,
    mask_jacobian,
)

DEFAULT_ALPHA = 0.1
DEFAULT_REG_WIDTH = 2.0


def log_softmax(scores: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable log softmax (max-shifted)."""
    shifted = scores - scores.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def softmax(scores: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = np.exp(scores - scores.max(axis=axis, keepdims=True))
    return shifted / shifted.sum(axis=axis, keepdims=True)


@dataclass(frozen=True)
class LossResult:
    """A loss value plus gradients w.r.t. the model outputs it touches.

    Gradient blocks are ``None`` when the loss does not depend on that
    output (an identically zero gradient).
    """

    value: float
    grad_frame_logits: np.ndarray | None = None
    grad_rel_log_lengths: np.ndarray | None = None
    grad_action_logits: np.ndarray | None = None


def _add_opt(a, b, scale=1.0):
    if b is None:
        return a
    scaled = scale * b
    return scaled if a is None else a + scaled


def segment_average(frame_logits: FrameLogits, mask: np.ndarray,
                    abs_length: float) -> np.ndarray:
    """Masked average of the framewise scores for one segment.

    Sums mask-weighted frame scores and divides by the *predicted*
    absolute segment length, not by the mask sum; the denominator is part
    of the differentiable length pathway.
    """
    if abs_length <= 0:
        raise ContractError("abs_length must be positive")
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != (frame_logits.num_frames,):
        raise ContractError("mask length must equal the number of frames")
    return mask @ frame_logits.scores / abs_length


def mucon_loss(frame_logits: FrameLogits, masks: MaskSet, loc: Localization,
               transcript: Transcript, rel_log_lengths: np.ndarray,
               template_size: int = DEFAULT_TEMPLATE_SIZE) -> LossResult:
    """Mutual consistency between framewise scores and predicted segments.

    For each segment m, softmax the masked average of the frame scores and
    take the cross entropy against the transcript action; the total is the
    sum over segments. Gradients are populated w.r.t. the frame scores and
    w.r.t. the relative log lengths; the latter combines the mask Jacobian
    path and the averaging-denominator path, both of which are needed to
    match finite differences.

    ``masks`` and ``loc`` must have been generated from ``rel_log_lengths``
    with the same ``template_size``.
    """
    y = frame_logits.scores
    w = masks.masks
    num_frames, num_classes = y.shape
    m_count = len(transcript)
    if w.shape != (m_count, num_frames):
        raise ContractError(
            f"masks shape {w.shape} does not match (M={m_count}, T={num_frames})"
        )
    rel = np.asarray(rel_log_lengths, dtype=np.float64)
    if rel.size != m_count or loc.num_segments != m_count:
        raise ContractError("rel_log_lengths and localization must match M")
    if np.any(transcript.actions >= num_classes):
        raise ContractError("transcript action id out of range for frame logits")

    lengths = loc.abs_lengths
    summed = w @ y                      # (M, N)
    avg = summed / lengths[:, None]     # g(Y, w_m)
    logp = log_softmax(avg, axis=1)
    rows = np.arange(m_count)
    value = float(-logp[rows, transcript.actions].sum())

    delta = np.exp(logp)                # softmax(g)
    delta[rows, transcript.actions] -= 1.0

    grad_y = (w / lengths[:, None]).T @ delta

    # length pathway 1: through the masks
    params = affine_params(loc, num_frames)
    jac = mask_jacobian(params, loc, rel, num_frames, template_size)
    dloss_dw = (delta @ y.T) / lengths[:, None]          # (M, T)
    grad_rel = np.einsum("mt,mtk->k", dloss_dw, jac)
    # length pathway 2: through the averaging denominator
    dloss_dlen = -(delta * avg).sum(axis=1) / lengths    # (M,)
    dlen, _ = localization_jacobian(loc, num_frames)
    grad_rel = grad_rel + dloss_dlen @ dlen

    return LossResult(value=value, grad_frame_logits=grad_y,
                      grad_rel_log_lengths=grad_rel)


def transcript_loss(action_logits: np.ndarray, transcript: Transcript) -> LossResult:
    """Per-position cross entropy over M actions plus the end symbol.

    ``action_logits`` must have exactly M+1 rows of N+1 scores; row M is
    scored against the end symbol (class index N).
    """
    logits = np.asarray(action_logits, dtype=np.float64)
    m_count = len(transcript)
    if logits.ndim != 2 or logits.shape[0] != m_count + 1:
        raise ContractError(
            f"expected {m_count + 1} logit rows for {m_count} actions plus the "
            f"end symbol, got {logits.shape}"
        )
    num_classes = logits.shape[1] - 1
    if np.any(transcript.actions >= num_classes):
        raise ContractError("transcript action id out of range for action logits")
    targets = np.concatenate((transcript.actions, [num_classes]))
    logp = log_softmax(logits, axis=1)
    rows = np.arange(m_count + 1)
    value = float(-logp[rows, targets].sum())
    grad = np.exp(logp)
    grad[rows, targets] -= 1.0
    return LossResult(value=value, grad_action_logits=grad)


def length_regularizer(rel_log_lengths: np.ndarray,
                       width: float = DEFAULT_REG_WIDTH) -> LossResult:
    """Symmetric hinge sum relu(l - width) + relu(-l - width) per segment.

    The hinge subgradient at exactly zero is taken as 0, so the
    regularizer is inactive on the boundary.
    """
    if width <= 0:
        raise ContractError("regularizer width must be positive")
    rel = np.asarray(rel_log_lengths, dtype=np.float64)
    upper = rel - width
    lower = -rel - width
    value = float(np.maximum(0.0, upper).sum() + np.maximum(0.0, lower).sum())
    grad = (upper > 0).astype(np.float64) - (lower > 0).astype(np.float64)
    return LossResult(value=value, grad_rel_log_lengths=grad)


def total_loss(consistency: LossResult, transcript: LossResult,
               length_reg: LossResult, alpha: float = DEFAULT_ALPHA) -> LossResult:
    """Weighted combination: consistency + transcript + alpha * regularizer."""
    value = consistency.value + transcript.value + alpha * length_reg.value
    grad_y = _add_opt(consistency.grad_frame_logits, transcript.grad_frame_logits)
    grad_y = _add_opt(grad_y, length_reg.grad_frame_logits, alpha)
    grad_rel = _add_opt(consistency.grad_rel_log_lengths,
                        transcript.grad_rel_log_lengths)
    grad_rel = _add_opt(grad_rel, length_reg.grad_rel_log_lengths, alpha)
    grad_act = _add_opt(consistency.grad_action_logits,
                        transcript.grad_action_logits)
    grad_act = _add_opt(grad_act, length_reg.grad_action_logits, alpha)
    return LossResult(value=float(value), grad_frame_logits=grad_y,
                      grad_rel_log_lengths=grad_rel, grad_action_logits=grad_act)

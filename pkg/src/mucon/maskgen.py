"""Differentiable temporal segment masks from relative log lengths.

The pipeline: relative log lengths -> softmax-normalized absolute lengths
and cumulative start positions -> per-segment 1-D affine transforms -> a
bilinear resampling of an all-ones reference template of canonical size
J = 100 onto the T output frames. Each mask is a trapezoid: exactly 1 on
frames inside the predicted segment, exactly 0 well outside it, with a
linear ramp of one template cell in between. Everything here is an
explicit closed-form function, and :func:`mask_jacobian` provides the
analytic derivative of every mask entry w.r.t. every relative log length.

Coordinate conventions (fixed, also relied on by the Jacobian):

- output frame t in [0, T) maps to normalized position
  i_w[t] = 2 t / (T - 1) - 1 (0.0 when T == 1), so frames span [-1, 1];
- the per-segment affine map gives i_u[t] = theta0 * i_w[t] + theta1;
- normalized i_u is converted to template index coordinates through
  idx = (i_u + 1) / 2 * (J - 1), so the template spans [0, J - 1].

At the kinks of the bilinear kernel the left-side derivative value is
used, which keeps gradients deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._backend import bilinear_mask_grad, bilinear_masks
from .core import MaskSet
from .errors import ContractError, DegenerateLengthError, NumericError

DEFAULT_TEMPLATE_SIZE = 100

# Normalized lengths below this fraction of T indicate a collapsed segment;
# the length regularizer is supposed to keep training far away from here.
DEGENERATE_LENGTH_FRACTION = 1e-8


@dataclass(frozen=True)
class Template:
    """All-ones reference template of canonical size J."""

    size: int = DEFAULT_TEMPLATE_SIZE

    def values(self) -> np.ndarray:
        return np.ones(self.size)


@dataclass(frozen=True)
class Localization:
    """Absolute segment lengths (summing to T) and cumulative starts."""

    abs_lengths: np.ndarray
    start_positions: np.ndarray

    @property
    def num_segments(self) -> int:
        return int(self.abs_lengths.size)


@dataclass(frozen=True)
class AffineParams:
    """Per-segment scale (theta0) and translation (theta1)."""

    theta0: np.ndarray
    theta1: np.ndarray

    @property
    def num_segments(self) -> int:
        return int(self.theta0.size)


def normalize_lengths(rel_log_lengths: np.ndarray, num_frames: int) -> Localization:
    """Map relative log lengths to absolute lengths and start positions.

    abs_lengths = T * softmax(rel_log_lengths); starts are the exclusive
    cumulative sums, so start_positions[0] == 0 and the lengths sum to T.
    """
    rel = np.asarray(rel_log_lengths, dtype=np.float64)
    if rel.ndim != 1 or rel.size < 1:
        raise ContractError("rel_log_lengths must be a nonempty 1-d array")
    if num_frames < 1:
        raise ContractError("num_frames must be >= 1")
    if not np.all(np.isfinite(rel)):
        raise NumericError("rel_log_lengths contain non-finite values")
    shifted = np.exp(rel - rel.max())
    abs_lengths = num_frames * shifted / shifted.sum()
    starts = np.concatenate(([0.0], np.cumsum(abs_lengths)[:-1]))
    return Localization(abs_lengths=abs_lengths, start_positions=starts)


def affine_params(loc: Localization, num_frames: int) -> AffineParams:
    """Per-segment affine transform: theta0 = T/len, theta1 = (T-2p)/len - 1."""
    lengths = loc.abs_lengths
    if np.any(lengths < DEGENERATE_LENGTH_FRACTION * num_frames):
        raise DegenerateLengthError(
            f"normalized segment length collapsed below "
            f"{DEGENERATE_LENGTH_FRACTION:g} * T; "
            f"lengths={np.array2string(lengths, precision=3)}"
        )
    theta0 = num_frames / lengths
    theta1 = (num_frames - 2.0 * loc.start_positions) / lengths - 1.0
    return AffineParams(theta0=theta0, theta1=theta1)


def frame_coordinates(num_frames: int) -> np.ndarray:
    """Normalized output coordinates i_w in [-1, 1] for frames 0..T-1."""
    if num_frames == 1:
        return np.zeros(1)
    return 2.0 * np.arange(num_frames) / (num_frames - 1) - 1.0


def sampling_index(params: AffineParams, num_frames: int,
                   template_size: int = DEFAULT_TEMPLATE_SIZE) -> np.ndarray:
    """Template index coordinate sampled by each (segment, frame) pair."""
    i_w = frame_coordinates(num_frames)
    i_u = params.theta0[:, None] * i_w[None, :] + params.theta1[:, None]
    return (i_u + 1.0) / 2.0 * (template_size - 1)


def sample_masks(params: AffineParams, num_frames: int,
                 template_size: int = DEFAULT_TEMPLATE_SIZE) -> MaskSet:
    """Resample the all-ones template through each affine transform."""
    idx = sampling_index(params, num_frames, template_size)
    return MaskSet(bilinear_masks(idx, template_size))


def masks_from_log_lengths(rel_log_lengths: np.ndarray, num_frames: int,
                           template_size: int = DEFAULT_TEMPLATE_SIZE):
    """Convenience: full pipeline. Returns (MaskSet, Localization)."""
    loc = normalize_lengths(rel_log_lengths, num_frames)
    masks = sample_masks(affine_params(loc, num_frames), num_frames, template_size)
    return masks, loc


def localization_jacobian(loc: Localization, num_frames: int) -> tuple[np.ndarray, np.ndarray]:
    """Derivatives of absolute lengths and starts w.r.t. the log lengths.

    Returns (dlen, dstart), both (M, M), where dlen[j, k] is the softmax
    normalization Jacobian d abs_lengths[j] / d rel_log_lengths[k] and
    dstart[m, k] = sum_{r<m} dlen[r, k].
    """
    lengths = loc.abs_lengths
    m = lengths.size
    dlen = np.diag(lengths) - np.outer(lengths, lengths) / num_frames
    dstart = np.zeros((m, m))
    dstart[1:] = np.cumsum(dlen, axis=0)[:-1]
    return dlen, dstart


def mask_jacobian(params: AffineParams, loc: Localization,
                  rel_log_lengths: np.ndarray, num_frames: int,
                  template_size: int = DEFAULT_TEMPLATE_SIZE) -> np.ndarray:
    """Analytic gradient of every mask entry w.r.t. every relative log length.

    Returns G with shape (M, T, M) where G[m, t, k] = d mask[m, t] /
    d rel_log_lengths[k]. Chains the kernel subgradient, the normalized
    to index-coordinate scale (J-1)/2, the affine parameter derivatives

        d i_u[m, t] / d len[m]   = -(i_w[t] * T + T - 2 p[m]) / len[m]^2
        d i_u[m, t] / d start[m] = -2 / len[m]

    and the softmax normalization Jacobian of the length mapping. At
    kernel kinks the left-side value is used (see module docstring).
    """
    rel = np.asarray(rel_log_lengths, dtype=np.float64)
    if rel.size != loc.num_segments or rel.size != params.num_segments:
        raise ContractError("rel_log_lengths, localization, params disagree on M")
    idx = sampling_index(params, num_frames, template_size)
    dw_didx = bilinear_mask_grad(idx, template_size)
    scale = (template_size - 1) / 2.0

    i_w = frame_coordinates(num_frames)
    lengths = loc.abs_lengths
    starts = loc.start_positions
    # (M, T): d i_u / d len[m]; (M,): d i_u / d start[m]
    d_iu_dlen = -(i_w[None, :] * num_frames + num_frames - 2.0 * starts[:, None]) \
        / (lengths ** 2)[:, None]
    d_iu_dstart = -2.0 / lengths

    dlen, dstart = localization_jacobian(loc, num_frames)
    # d idx[m, t] / d rel[k]
    didx = scale * (
        d_iu_dlen[:, :, None] * dlen[:, None, :]
        + d_iu_dstart[:, None, None] * dstart[:, None, :]
    )
    return dw_didx[:, :, None] * didx

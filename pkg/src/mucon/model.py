"""Reference trainable network and SGD trainer.

The network maps a T x D feature sequence to the two redundant
segmentation representations:

- framewise branch: a tanh embedding shared by everything, then a linear
  per-frame classifier producing T x N scores;
- segment branch: one learned query vector per segment position attends
  over the embedded frames (scaled dot product, softmax over time); the
  pooled context feeds a linear action head (N actions + end symbol) and
  a linear scalar head for the relative log length.

Queries are static, so a fixed sinusoidal encoding of normalized frame
position and of the overall sequence length is added to the embeddings on
the attention path only. Without it, attention pooling is a permutation-
invariant set operation and the ordered transcript (and its length) would
be unrecoverable in principle; the encoding adds no parameters and leaves
the framewise branch untouched.

Training follows the weak-supervision recipe: one video per step, plain
SGD with L2 weight decay, the summed consistency + transcript +
weighted length-regularizer loss, all gradients analytic.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .core import Dataset, FeatureSequence, FrameLogits, SegmentPrediction, Transcript
from .errors import ContractError, DataError, TrainingDivergedError
from .losses import (
    DEFAULT_ALPHA,
    DEFAULT_REG_WIDTH,
    LossResult,
    length_regularizer,
    mucon_loss,
    total_loss,
    transcript_loss,
)
from .maskgen import DEFAULT_TEMPLATE_SIZE, masks_from_log_lengths

# Positional-code layout: absolute frame-from-start wavelengths, decay
# scales for the distance-to-end channels, relative-position frequencies,
# and the reference scale for the sequence-length channels.
_ABS_WAVELENGTHS = (20.0, 40.0, 80.0, 160.0, 320.0)
_END_DECAY_SCALES = (8.0, 16.0, 32.0)
_REL_FREQUENCIES = (1, 2)
_LENGTH_SCALE = 1000.0

ATTENTION_MODES = ("content", "position")

_PARAM_FIELDS = (
    "embed_w", "embed_b", "frame_w", "frame_b", "queries",
    "action_w", "action_b", "length_w", "length_b",
)


@dataclass(frozen=True)
class ModelDims:
    """Shape hyperparameters of the reference network."""

    feature_dim: int
    hidden: int
    num_classes: int
    max_segments: int

    def __post_init__(self):
        if min(self.feature_dim, self.hidden, self.num_classes,
               self.max_segments) < 1:
            raise ContractError("all model dimensions must be >= 1")

    @staticmethod
    def for_dataset(dataset: Dataset, hidden: int = 32,
                    max_segments: int | None = None) -> "ModelDims":
        if max_segments is None:
            max_segments = max(len(item.transcript) for item in dataset.items)
        return ModelDims(feature_dim=dataset.feature_dim, hidden=hidden,
                         num_classes=dataset.num_classes,
                         max_segments=max_segments)


@dataclass
class ModelParams:
    """All trainable arrays plus the attention-key mode.

    Arrays are mutated in place by the trainer. ``attention_keys`` is an
    architecture property recorded in checkpoints: "content" scores
    queries against embedded frames plus the positional code, "position"
    against the positional code alone (see ``_forward_arrays``).
    """

    embed_w: np.ndarray   # (D, H)
    embed_b: np.ndarray   # (H,)
    frame_w: np.ndarray   # (H, N)
    frame_b: np.ndarray   # (N,)
    queries: np.ndarray   # (M_max + 1, H)
    action_w: np.ndarray  # (H, N + 1)
    action_b: np.ndarray  # (N + 1,)
    length_w: np.ndarray  # (H,)
    length_b: np.ndarray  # (1,)
    attention_keys: str = "content"

    def __post_init__(self):
        if self.attention_keys not in ATTENTION_MODES:
            raise ContractError(
                f"unknown attention mode {self.attention_keys!r}; "
                f"expected one of {ATTENTION_MODES}"
            )

    @property
    def dims(self) -> ModelDims:
        return ModelDims(
            feature_dim=self.embed_w.shape[0],
            hidden=self.embed_w.shape[1],
            num_classes=self.frame_w.shape[1],
            max_segments=self.queries.shape[0] - 1,
        )

    def blocks(self) -> dict:
        return {name: getattr(self, name) for name in _PARAM_FIELDS}

    def copy(self) -> "ModelParams":
        return ModelParams(**{k: v.copy() for k, v in self.blocks().items()},
                           attention_keys=self.attention_keys)


@dataclass(frozen=True)
class TrainConfig:
    """SGD settings; decay/alpha/width defaults follow the training recipe.

    ``clip_norm`` caps the global gradient norm per step. The mask
    gradient scales with the template size over the segment length, so a
    single misaligned confident video can otherwise throw the length head
    across the regularizer band in one step; clipping bounds that without
    touching the in-band dynamics. Set to None to disable.

    ``jitter`` adds fresh seeded Gaussian noise to the input features at
    every visit of a video. With a fixed small dataset the segment branch
    otherwise memorizes per-video feature quirks; jitter forces it onto
    signals stable under noise. ``attention_keys`` picks the architecture
    variant the new model is initialized with (see ``ModelParams``).
    """

    learning_rate: float = 0.05
    weight_decay: float = 0.005
    epochs: int = 300
    alpha: float = DEFAULT_ALPHA
    reg_width: float = DEFAULT_REG_WIDTH
    clip_norm: float | None = 5.0
    jitter: float = 0.0
    attention_keys: str = "content"
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ContractError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise ContractError("weight_decay must be nonnegative")
        if self.epochs < 0:
            raise ContractError("epochs must be nonnegative")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ContractError("clip_norm must be positive or None")
        if self.jitter < 0:
            raise ContractError("jitter must be nonnegative")
        if self.attention_keys not in ATTENTION_MODES:
            raise ContractError(
                f"unknown attention mode {self.attention_keys!r}"
            )


def init_params(dims: ModelDims, seed: int = 0,
                attention_keys: str = "content") -> ModelParams:
    """Gaussian(0, 0.1) weights, zero biases; deterministic given the seed."""
    rng = np.random.default_rng(seed)
    std = 0.1

    def w(*shape):
        return rng.normal(0.0, std, size=shape)

    d, h, n, m_max = (dims.feature_dim, dims.hidden, dims.num_classes,
                      dims.max_segments)
    return ModelParams(
        embed_w=w(d, h),
        embed_b=np.zeros(h),
        frame_w=w(h, n),
        frame_b=np.zeros(n),
        queries=w(m_max + 1, h),
        action_w=w(h, n + 1),
        action_b=np.zeros(n + 1),
        length_w=w(h),
        length_b=np.zeros(1),
        attention_keys=attention_keys,
    )


def positional_encoding(num_frames: int, hidden: int) -> np.ndarray:
    """Fixed sin/cos position features on three scales.

    Channels, in order, truncated to ``hidden`` (surplus channels stay
    zero and carry pure content):

    - absolute frame index at geometric wavelengths, so a query can point
      at "around frame 30" independently of the video length;
    - exponential decays of the distance to the last frame; unlike
      sinusoids these survive soft pooling, so the end decision can tell
      a band resting a few frames from the edge (a trailing ghost
      position) from one a segment-width away (the last real segment);
    - normalized position tau = t/(T-1);
    - constants in t encoding s = log(T)/log(1000), exposing the sequence
      length scale to the heads through the pooled context.
    """
    pe = np.zeros((num_frames, hidden))
    t = np.arange(num_frames, dtype=np.float64)
    tau = t / (num_frames - 1) if num_frames > 1 else np.zeros(1)
    s = math.log(num_frames) / math.log(_LENGTH_SCALE)
    channels = []
    for lam in _ABS_WAVELENGTHS:
        channels.append(np.sin(2.0 * math.pi * t / lam))
        channels.append(np.cos(2.0 * math.pi * t / lam))
    rev = num_frames - 1 - t
    for scale in _END_DECAY_SCALES:
        channels.append(np.exp(-rev / scale))
    for k in _REL_FREQUENCIES:
        channels.append(np.sin(k * math.pi * tau))
        channels.append(np.cos(k * math.pi * tau))
    channels.append(np.full(num_frames, 2.0 * s - 1.0))
    channels.append(np.full(num_frames, math.sin(math.pi * s)))
    channels.append(np.full(num_frames, math.cos(math.pi * s)))
    for i in range(min(hidden, len(channels))):
        pe[:, i] = channels[i]
    return pe


def _forward_arrays(params: ModelParams, frames: np.ndarray, positions: int):
    """Shared forward pass; returns every intermediate needed by backprop.

    ``params.attention_keys`` selects what the queries score against:
    "content" uses the embedded frames plus the positional code;
    "position" uses the positional code alone, which makes the attention
    pattern a pure function of (t, T) and forces the heads to read
    whatever content sits at their position band. Values pooled into the
    context are always embedding plus positional code.
    """
    h = params.embed_w.shape[1]
    z = np.tanh(frames @ params.embed_w + params.embed_b)
    y = z @ params.frame_w + params.frame_b
    pe = positional_encoding(frames.shape[0], h)
    zp = z + pe
    keys = zp if params.attention_keys == "content" else pe
    q = params.queries[:positions]
    scores = keys @ q.T / math.sqrt(h)         # (T, P)
    shifted = np.exp(scores - scores.max(axis=0, keepdims=True))
    beta = shifted / shifted.sum(axis=0, keepdims=True)
    context = beta.T @ zp                       # (P, H)
    action_logits = context @ params.action_w + params.action_b
    rel_log_lengths = context @ params.length_w + params.length_b[0]
    return {
        "z": z, "zp": zp, "keys": keys, "beta": beta, "context": context,
        "frame_logits": y, "action_logits": action_logits,
        "rel_log_lengths": rel_log_lengths,
    }


def forward(params: ModelParams, features: FeatureSequence,
            num_segments: int | None = None) -> tuple[FrameLogits, SegmentPrediction]:
    """Run the network.

    Training mode (``num_segments=M``) emits exactly M+1 positions, the
    teacher-forced count: M action rows plus the end row; the returned
    prediction carries M relative log lengths. Inference mode
    (``num_segments=None``) emits positions until the end symbol is the
    argmax or the M_max cap is reached; if the very first position already
    argmaxes to the end symbol, one segment with its best action class is
    emitted instead, since every video has at least one segment.
    """
    dims = params.dims
    if features.feature_dim != dims.feature_dim:
        raise ContractError(
            f"feature dim {features.feature_dim} does not match model "
            f"dim {dims.feature_dim}"
        )
    if num_segments is not None:
        if not (1 <= num_segments <= dims.max_segments):
            raise ContractError(
                f"num_segments must be in [1, {dims.max_segments}]"
            )
        out = _forward_arrays(params, features.frames, num_segments + 1)
        pred = SegmentPrediction(
            action_logits=out["action_logits"],
            rel_log_lengths=out["rel_log_lengths"][:num_segments],
        )
        return FrameLogits(out["frame_logits"]), pred

    out = _forward_arrays(params, features.frames, dims.max_segments)
    logits = out["action_logits"]
    end_id = dims.num_classes
    is_end = logits.argmax(axis=1) == end_id
    emitted = int(np.argmax(is_end)) if is_end.any() else dims.max_segments
    if emitted == 0:
        emitted = 1  # degenerate immediate-end prediction: keep one segment
    pred = SegmentPrediction(
        action_logits=logits[:emitted],
        rel_log_lengths=out["rel_log_lengths"][:emitted],
    )
    return FrameLogits(out["frame_logits"]), pred


def predicted_transcript(pred: SegmentPrediction, num_classes: int) -> Transcript:
    """Argmax action per emitted segment, ignoring the end-symbol column."""
    return Transcript(pred.action_logits[:, :num_classes].argmax(axis=1))


def training_loss(params: ModelParams, features: FeatureSequence,
                  transcript: Transcript, alpha: float = DEFAULT_ALPHA,
                  reg_width: float = DEFAULT_REG_WIDTH,
                  template_size: int = DEFAULT_TEMPLATE_SIZE):
    """Teacher-forced forward plus the three losses.

    Returns (total LossResult, parts dict, forward cache); the cache is
    reused by :func:`parameter_gradients`.
    """
    m_count = len(transcript)
    out = _forward_arrays(params, features.frames, m_count + 1)
    rel = out["rel_log_lengths"][:m_count]
    masks, loc = masks_from_log_lengths(rel, features.num_frames, template_size)
    consistency = mucon_loss(FrameLogits(out["frame_logits"]), masks, loc,
                             transcript, rel, template_size)
    trans = transcript_loss(out["action_logits"], transcript)
    reg = length_regularizer(rel, reg_width)
    return total_loss(consistency, trans, reg, alpha), \
        {"consistency": consistency, "transcript": trans, "length_reg": reg}, out


def _zero_grads(params: ModelParams) -> dict:
    return {k: np.zeros_like(v) for k, v in params.blocks().items()}


def parameter_gradients(params: ModelParams, features: FeatureSequence,
                        transcript: Transcript, alpha: float = DEFAULT_ALPHA,
                        reg_width: float = DEFAULT_REG_WIDTH,
                        template_size: int = DEFAULT_TEMPLATE_SIZE):
    """Analytic gradient of the total loss w.r.t. every parameter block.

    Returns (total LossResult, grads dict keyed like ``ModelParams.blocks``,
    parts dict).
    """
    total, parts, out = training_loss(params, features, transcript, alpha,
                                      reg_width, template_size)
    m_count = len(transcript)
    positions = m_count + 1
    frames = features.frames
    h = params.embed_w.shape[1]
    z, zp, beta, context = out["z"], out["zp"], out["beta"], out["context"]

    d_y = total.grad_frame_logits
    d_act = total.grad_action_logits
    d_len = np.zeros(positions)
    d_len[:m_count] = total.grad_rel_log_lengths

    grads = _zero_grads(params)
    d_z = d_y @ params.frame_w.T
    grads["frame_w"] += z.T @ d_y
    grads["frame_b"] += d_y.sum(axis=0)

    d_context = d_act @ params.action_w.T + np.outer(d_len, params.length_w)
    grads["action_w"] += context.T @ d_act
    grads["action_b"] += d_act.sum(axis=0)
    grads["length_w"] += context.T @ d_len
    grads["length_b"][0] += d_len.sum()

    # attention: context = beta.T @ zp, beta = softmax_t(keys @ q.T / sqrt(H))
    keys = out["keys"]
    d_beta = zp @ d_context.T                      # (T, P)
    d_zp = beta @ d_context
    d_scores = beta * (d_beta - (beta * d_beta).sum(axis=0, keepdims=True))
    q = params.queries[:positions]
    if params.attention_keys == "content":
        d_zp += d_scores @ q / math.sqrt(h)  # keys are zp; position keys are constant
    grads["queries"][:positions] += d_scores.T @ keys / math.sqrt(h)

    d_z += d_zp
    d_pre = d_z * (1.0 - z * z)
    grads["embed_w"] += frames.T @ d_pre
    grads["embed_b"] += d_pre.sum(axis=0)
    return total, grads, parts


def train(dataset: Dataset, config: TrainConfig,
          dims: ModelDims | None = None,
          params: ModelParams | None = None,
          hidden: int = 32) -> tuple[ModelParams, list]:
    """SGD over single videos; deterministic given (dataset order, seed).

    Only features and transcripts are consumed; frame labels on the
    records are never read. Returns the trained parameters and a
    per-epoch trace of mean loss parts. Raises
    :class:`TrainingDivergedError` if any step produces a non-finite loss.
    """
    if len(dataset) == 0:
        raise ContractError("cannot train on an empty dataset")
    if params is None:
        if dims is None:
            dims = ModelDims.for_dataset(dataset, hidden=hidden)
        params = init_params(dims, config.seed, config.attention_keys)
    else:
        params = params.copy()
        dims = params.dims
    for item in dataset.items:
        if len(item.transcript) > dims.max_segments:
            raise ContractError(
                f"video {item.video_id} has {len(item.transcript)} segments, "
                f"model supports at most {dims.max_segments}"
            )
    rng = np.random.default_rng(config.seed)
    trace = []
    step = 0
    for _ in range(config.epochs):
        order = rng.permutation(len(dataset))
        sums = {"total": 0.0, "consistency": 0.0, "transcript": 0.0,
                "length_reg": 0.0}
        for vi in order:
            item = dataset.items[int(vi)]
            feats = item.features
            if config.jitter > 0:
                feats = FeatureSequence(
                    feats.frames
                    + config.jitter * rng.normal(size=feats.frames.shape)
                )
            total, grads, parts = parameter_gradients(
                params, feats, item.transcript,
                alpha=config.alpha, reg_width=config.reg_width,
            )
            if not np.isfinite(total.value):
                raise TrainingDivergedError(step)
            if config.clip_norm is not None:
                norm = math.sqrt(sum(float((g * g).sum())
                                     for g in grads.values()))
                if norm > config.clip_norm:
                    scale = config.clip_norm / norm
                    grads = {k: v * scale for k, v in grads.items()}
            for name, grad in grads.items():
                block = getattr(params, name)
                block -= config.learning_rate * (
                    grad + config.weight_decay * block
                )
            sums["total"] += total.value
            sums["consistency"] += parts["consistency"].value
            sums["transcript"] += parts["transcript"].value
            sums["length_reg"] += parts["length_reg"].value
            step += 1
        trace.append({k: v / len(dataset) for k, v in sums.items()})
    return params, trace


# ---------------------------------------------------------------------------
# Checkpoints: versioned binary, bit-exact round trip
# ---------------------------------------------------------------------------

_CKPT_MAGIC = b"MCKP"
_CKPT_VERSION = 1
# magic, version, D, H, N, M_max, attention-mode index
_CKPT_HEADER = struct.Struct("<4sIIIIII")


def save_checkpoint(params: ModelParams, path: str):
    """Dims header plus the parameter blocks as little-endian float64."""
    dims = params.dims
    payload = [_CKPT_HEADER.pack(_CKPT_MAGIC, _CKPT_VERSION, dims.feature_dim,
                                 dims.hidden, dims.num_classes,
                                 dims.max_segments,
                                 ATTENTION_MODES.index(params.attention_keys))]
    for name in _PARAM_FIELDS:
        payload.append(getattr(params, name).astype("<f8").tobytes(order="C"))
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(b"".join(payload))
    os.replace(tmp, path)


def load_checkpoint(path: str) -> ModelParams:
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < _CKPT_HEADER.size:
        raise DataError(f"checkpoint {path} truncated before header")
    magic, version, d, h, n, m_max, mode = _CKPT_HEADER.unpack_from(raw)
    if magic != _CKPT_MAGIC:
        raise DataError(f"checkpoint {path} has wrong magic {magic!r}")
    if version != _CKPT_VERSION:
        raise DataError(f"checkpoint {path} has unsupported version {version}")
    if mode >= len(ATTENTION_MODES):
        raise DataError(f"checkpoint {path} has unknown attention mode {mode}")
    dims = ModelDims(feature_dim=d, hidden=h, num_classes=n, max_segments=m_max)
    shapes = {
        "embed_w": (d, h), "embed_b": (h,), "frame_w": (h, n), "frame_b": (n,),
        "queries": (m_max + 1, h), "action_w": (h, n + 1),
        "action_b": (n + 1,), "length_w": (h,), "length_b": (1,),
    }
    offset = _CKPT_HEADER.size
    blocks = {}
    for name in _PARAM_FIELDS:
        shape = shapes[name]
        count = int(np.prod(shape))
        end = offset + 8 * count
        if end > len(raw):
            raise DataError(f"checkpoint {path} truncated in block {name}")
        blocks[name] = np.frombuffer(raw, dtype="<f8", count=count,
                                     offset=offset).reshape(shape).copy()
        offset = end
    if offset != len(raw):
        raise DataError(f"checkpoint {path} has {len(raw) - offset} trailing bytes")
    return ModelParams(**blocks, attention_keys=ATTENTION_MODES[mode])

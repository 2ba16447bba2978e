"""Frame-level training targets and losses with analytic gradients.

All planes are ``(T, n_pitches)`` with time on axis 0. Frame ``t`` has its
reference time at ``t / frame_rate``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._serde import from_dict, to_dict
from .decoder import MAX_PITCH, MIN_PITCH, N_PITCHES
from .errors import ConfigurationError, InvalidInputError, ShapeMismatchError

PRED_CLAMP = 1e-7
SCHEMES = ("binary", "triangular")


@dataclass(frozen=True)
class EncoderConfig:
    scheme: str = "binary"
    frame_rate: float = 100.0
    half_width: int = 3
    n_frames: int = 300
    n_pitches: int = N_PITCHES

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.frame_rate <= 0:
            raise ConfigurationError(f"frame_rate must be positive, got {self.frame_rate}")
        if self.half_width < 1:
            raise ConfigurationError(f"triangle half width must be >= 1, got {self.half_width}")
        if self.n_frames < 1:
            raise ConfigurationError(f"n_frames must be >= 1, got {self.n_frames}")

    def to_dict(self) -> dict:
        return to_dict(self)

    @classmethod
    def from_dict(cls, data) -> "EncoderConfig":
        return from_dict(cls, data)


@dataclass
class TargetMatrices:
    onset: np.ndarray
    offset: np.ndarray
    frame: np.ndarray
    velocity: np.ndarray
    velocity_mask: np.ndarray


@dataclass
class LossResult:
    value: float
    gradient: np.ndarray


def _nearest_frame(time_s: float, frame_rate: float, n_frames: int) -> int:
    # Half-up rounding; the rounding to 9 places absorbs float noise such as
    # 0.015 * 100 = 1.4999999999999998.
    index = math.floor(round(time_s * frame_rate, 9) + 0.5)
    return min(max(index, 0), n_frames - 1)


def _empty(config: EncoderConfig) -> TargetMatrices:
    shape = (config.n_frames, config.n_pitches)
    return TargetMatrices(*(np.zeros(shape) for _ in range(5)))


def _check_pitch(note, config: EncoderConfig) -> int:
    if not MIN_PITCH <= note.pitch <= MAX_PITCH:
        raise InvalidInputError(f"pitch {note.pitch} outside {MIN_PITCH}..{MAX_PITCH}")
    column = note.pitch - MIN_PITCH
    if column >= config.n_pitches:
        raise InvalidInputError(f"pitch {note.pitch} beyond the {config.n_pitches} encoded pitches")
    return column


def _fill_frames_and_velocity(targets: TargetMatrices, notes, config: EncoderConfig) -> None:
    frames = np.arange(config.n_frames)
    for note in notes:
        p = _check_pitch(note, config)
        # Compare in frame units, rounded like _nearest_frame, so that notes
        # shifted by whole frames rasterize identically despite float noise.
        start = round(note.onset * config.frame_rate, 9)
        stop = round(note.offset * config.frame_rate, 9)
        targets.frame[(frames >= start) & (frames < stop), p] = 1.0
        t_on = _nearest_frame(note.onset, config.frame_rate, config.n_frames)
        targets.velocity[t_on, p] = note.velocity / 127.0
        targets.velocity_mask[t_on, p] = 1.0


def encode_binary(notes, config: EncoderConfig | None = None) -> TargetMatrices:
    """Onset/offset active only at the frame nearest each annotation."""
    config = config or EncoderConfig()
    targets = _empty(config)
    for note in notes:
        p = _check_pitch(note, config)
        targets.onset[_nearest_frame(note.onset, config.frame_rate, config.n_frames), p] = 1.0
        targets.offset[_nearest_frame(note.offset, config.frame_rate, config.n_frames), p] = 1.0
    _fill_frames_and_velocity(targets, notes, config)
    return targets


def _triangle(plane: np.ndarray, p: int, time_s: float, config: EncoderConfig) -> None:
    rate, width = config.frame_rate, config.half_width
    center = time_s * rate
    lo = max(0, math.floor(center) - width)
    hi = min(config.n_frames - 1, math.ceil(center) + width)
    t = np.arange(lo, hi + 1)
    values = np.maximum(0.0, 1.0 - np.abs(t / rate - time_s) * rate / width)
    plane[lo:hi + 1, p] = np.maximum(plane[lo:hi + 1, p], values)


def encode_triangular(notes, config: EncoderConfig | None = None) -> TargetMatrices:
    """Onset/offset triangles of half width ``J`` frames peaking at each annotation.

    Overlapping triangles keep the pointwise maximum. Frame and velocity
    planes are as in :func:`encode_binary`.
    """
    config = config or EncoderConfig(scheme="triangular")
    targets = _empty(config)
    for note in notes:
        p = _check_pitch(note, config)
        _triangle(targets.onset, p, note.onset, config)
        _triangle(targets.offset, p, note.offset, config)
    _fill_frames_and_velocity(targets, notes, config)
    return targets


def encode(notes, config: EncoderConfig) -> TargetMatrices:
    if config.scheme == "binary":
        return encode_binary(notes, config)
    return encode_triangular(notes, config)


def _check_pair(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeMismatchError(f"prediction {pred.shape} and target {target.shape} differ")
    if pred.size == 0:
        raise ShapeMismatchError("empty prediction")
    return pred, target


def _clamp(pred):
    clamped = np.clip(pred, PRED_CLAMP, 1.0 - PRED_CLAMP)
    inside = (pred >= PRED_CLAMP) & (pred <= 1.0 - PRED_CLAMP)
    return clamped, inside


def weighted_bce(pred, target, w_pos: float = 10.0) -> LossResult:
    """Mean binary cross-entropy with positives weighted by ``w_pos``."""
    pred, target = _check_pair(pred, target)
    p, inside = _clamp(pred)
    terms = -(w_pos * target * np.log(p) + (1.0 - target) * np.log(1.0 - p))
    n = terms.size
    grad = -(w_pos * target / p - (1.0 - target) / (1.0 - p)) / n
    return LossResult(float(np.sum(terms) / n), np.where(inside, grad, 0.0))


def _window_argmax(pred: np.ndarray, tol: int) -> np.ndarray:
    # Row index of the maximum of pred[t - tol .. t + tol] along axis 0; ties
    # go to the earliest frame.
    if tol == 0:
        return np.broadcast_to(np.arange(pred.shape[0])[:, None], pred.shape).copy()
    padded = np.pad(pred, ((tol, tol), (0, 0)), constant_values=-np.inf)
    windows = np.lib.stride_tricks.sliding_window_view(padded, 2 * tol + 1, axis=0)
    return np.argmax(windows, axis=-1) + np.arange(pred.shape[0])[:, None] - tol


def shift_tolerant_bce(pred, target, tol_frames: int = 1, w_pos: float = 10.0) -> LossResult:
    """Binary cross-entropy that tolerates onsets displaced by up to ``tol_frames``.

    Each positive frame is scored by the largest prediction within
    ``+-tol_frames`` of it (weighted by ``w_pos``). Non-positive frames that
    lie within ``tol_frames`` of a positive are excluded; all other frames
    contribute the ordinary negative term. The value is the mean over
    contributing frames and the positive-term gradient flows to the frame
    holding the window maximum.
    """
    pred, target = _check_pair(pred, target)
    if not np.all((target == 0.0) | (target == 1.0)):
        raise InvalidInputError("shift-tolerant loss needs binary targets")
    if tol_frames < 0:
        raise ConfigurationError(f"tolerance must be >= 0 frames, got {tol_frames}")
    squeeze = pred.ndim == 1
    if squeeze:
        pred, target = pred[:, None], target[:, None]

    p, inside = _clamp(pred)
    positive = target == 1.0
    near = np.zeros_like(positive)
    for shift in range(1, tol_frames + 1):
        near[shift:] |= positive[:-shift]
        near[:-shift] |= positive[shift:]
    negative = ~positive & ~near

    argmax = _window_argmax(p, tol_frames)
    cols = np.broadcast_to(np.arange(p.shape[1]), p.shape)
    p_tilde = p[argmax, cols]

    terms = np.where(positive, -(w_pos * np.log(p_tilde)),
                     np.where(negative, -np.log(1.0 - p), 0.0))
    count = int(positive.sum() + negative.sum())
    if count == 0:
        grad = np.zeros_like(p)
        return LossResult(0.0, grad[:, 0] if squeeze else grad)

    grad = np.where(negative, 1.0 / (1.0 - p), 0.0) / count
    pos_t, pos_p = np.nonzero(positive)
    np.add.at(grad, (argmax[pos_t, pos_p], pos_p), -w_pos / p_tilde[pos_t, pos_p] / count)
    grad = np.where(inside, grad, 0.0)
    value = float(np.sum(terms) / count)
    return LossResult(value, grad[:, 0] if squeeze else grad)


def velocity_mse(pred, target, mask) -> LossResult:
    """Mean squared error over entries where ``mask`` is 1."""
    pred, target = _check_pair(pred, target)
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != pred.shape:
        raise ShapeMismatchError(f"mask {mask.shape} and prediction {pred.shape} differ")
    n = float(mask.sum())
    if n == 0:
        return LossResult(0.0, np.zeros_like(pred))
    diff = (pred - target) * mask
    return LossResult(float(np.sum(diff * diff) / n), 2.0 * diff / n)


LOSS_KINDS = ("wbce", "shift_tolerant", "mse")


@dataclass(frozen=True)
class LossConfig:
    """Loss applied to the onset and offset planes."""

    kind: str = "wbce"
    w_pos: float = 10.0
    tol_frames: int = 1

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ConfigurationError(f"loss kind must be one of {LOSS_KINDS}, got {self.kind!r}")
        if self.w_pos <= 0:
            raise ConfigurationError(f"w_pos must be positive, got {self.w_pos}")
        if self.tol_frames < 0:
            raise ConfigurationError(f"tol_frames must be >= 0, got {self.tol_frames}")

    def to_dict(self) -> dict:
        return to_dict(self)

    @classmethod
    def from_dict(cls, data) -> "LossConfig":
        return from_dict(cls, data)


def apply_loss(config: LossConfig, pred, target) -> LossResult:
    if config.kind == "wbce":
        return weighted_bce(pred, target, config.w_pos)
    if config.kind == "shift_tolerant":
        return shift_tolerant_bce(pred, target, config.tol_frames, config.w_pos)
    return velocity_mse(pred, target, np.ones(np.shape(pred)))

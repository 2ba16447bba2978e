"""Note-event decoding from per-frame head probabilities.

The causal decoder emits a note only from frames it has already seen:

* an onset is a rising threshold crossing of the onset probability;
* re-onsets of the same pitch closer than ``min_reonset_ms`` to the last
  accepted onset are dropped;
* an active note ends at the first later frame where the frame probability
  falls below its threshold or the offset probability crosses its own;
* an accepted onset on an active pitch closes the old note and opens a new one.

:func:`decode_noncausal_baseline` instead places onsets at strict local
maxima (with parabolic refinement), which needs one frame of lookahead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._serde import from_dict, to_dict
from .errors import ConfigurationError, ContractViolationError, InvalidInputError, ShapeMismatchError

MIN_PITCH = 21
MAX_PITCH = 108
N_PITCHES = MAX_PITCH - MIN_PITCH + 1
DEFAULT_VELOCITY = 64
NONCAUSAL_LOOKAHEAD_FRAMES = 1


@dataclass(frozen=True)
class DecoderConfig:
    onset_threshold: float = 0.45
    frame_threshold: float = 0.5
    offset_threshold: float = 0.5
    min_reonset_ms: float = 50.0
    frame_rate: float = 100.0

    def __post_init__(self):
        for name in ("onset_threshold", "frame_threshold", "offset_threshold"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ConfigurationError(f"{name} must lie in (0, 1), got {value}")
        if self.min_reonset_ms < 0:
            raise ConfigurationError(f"min_reonset_ms must be >= 0, got {self.min_reonset_ms}")
        if self.frame_rate <= 0:
            raise ConfigurationError(f"frame_rate must be positive, got {self.frame_rate}")

    @property
    def min_reonset_frames(self) -> int:
        return int(math.ceil(round(self.min_reonset_ms * self.frame_rate / 1000.0, 9)))

    def to_dict(self) -> dict:
        return to_dict(self)

    @classmethod
    def from_dict(cls, data) -> "DecoderConfig":
        return from_dict(cls, data)


@dataclass(frozen=True)
class NoteEvent:
    pitch: int
    onset: float
    offset: float
    velocity: int = DEFAULT_VELOCITY

    def __post_init__(self):
        if not MIN_PITCH <= self.pitch <= MAX_PITCH:
            raise InvalidInputError(f"pitch {self.pitch} outside {MIN_PITCH}..{MAX_PITCH}")
        if not (math.isfinite(self.onset) and math.isfinite(self.offset)):
            raise InvalidInputError(f"non-finite note times ({self.onset}, {self.offset})")
        if not self.offset > self.onset:
            raise InvalidInputError(f"offset {self.offset} must exceed onset {self.onset}")
        if not 1 <= self.velocity <= 127:
            raise InvalidInputError(f"velocity {self.velocity} outside 1..127")


def _velocity_to_midi(value: float) -> int:
    return int(min(127, max(1, math.floor(127.0 * value + 0.5))))


class DecoderState:
    """Per-pitch state of the causal decoder."""

    def __init__(self, config: DecoderConfig | None = None, n_pitches: int = N_PITCHES):
        self.config = config or DecoderConfig()
        self.n_pitches = n_pitches
        self.active = np.zeros(n_pitches, dtype=bool)
        self.onset_frame = np.zeros(n_pitches, dtype=np.int64)
        self.velocity = np.zeros(n_pitches, dtype=np.int64)
        # Far enough in the past that the first onset is never suppressed.
        self.last_onset = np.full(n_pitches, -(1 << 40), dtype=np.int64)
        self.prev_onset = np.zeros(n_pitches)
        self.prev_offset = np.zeros(n_pitches)
        self.next_t = 0

    def snapshot(self) -> tuple:
        return (self.active.copy(), self.onset_frame.copy(), self.velocity.copy(),
                self.last_onset.copy(), self.prev_onset.copy(), self.prev_offset.copy(),
                self.next_t)

    def _note(self, p: int, end_frame: int) -> NoteEvent:
        rate = self.config.frame_rate
        return NoteEvent(MIN_PITCH + p, self.onset_frame[p] / rate, end_frame / rate,
                         int(self.velocity[p]))

    def advance(self, t: int, onset_edge: np.ndarray, frame: np.ndarray,
                offset_edge: np.ndarray, velocity: np.ndarray | None) -> list[NoteEvent]:
        """Apply one frame given precomputed onset/offset edge masks."""
        if t != self.next_t:
            raise ContractViolationError(f"expected frame {self.next_t}, got {t}")
        cfg = self.config
        accepted = onset_edge & (t - self.last_onset >= cfg.min_reonset_frames)
        ending = self.active & ((frame < cfg.frame_threshold) | offset_edge | accepted)

        events = [self._note(p, t) for p in np.flatnonzero(ending)]
        self.active &= ~ending

        if accepted.any():
            self.active |= accepted
            self.onset_frame[accepted] = t
            self.last_onset[accepted] = t
            if velocity is None:
                self.velocity[accepted] = DEFAULT_VELOCITY
            else:
                for p in np.flatnonzero(accepted):
                    self.velocity[p] = _velocity_to_midi(velocity[p])
        self.next_t = t + 1
        return events


def _as_row(values, n_pitches: int, name: str) -> np.ndarray:
    row = np.asarray(values, dtype=np.float64)
    if row.shape != (n_pitches,):
        raise ShapeMismatchError(f"{name}: expected shape ({n_pitches},), got {row.shape}")
    return row


def step(state: DecoderState, outputs, t: int) -> list[NoteEvent]:
    """Feed one frame of head outputs; returns notes completed at frame ``t``.

    ``outputs`` needs ``onset`` and ``frame`` attributes and may carry
    ``offset`` and ``velocity`` (``None`` disables them).
    """
    if t != state.next_t:
        raise ContractViolationError(f"expected frame {state.next_t}, got {t}")
    cfg = state.config
    n = state.n_pitches
    onset = _as_row(outputs.onset, n, "onset")
    frame = _as_row(outputs.frame, n, "frame")
    offset = getattr(outputs, "offset", None)
    velocity = getattr(outputs, "velocity", None)

    onset_edge = (onset >= cfg.onset_threshold) & (state.prev_onset < cfg.onset_threshold)
    state.prev_onset = onset.copy()
    if offset is None:
        offset_edge = np.zeros(n, dtype=bool)
    else:
        offset = _as_row(offset, n, "offset")
        offset_edge = (offset >= cfg.offset_threshold) & (state.prev_offset < cfg.offset_threshold)
        state.prev_offset = offset.copy()
    if velocity is not None:
        velocity = _as_row(velocity, n, "velocity")
    return state.advance(t, onset_edge, frame, offset_edge, velocity)


def finalize(state: DecoderState, last_frame: int | None = None) -> list[NoteEvent]:
    """Close every active note at ``last_frame`` (default: frames seen so far)."""
    end = state.next_t if last_frame is None else last_frame
    events = []
    for p in np.flatnonzero(state.active):
        events.append(state._note(p, max(end, int(state.onset_frame[p]) + 1)))
    state.active[:] = False
    return events


@dataclass(frozen=True)
class _Frame:
    onset: np.ndarray
    frame: np.ndarray
    offset: np.ndarray | None
    velocity: np.ndarray | None


def _check_matrices(onset, frame, offset, velocity):
    onset = np.asarray(onset, dtype=np.float64)
    frame = np.asarray(frame, dtype=np.float64)
    if onset.ndim != 2 or onset.shape != frame.shape:
        raise ShapeMismatchError(f"onset {onset.shape} and frame {frame.shape} must match (T, P)")
    out = [onset, frame]
    for name, arr in (("offset", offset), ("velocity", velocity)):
        if arr is not None:
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != onset.shape:
                raise ShapeMismatchError(f"{name} shape {arr.shape} != {onset.shape}")
        out.append(arr)
    return out


def decode_all(onset, frame, offset=None, velocity=None,
               config: DecoderConfig | None = None) -> list[NoteEvent]:
    """Causal decoding of full ``(T, P)`` probability matrices.

    Identical to folding :func:`step` over all frames and calling
    :func:`finalize`.
    """
    onset, frame, offset, velocity = _check_matrices(onset, frame, offset, velocity)
    state = DecoderState(config, onset.shape[1])
    events = []
    for t in range(onset.shape[0]):
        row = _Frame(onset[t], frame[t], None if offset is None else offset[t],
                     None if velocity is None else velocity[t])
        events.extend(step(state, row, t))
    events.extend(finalize(state, onset.shape[0]))
    return events


def decode_outputs(outputs, config: DecoderConfig | None = None) -> list[NoteEvent]:
    return decode_all(outputs.onset, outputs.frame, getattr(outputs, "offset", None),
                      getattr(outputs, "velocity", None), config)


def _parabolic_shift(left: float, center: float, right: float) -> float:
    denom = left - 2.0 * center + right
    if denom == 0.0:
        return 0.0
    return 0.5 * (left - right) / denom


def decode_noncausal_baseline(onset, frame, offset=None, velocity=None,
                              config: DecoderConfig | None = None) -> list[NoteEvent]:
    """Peak-picking decoder for triangular (regression-style) onset outputs.

    Onsets sit at strict local maxima at or above the onset threshold,
    refined to sub-frame precision by a parabola through the peak and its
    neighbours. Offsets follow the causal rule. Confirming a peak needs the
    following frame, i.e. ``NONCAUSAL_LOOKAHEAD_FRAMES`` of latency.
    """
    config = config or DecoderConfig()
    onset, frame, offset, velocity = _check_matrices(onset, frame, offset, velocity)
    n_frames, n_pitches = onset.shape
    if n_frames < 3:
        raise ShapeMismatchError(f"peak picking needs at least 3 frames, got {n_frames}")

    peaks = np.zeros_like(onset, dtype=bool)
    center = onset[1:-1]
    peaks[1:-1] = ((center > onset[:-2]) & (center > onset[2:])
                   & (center >= config.onset_threshold))
    if offset is None:
        offset_edges = np.zeros_like(peaks)
    else:
        above = offset >= config.offset_threshold
        offset_edges = above & ~np.vstack([np.zeros((1, n_pitches), dtype=bool), above[:-1]])

    state = DecoderState(config, n_pitches)
    refined: dict[tuple[int, int], float] = {}

    def fix(events):
        out = []
        for ev in events:
            p = ev.pitch - MIN_PITCH
            start = refined.get((p, round(ev.onset * config.frame_rate)), ev.onset)
            out.append(NoteEvent(ev.pitch, start, max(ev.offset, start + 1e-6), ev.velocity))
        return out

    events = []
    for t in range(n_frames):
        for p in np.flatnonzero(peaks[t]):
            shift = _parabolic_shift(onset[t - 1, p], onset[t, p], onset[t + 1, p])
            refined[(p, t)] = (t + shift) / config.frame_rate
        events.extend(fix(state.advance(t, peaks[t], frame[t], offset_edges[t],
                                        None if velocity is None else velocity[t])))
    events.extend(fix(finalize(state, n_frames)))
    return events


def sort_notes(notes) -> list[NoteEvent]:
    return sorted(notes, key=lambda n: (n.onset, n.pitch, n.offset))


def format_notes(notes) -> str:
    lines = [f"{n.onset:.6f}\t{n.offset:.6f}\t{n.pitch}\t{n.velocity}\n" for n in sort_notes(notes)]
    return "".join(lines)


def write_notes(path, notes) -> None:
    Path(path).write_text(format_notes(notes), encoding="utf-8")


def parse_notes(text: str, source: str = "<string>") -> list[NoteEvent]:
    notes = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise InvalidInputError(f"{source}:{lineno}: expected 4 tab-separated columns")
        try:
            notes.append(NoteEvent(int(parts[2]), float(parts[0]), float(parts[1]),
                                   int(parts[3])))
        except ValueError as exc:
            raise InvalidInputError(f"{source}:{lineno}: {exc}") from exc
    return notes


def read_notes(path) -> list[NoteEvent]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InvalidInputError(f"cannot read note list {path}: {exc.strerror}") from exc
    return parse_notes(text, str(path))

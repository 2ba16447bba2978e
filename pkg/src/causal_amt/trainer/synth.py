"""Piano-like synthetic audio with exact note annotations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .._serde import from_dict, to_dict
from ..decoder import MAX_PITCH, MIN_PITCH, NoteEvent, sort_notes
from ..errors import ConfigurationError
from ..frontend import SAMPLE_RATE, AudioChunk

PEAK = 0.9


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    duration_s: float = 10.0
    max_polyphony: int = 4
    pitch_range: tuple[int, int] = (40, 80)
    note_rate: float = 4.0
    harmonics: int = 8
    decay: float = 2.0
    attack_ms: float = 5.0
    release_ms: float = 30.0
    noise_level: float = 0.003
    min_note_s: float = 0.15
    max_note_s: float = 1.0
    velocity_range: tuple[int, int] = (40, 120)
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        lo, hi = self.pitch_range
        if not MIN_PITCH <= lo <= hi <= MAX_PITCH:
            raise ConfigurationError(
                f"pitch_range must lie within {MIN_PITCH}..{MAX_PITCH}, got {self.pitch_range}")
        if not self.duration_s > 0:
            raise ConfigurationError(f"duration_s must be positive, got {self.duration_s}")
        if self.max_polyphony < 1 or self.harmonics < 1:
            raise ConfigurationError("max_polyphony and harmonics must be >= 1")
        if self.note_rate <= 0 or self.decay < 0 or self.attack_ms <= 0 or self.release_ms < 0:
            raise ConfigurationError("note_rate and attack_ms must be positive; decay, release >= 0")
        if not 0 < self.min_note_s <= self.max_note_s:
            raise ConfigurationError("need 0 < min_note_s <= max_note_s")
        vlo, vhi = self.velocity_range
        if not 1 <= vlo <= vhi <= 127:
            raise ConfigurationError(f"velocity_range must lie within 1..127, got {self.velocity_range}")
        if self.noise_level < 0:
            raise ConfigurationError(f"noise_level must be >= 0, got {self.noise_level}")

    def to_dict(self) -> dict:
        return to_dict(self)

    @classmethod
    def from_dict(cls, data) -> "SynthConfig":
        return from_dict(cls, data)


def midi_to_hz(pitch) -> np.ndarray:
    return 440.0 * 2.0 ** ((np.asarray(pitch, dtype=np.float64) - 69.0) / 12.0)


def _draw_notes(cfg: SynthConfig, rng: np.random.Generator) -> list[NoteEvent]:
    notes: list[NoteEvent] = []
    last_onset = cfg.duration_s - cfg.min_note_s
    t = rng.exponential(1.0 / cfg.note_rate)
    while t < last_onset:
        # Quantize to the sample grid so annotations are exact.
        onset = round(t * cfg.sample_rate) / cfg.sample_rate
        active = [n for n in notes if n.offset > onset]
        if len(active) < cfg.max_polyphony:
            busy = {n.pitch for n in active}
            free = [p for p in range(cfg.pitch_range[0], cfg.pitch_range[1] + 1) if p not in busy]
            if free:
                pitch = int(free[rng.integers(len(free))])
                length = rng.uniform(cfg.min_note_s, cfg.max_note_s)
                offset = min(onset + length, cfg.duration_s)
                offset = round(offset * cfg.sample_rate) / cfg.sample_rate
                velocity = int(rng.integers(cfg.velocity_range[0], cfg.velocity_range[1] + 1))
                notes.append(NoteEvent(pitch, onset, offset, velocity))
        t += rng.exponential(1.0 / cfg.note_rate)
    return notes


def _render(note: NoteEvent, cfg: SynthConfig, phases: np.ndarray, out: np.ndarray) -> None:
    sr = cfg.sample_rate
    start = int(round(note.onset * sr))
    sustain = int(round(note.offset * sr)) - start
    release = int(round(cfg.release_ms * sr / 1000.0))
    n = min(sustain + release, out.size - start)
    t = np.arange(n) / sr
    env = np.minimum(t * 1000.0 / cfg.attack_ms, 1.0) * np.exp(-cfg.decay * t)
    if n > sustain:
        env[sustain:] *= np.linspace(1.0, 0.0, release, endpoint=False)[:n - sustain]
    f0 = float(midi_to_hz(note.pitch))
    tone = np.zeros(n)
    for h in range(1, cfg.harmonics + 1):
        if h * f0 >= sr / 2:
            break
        tone += np.sin(2 * np.pi * h * f0 * t + phases[h - 1]) / h
    out[start:start + n] += (note.velocity / 127.0) * env * tone


def synth_generate(config: SynthConfig | None = None) -> tuple[AudioChunk, list[NoteEvent]]:
    """Render a random note sequence; fully determined by ``config.seed``.

    Each note is a harmonic series with ``1/h`` partial amplitudes, a linear
    attack, exponential decay and a short linear release after its offset,
    scaled by ``velocity / 127``. Notes never exceed ``max_polyphony`` and
    never overlap on the same pitch. White noise is added before the whole
    signal is normalized to a peak of 0.9.
    """
    cfg = config or SynthConfig()
    rng = np.random.default_rng(cfg.seed)
    notes = _draw_notes(cfg, rng)
    n_samples = int(round(cfg.duration_s * cfg.sample_rate))
    audio = np.zeros(n_samples)
    for note in notes:
        _render(note, cfg, rng.uniform(0, 2 * np.pi, cfg.harmonics), audio)
    audio += cfg.noise_level * rng.standard_normal(n_samples)
    peak = np.max(np.abs(audio))
    if peak > 0:
        audio *= PEAK / peak
    return AudioChunk(audio, cfg.sample_rate), sort_notes(notes)

"""Audio to notes: frontend, model and decoder wired together."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .decoder import DecoderConfig, DecoderState, NoteEvent, decode_outputs, finalize, sort_notes, step
from .errors import UnsupportedConfigurationError
from .frontend import AudioChunk, FeatureStream, MelFilterbank, StftConfig, compute_features
from .model import CausalCRNN

DEFAULT_CHUNK = 160


@dataclass
class FrameTiming:
    """Wall-clock cost of each emitted frame, in milliseconds."""

    inference_ms: list[float] = field(default_factory=list)
    decode_ms: list[float] = field(default_factory=list)
    # Time from the push that completed the frame's window to its decoding.
    emission_ms: list[float] = field(default_factory=list)

    def summary(self) -> dict:
        out = {"n_frames": len(self.inference_ms)}
        for name in ("inference_ms", "decode_ms", "emission_ms"):
            values = np.asarray(getattr(self, name))
            if values.size:
                out[name] = {"mean": float(values.mean()), "p50": float(np.median(values)),
                             "p95": float(np.percentile(values, 95)), "max": float(values.max())}
        return out


def check_streamable(model: CausalCRNN) -> None:
    cfg = model.config
    if cfg.se_enabled:
        raise UnsupportedConfigurationError(
            "streaming refused: squeeze-and-excitation pools over the whole excerpt, so "
            "outputs would depend on future frames (causality contract)")
    if not cfg.causal:
        raise UnsupportedConfigurationError(
            "streaming refused: centered convolutions read future frames (causality contract)")


def transcribe_stream(audio: AudioChunk, stft: StftConfig, model: CausalCRNN,
                      decoder: DecoderConfig, chunk_size: int = DEFAULT_CHUNK,
                      timing: FrameTiming | None = None) -> list[NoteEvent]:
    """Feed ``audio`` in chunks and decode every frame as soon as it exists."""
    check_streamable(model)
    stream = FeatureStream(stft, MelFilterbank.create(stft.fft_size, stft.sample_rate))
    state = model.new_state()
    dec = DecoderState(decoder, model.config.n_pitches)
    notes: list[NoteEvent] = []
    samples = audio.samples
    for start in range(0, samples.size, chunk_size):
        pushed = time.perf_counter()
        for frame in stream.push_samples(AudioChunk(samples[start:start + chunk_size],
                                                    audio.sample_rate)):
            t0 = time.perf_counter()
            outputs = model.forward_step(state, frame.values)
            t1 = time.perf_counter()
            notes.extend(step(dec, outputs, frame.index))
            t2 = time.perf_counter()
            if timing is not None:
                timing.inference_ms.append(1000.0 * (t1 - t0))
                timing.decode_ms.append(1000.0 * (t2 - t1))
                timing.emission_ms.append(1000.0 * (t2 - pushed))
    notes.extend(finalize(dec))
    return sort_notes(notes)


def transcribe_batch(audio: AudioChunk, stft: StftConfig, model: CausalCRNN,
                     decoder: DecoderConfig) -> list[NoteEvent]:
    features = compute_features(audio.samples, stft)
    if features.shape[0] == 0:
        return []
    return sort_notes(decode_outputs(model.forward_batch(features), decoder))

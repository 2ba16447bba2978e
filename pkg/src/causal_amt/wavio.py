"""Strict mono 16 kHz WAV reading and writing."""

from __future__ import annotations

import warnings

import numpy as np
from scipy.io import wavfile

from .errors import InvalidInputError, WavFormatError
from .frontend import SAMPLE_RATE, AudioChunk


def read_wav(path) -> AudioChunk:
    """Read a mono 16 kHz PCM16 or float32 WAV file.

    PCM16 is scaled by 1/32768. Any other channel count, rate or sample
    format raises :class:`WavFormatError` naming the offending property.
    """
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", wavfile.WavFileWarning)
            rate, data = wavfile.read(path)
    except OSError as exc:
        raise InvalidInputError(f"cannot read {path}: {exc.strerror or exc}") from exc
    except (ValueError, EOFError) as exc:
        raise WavFormatError(f"{path}: not a readable RIFF/WAVE file ({exc})") from exc
    if data.ndim != 1:
        raise WavFormatError(f"{path}: channels={data.shape[1]}, expected mono")
    if rate != SAMPLE_RATE:
        raise WavFormatError(f"{path}: sample rate={rate} Hz, expected {SAMPLE_RATE} Hz")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise WavFormatError(
            f"{path}: sample format={data.dtype}, expected PCM16 (int16) or IEEE float32")
    if not np.all(np.isfinite(samples)):
        raise WavFormatError(f"{path}: samples contain non-finite values")
    return AudioChunk(samples, rate)


def write_wav(path, samples, sample_rate: int = SAMPLE_RATE, sample_format: str = "float32"):
    samples = np.asarray(samples, dtype=np.float64)
    if sample_format == "float32":
        data = samples.astype(np.float32)
    elif sample_format == "pcm16":
        data = np.clip(np.round(samples * 32768.0), -32768, 32767).astype(np.int16)
    else:
        raise WavFormatError(f"unsupported sample format {sample_format!r}")
    wavfile.write(path, sample_rate, data)

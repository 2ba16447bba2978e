"""Streaming log-mel frontend with explicit window-delay accounting.

Frame ``t`` has its reference point at sample ``t * hop``. A window with
delay ``n_s`` covers samples ``[t*hop - (L - n_s), t*hop + n_s)``, so the
frame can only be computed once sample ``t*hop + n_s - 1`` has arrived. A
centered Hann window is the special case ``n_s = L / 2``.

Batch and streaming paths share :func:`analyze_segment`, which processes
one frame at a time, so both produce bit-identical features.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, InvalidSpecError, ShapeMismatchError

SAMPLE_RATE = 16000
LOG_FLOOR = 1e-10

WINDOW_FAMILIES = ("centered_hann", "shifted_hann", "asymmetric")

# Main lobe half-width of a length-L Hann window, in DFT bins. Used to bound
# the main lobe of windows whose response has no nearby null.
_HANN_MAINLOBE_HALF_WIDTH = 2.0


@dataclass(frozen=True)
class WindowSpec:
    family: str = "asymmetric"
    length: int = 2048
    delay: int = 160

    def __post_init__(self):
        if self.family not in WINDOW_FAMILIES:
            raise InvalidSpecError(
                f"unknown window family {self.family!r}; expected one of {WINDOW_FAMILIES}")
        if self.length <= 0 or self.length % 2:
            raise InvalidSpecError(f"window length must be positive and even, got {self.length}")
        if self.family != "centered_hann" and not 0 < self.delay <= self.length:
            raise InvalidSpecError(
                f"window delay must lie in (0, {self.length}], got {self.delay}")

    @property
    def effective_delay(self) -> int:
        """Samples the window extends past its reference point."""
        if self.family == "centered_hann":
            return self.length // 2
        return self.delay


@dataclass(frozen=True)
class StftConfig:
    window: WindowSpec = field(default_factory=WindowSpec)
    hop: int = 160
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.hop <= 0 or self.hop > self.window.length:
            raise ConfigurationError(
                f"hop must lie in (0, {self.window.length}], got {self.hop}")
        if self.sample_rate != SAMPLE_RATE:
            raise ConfigurationError(f"sample rate must be {SAMPLE_RATE} Hz, got {self.sample_rate}")

    @property
    def fft_size(self) -> int:
        return self.window.length

    @property
    def frame_rate(self) -> float:
        return self.sample_rate / self.hop

    def n_frames(self, n_samples: int) -> int:
        """Number of frames whose window end has arrived after ``n_samples``."""
        delay = self.window.effective_delay
        if n_samples < delay:
            return 0
        return (n_samples - delay) // self.hop + 1


@dataclass(frozen=True)
class AudioChunk:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(samples)):
            raise ConfigurationError("audio samples must be finite")
        object.__setattr__(self, "samples", samples)


@dataclass(frozen=True)
class FeatureFrame:
    index: int
    reference_time: float
    values: np.ndarray


def _periodic_hann(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def make_window(spec: WindowSpec) -> np.ndarray:
    """Window coefficients for ``spec``.

    The asymmetric window rises over ``L - n_s`` samples (first half of a
    periodic Hann of length ``2 (L - n_s)``) and falls over ``n_s`` samples
    (second half of a periodic Hann of length ``2 n_s``). With
    ``n_s = L / 2`` both halves come from the same Hann and the result equals
    the periodic Hann exactly.
    """
    if spec.family in ("centered_hann", "shifted_hann"):
        return _periodic_hann(spec.length)
    rise = spec.length - spec.delay
    fall = spec.delay
    return np.concatenate([_periodic_hann(2 * rise)[:rise], _periodic_hann(2 * fall)[fall:]])


def window_delay_ms(spec: WindowSpec, sample_rate: int = SAMPLE_RATE) -> float:
    return 1000.0 * spec.effective_delay / sample_rate


def spectrum(segment: np.ndarray, window: np.ndarray) -> np.ndarray:
    """Power spectrum (``L/2 + 1`` bins) of one windowed segment."""
    segment = np.asarray(segment, dtype=np.float64)
    if segment.shape != window.shape:
        raise ShapeMismatchError(
            f"segment length {segment.shape} does not match window length {window.shape}")
    coeffs = np.fft.rfft(segment * window)
    return coeffs.real * coeffs.real + coeffs.imag * coeffs.imag


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(n_mels: int = 229, fmin: float = 30.0,
                           fmax: float = 8000.0) -> np.ndarray:
    """Center frequency in Hz of each triangular mel band."""
    return _mel_to_hz(np.linspace(_hz_to_mel(fmin), _hz_to_mel(fmax), n_mels + 2))[1:-1]


def mel_bin_position(freq_hz, n_mels: int = 229, fmin: float = 30.0,
                     fmax: float = 8000.0) -> np.ndarray:
    """Fractional band index of ``freq_hz`` (band ``i`` is centered at ``i``)."""
    lo, hi = _hz_to_mel(fmin), _hz_to_mel(fmax)
    return (_hz_to_mel(np.asarray(freq_hz, dtype=np.float64)) - lo) / ((hi - lo) / (n_mels + 1)) - 1.0


@dataclass(frozen=True, eq=False)
class MelFilterbank:
    """Triangular HTK-mel filterbank without area normalization.

    Projection is done through a padded sparse layout (each row keeps only
    its contiguous support), accumulated bin by bin in a fixed order.
    """

    n_mels: int
    fmin: float
    fmax: float
    matrix: np.ndarray
    _index: np.ndarray = field(repr=False)
    _weight: np.ndarray = field(repr=False)

    @classmethod
    def create(cls, n_fft: int = 2048, sample_rate: int = SAMPLE_RATE, n_mels: int = 229,
               fmin: float = 30.0, fmax: float = 8000.0) -> "MelFilterbank":
        if not 0 <= fmin < fmax <= sample_rate / 2:
            raise InvalidSpecError(f"need 0 <= fmin < fmax <= Nyquist, got {fmin}, {fmax}")
        n_bins = n_fft // 2 + 1
        freqs = np.arange(n_bins) * sample_rate / n_fft
        edges = _mel_to_hz(np.linspace(_hz_to_mel(fmin), _hz_to_mel(fmax), n_mels + 2))
        lo, center, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
        rising = (freqs[None, :] - lo) / (center - lo)
        falling = (hi - freqs[None, :]) / (hi - center)
        matrix = np.maximum(0.0, np.minimum(rising, falling))
        if np.any(matrix.max(axis=1) <= 0.0):
            empty = np.flatnonzero(matrix.max(axis=1) <= 0.0)
            raise InvalidSpecError(f"mel rows {empty.tolist()} cover no FFT bin")

        supports = [np.flatnonzero(row) for row in matrix]
        width = max(len(s) for s in supports)
        index = np.zeros((n_mels, width), dtype=np.intp)
        weight = np.zeros((n_mels, width))
        for m, support in enumerate(supports):
            index[m, :len(support)] = support
            weight[m, :len(support)] = matrix[m, support]
        matrix.setflags(write=False)
        return cls(n_mels, float(fmin), float(fmax), matrix, index, weight)

    @property
    def n_bins(self) -> int:
        return self.matrix.shape[1]

    def project(self, power: np.ndarray) -> np.ndarray:
        # Works on (..., n_bins); the accumulation order is per-element and
        # independent of leading dimensions.
        gathered = power[..., self._index]
        acc = self._weight[:, 0] * gathered[..., 0]
        for j in range(1, self._index.shape[1]):
            acc = acc + self._weight[:, j] * gathered[..., j]
        return acc


def mel_project(power: np.ndarray, filterbank: MelFilterbank) -> np.ndarray:
    """Log-mel values ``ln(max(filterbank @ power, 1e-10))``."""
    power = np.asarray(power, dtype=np.float64)
    if power.shape[-1] != filterbank.n_bins:
        raise ShapeMismatchError(
            f"spectrum has {power.shape[-1]} bins, filterbank expects {filterbank.n_bins}")
    return np.log(np.maximum(filterbank.project(power), LOG_FLOOR))


def analyze_segment(segment: np.ndarray, window: np.ndarray,
                    filterbank: MelFilterbank) -> np.ndarray:
    return mel_project(spectrum(segment, window), filterbank)


def _magnitude_response(window: np.ndarray, pad: int) -> np.ndarray:
    window = np.asarray(window, dtype=np.float64)
    if not np.any(window):
        raise InvalidSpecError("window is all zeros")
    mag = np.abs(np.fft.rfft(window, len(window) * pad))
    return mag / mag.max()


def _mainlobe_edge(mag: np.ndarray, pad: int) -> int:
    # First local minimum of the response, but never beyond the Hann main-lobe
    # half-width: windows with a short taper (asymmetric) decay without nulls
    # and would otherwise swallow their own leakage into the "main lobe".
    limit = min(int(round(_HANN_MAINLOBE_HALF_WIDTH * pad)), len(mag) - 1)
    i = 1
    while i < limit and mag[i + 1] < mag[i]:
        i += 1
    return i


def sidelobe_level_db(window: np.ndarray, pad: int = 16) -> float:
    """Highest response outside the main lobe, in dB relative to its peak.

    ``pad`` is the zero-padding factor of the FFT (at least 8).
    """
    if pad < 8:
        raise ConfigurationError(f"zero-padding factor must be >= 8, got {pad}")
    mag = _magnitude_response(window, pad)
    edge = _mainlobe_edge(mag, pad)
    peak = mag[edge:].max()
    return float(20.0 * np.log10(max(peak, 1e-300)))


def mainlobe_width_bins(window: np.ndarray, pad: int = 16) -> float:
    """Two-sided main-lobe width in DFT bins of the unpadded window."""
    mag = _magnitude_response(window, pad)
    return 2.0 * _mainlobe_edge(mag, pad) / pad


class FeatureStream:
    """Incremental log-mel extraction.

    Samples may arrive in chunks of any size; frames are returned as soon as
    their window end has arrived. Only the samples still needed by future
    frames are retained.
    """

    def __init__(self, config: StftConfig | None = None,
                 filterbank: MelFilterbank | None = None):
        self.config = config or StftConfig()
        self.filterbank = filterbank or MelFilterbank.create(self.config.fft_size,
                                                             self.config.sample_rate)
        if self.filterbank.n_bins != self.config.fft_size // 2 + 1:
            raise ConfigurationError("filterbank does not match the FFT size")
        self.window = make_window(self.config.window)
        self.reset()

    def reset(self):
        self._buffer = np.zeros(0)
        self._buffer_start = 0
        self._n_received = 0
        self._next_frame = 0

    @property
    def n_received(self) -> int:
        return self._n_received

    @property
    def next_frame(self) -> int:
        return self._next_frame

    def push_samples(self, chunk) -> list[FeatureFrame]:
        if isinstance(chunk, AudioChunk):
            if chunk.sample_rate != self.config.sample_rate:
                raise ConfigurationError(
                    f"chunk sample rate {chunk.sample_rate} Hz does not match stream "
                    f"rate {self.config.sample_rate} Hz")
            samples = chunk.samples
        else:
            samples = AudioChunk(chunk).samples
        if samples.size == 0:
            return []

        self._buffer = np.concatenate([self._buffer, samples])
        self._n_received += samples.size

        cfg = self.config
        length, delay = cfg.fft_size, cfg.window.effective_delay
        frames = []
        while self._next_frame * cfg.hop + delay <= self._n_received:
            t = self._next_frame
            end = t * cfg.hop + delay
            start = end - length
            segment = np.zeros(length)
            lo = max(start, self._buffer_start)
            segment[lo - start:] = self._buffer[lo - self._buffer_start:end - self._buffer_start]
            values = analyze_segment(segment, self.window, self.filterbank)
            frames.append(FeatureFrame(t, t * cfg.hop / cfg.sample_rate, values))
            self._next_frame += 1

        keep_from = self._next_frame * cfg.hop + delay - length
        if keep_from > self._buffer_start:
            self._buffer = self._buffer[keep_from - self._buffer_start:]
            self._buffer_start = keep_from
        return frames


def push_samples(stream: FeatureStream, chunk) -> list[FeatureFrame]:
    return stream.push_samples(chunk)


def compute_features(samples, config: StftConfig | None = None,
                     filterbank: MelFilterbank | None = None) -> np.ndarray:
    """Log-mel matrix ``(n_frames, n_mels)`` for a complete signal."""
    config = config or StftConfig()
    filterbank = filterbank or MelFilterbank.create(config.fft_size, config.sample_rate)
    samples = AudioChunk(samples).samples
    window = make_window(config.window)
    length, delay = config.fft_size, config.window.effective_delay
    n_frames = config.n_frames(samples.size)
    padded = np.concatenate([np.zeros(length - delay), samples])
    out = np.empty((n_frames, filterbank.n_mels))
    for t in range(n_frames):
        out[t] = analyze_segment(padded[t * config.hop:t * config.hop + length], window,
                                 filterbank)
    return out

"""Latency budget: buffering, window delay, inference, decoding, block waits."""

from __future__ import annotations

from dataclasses import asdict, dataclass

from .errors import ConfigurationError
from .frontend import StftConfig, window_delay_ms
from .model import ModelConfig


@dataclass(frozen=True)
class LatencyBudget:
    """Worst-case delay components in milliseconds.

    ``buffer_ms`` is the wait for the next frame boundary (one hop),
    ``window_ms`` the window's reach past its reference point and
    ``blockwise_penalty_ms`` the block that whole-excerpt operations must
    collect before emitting anything. ``inference_ms`` and ``decode_ms`` are
    measured per frame and are the only wall-clock-dependent fields.
    """

    buffer_ms: float
    window_ms: float
    inference_ms: float
    decode_ms: float
    blockwise_penalty_ms: float

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not value >= 0:
                raise ConfigurationError(f"{name} must be >= 0, got {value}")

    @property
    def total_ms(self) -> float:
        return (self.buffer_ms + self.window_ms + self.inference_ms + self.decode_ms
                + self.blockwise_penalty_ms)

    def as_dict(self) -> dict:
        return {
            "static": {"buffer_ms": self.buffer_ms, "window_ms": self.window_ms,
                       "blockwise_penalty_ms": self.blockwise_penalty_ms},
            "measured": {"inference_ms": self.inference_ms, "decode_ms": self.decode_ms},
            "total_ms": self.total_ms,
        }


def latency_budget(stft: StftConfig, model: ModelConfig, inference_ms: float,
                   decode_ms: float = 0.0) -> LatencyBudget:
    blockwise = 1000.0 * model.se_block_samples / stft.sample_rate if model.se_enabled else 0.0
    return LatencyBudget(
        buffer_ms=1000.0 * stft.hop / stft.sample_rate,
        window_ms=window_delay_ms(stft.window, stft.sample_rate),
        inference_ms=float(inference_ms),
        decode_ms=float(decode_ms),
        blockwise_penalty_ms=blockwise,
    )

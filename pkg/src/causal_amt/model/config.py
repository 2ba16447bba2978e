from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .._serde import from_dict, to_dict
from ..errors import ConfigurationError

SHARE_FRACTIONS = (0.0, 0.25, 0.5, 1.0)


@dataclass(frozen=True)
class ModelConfig:
    """Topology of the convolutional-recurrent transcriber.

    Every acoustic stack has ``n_blocks`` depthwise-separable blocks; the first
    ``share_fraction * n_blocks`` of them are computed once and shared by all
    stacks. ``causal`` pads convolutions on the past side only.
    ``se_enabled`` adds squeeze-and-excitation after each block, which pools
    over the whole excerpt and therefore breaks causality regardless of
    ``causal``.
    """

    n_blocks: int = 4
    channels: tuple[int, ...] = (16, 16, 32, 32)
    kernel_time: int = 3
    kernel_freq: int = 3
    causal: bool = True
    se_enabled: bool = False
    se_reduction: int = 4
    se_block_samples: int = 160000
    share_fraction: float = 0.0
    separate_offset_stack: bool = False
    velocity_conditioning: bool = True
    with_velocity: bool = True
    embed_units: int = 64
    recurrent_units: int = 48
    freq_pool: int = 2
    batch_norm: bool = True
    n_pitches: int = 88
    n_mels: int = 229

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "share_fraction", float(self.share_fraction))
        if self.n_blocks < 0 or len(self.channels) != self.n_blocks:
            raise ConfigurationError(
                f"need one channel count per block: n_blocks={self.n_blocks}, "
                f"channels={self.channels}")
        if any(c <= 0 for c in self.channels):
            raise ConfigurationError(f"channel counts must be positive: {self.channels}")
        if self.kernel_time < 1 or self.kernel_freq < 1 or self.kernel_freq % 2 == 0:
            raise ConfigurationError("kernel_time must be >= 1 and kernel_freq odd")
        if not self.causal and self.kernel_time % 2 == 0:
            raise ConfigurationError("a centered (non-causal) time kernel must have odd size")
        if self.share_fraction not in SHARE_FRACTIONS:
            raise ConfigurationError(
                f"share_fraction must be one of {SHARE_FRACTIONS}, got {self.share_fraction}")
        if (Fraction(self.share_fraction) * self.n_blocks).denominator != 1:
            raise ConfigurationError(
                f"share_fraction {self.share_fraction} of {self.n_blocks} blocks is not integral")
        if self.velocity_conditioning and not self.with_velocity:
            raise ConfigurationError("velocity_conditioning requires the velocity head")
        if min(self.embed_units, self.recurrent_units) < 0 or self.freq_pool < 1:
            raise ConfigurationError("embed_units/recurrent_units must be >= 0, freq_pool >= 1")
        if self.n_pitches < 1 or self.n_mels < 1 or self.se_reduction < 1:
            raise ConfigurationError("n_pitches, n_mels and se_reduction must be positive")
        if self.freq_bins()[-1] < 1:
            raise ConfigurationError(
                f"{self.n_blocks} pooling stages of {self.freq_pool} exhaust {self.n_mels} mel bins")

    @property
    def n_shared(self) -> int:
        return int(Fraction(self.share_fraction) * self.n_blocks)

    @property
    def stacks(self) -> tuple[str, ...]:
        names = ["onset", "frame"]
        if self.with_velocity:
            names.append("velocity")
        if self.separate_offset_stack:
            names.append("offset")
        return tuple(names)

    @property
    def heads(self) -> tuple[str, ...]:
        """Heads in evaluation order (conditioning sources come first)."""
        names = ["velocity"] if self.with_velocity else []
        return tuple(names + ["onset", "frame", "offset"])

    @property
    def is_streamable(self) -> bool:
        return self.causal and not self.se_enabled

    def freq_bins(self) -> list[int]:
        """Frequency extent entering each block, plus the final extent."""
        bins = [self.n_mels]
        for _ in range(self.n_blocks):
            bins.append(bins[-1] // self.freq_pool)
        return bins

    def block_channels(self) -> list[tuple[int, int]]:
        ins = (1,) + self.channels[:-1]
        return list(zip(ins, self.channels))

    @property
    def flat_features(self) -> int:
        last = self.channels[-1] if self.n_blocks else 1
        return last * self.freq_bins()[-1]

    @property
    def stack_features(self) -> int:
        return self.embed_units if self.embed_units else self.flat_features

    def head_inputs(self, head: str) -> int:
        base = self.stack_features
        if head == "onset" and self.velocity_conditioning:
            return base + self.n_pitches
        if head == "offset" and not self.separate_offset_stack:
            return base + 2 * self.n_pitches
        return base

    def to_dict(self) -> dict:
        return to_dict(self)

    @classmethod
    def from_dict(cls, data) -> "ModelConfig":
        return from_dict(cls, data)


def receptive_field(config: ModelConfig) -> tuple[int, int]:
    """Convolutional receptive field as ``(past_frames, future_frames)``.

    Recurrent layers and squeeze-and-excitation are not included: the former
    reach arbitrarily far into the past, the latter over the whole excerpt.
    """
    span = config.n_blocks * (config.kernel_time - 1)
    if config.causal:
        return span, 0
    return span // 2, span // 2

from __future__ import annotations

import math
from dataclasses import dataclass

from .config import ModelConfig


@dataclass(frozen=True)
class FlopReport:
    """Multiply-add counts by layer group for ``n_frames`` frames."""

    n_frames: int
    conv: int
    se: int
    embed: int
    recurrent: int
    head: int

    @property
    def total(self) -> int:
        return self.conv + self.se + self.embed + self.recurrent + self.head

    def as_dict(self) -> dict:
        return {"n_frames": self.n_frames, "conv": self.conv, "se": self.se,
                "embed": self.embed, "recurrent": self.recurrent, "head": self.head,
                "total": self.total}


def _n_frames(duration_s: float, frame_rate: float) -> int:
    # Round away float noise (3.0 * 100.0 must give 300, not 301).
    return math.ceil(round(duration_s * frame_rate, 9))


def count_flops(config: ModelConfig, duration_s: float = 3.0,
                frame_rate: float = 100.0) -> FlopReport:
    """Analytic multiply-add count for ``ceil(duration_s * frame_rate)`` frames.

    Shared blocks are counted once, unshared blocks once per acoustic stack.
    Squeeze-and-excitation adds per-frame pooling and rescaling plus its two
    small dense layers once per excerpt.
    """
    cfg = config
    frames = _n_frames(duration_s, frame_rate)
    bins = cfg.freq_bins()
    kernel = cfg.kernel_time * cfg.kernel_freq
    n_stacks = len(cfg.stacks)

    conv = se = 0
    for i, (c_in, c_out) in enumerate(cfg.block_channels()):
        copies = 1 if i < cfg.n_shared else n_stacks
        per_frame = bins[i] * c_in * kernel + bins[i] * c_in * c_out
        conv += copies * frames * per_frame
        if cfg.se_enabled:
            reduced = max(1, c_out // cfg.se_reduction)
            se += copies * (frames * 2 * bins[i] * c_out + 2 * c_out * reduced)

    embed = n_stacks * frames * cfg.flat_features * cfg.embed_units
    recurrent = head = 0
    hidden = cfg.recurrent_units
    for name in cfg.heads:
        n_in = cfg.head_inputs(name)
        if hidden:
            recurrent += frames * 3 * hidden * (n_in + hidden)
            n_in = hidden
        head += frames * n_in * cfg.n_pitches
    return FlopReport(frames, conv, se, embed, recurrent, head)

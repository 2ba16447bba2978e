"""Inference for the convolutional-recurrent transcriber.

``forward_batch`` processes a whole excerpt; ``forward_step`` consumes one
mel frame at a time from a :class:`StreamingState`. For streamable configs
(causal convolutions, no squeeze-and-excitation) the two agree bit for bit
because both go through the same elementwise kernels in :mod:`._ops`.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidInputError, ShapeMismatchError, UnsupportedConfigurationError
from . import _ops
from .config import ModelConfig
from .weights import WeightStore, layer_specs

BN_EPS = 1e-5


@dataclass(frozen=True)
class HeadOutputs:
    """Sigmoid outputs per head, shaped ``(T, n_pitches)`` or ``(n_pitches,)``."""

    onset: np.ndarray
    frame: np.ndarray
    offset: np.ndarray
    velocity: np.ndarray | None = None

    def row(self, t: int) -> "HeadOutputs":
        vel = None if self.velocity is None else self.velocity[t]
        return HeadOutputs(self.onset[t], self.frame[t], self.offset[t], vel)

    def arrays(self) -> dict[str, np.ndarray]:
        out = {"onset": self.onset, "frame": self.frame, "offset": self.offset}
        if self.velocity is not None:
            out["velocity"] = self.velocity
        return out


@dataclass
class StreamingState:
    fifos: dict[str, deque] = field(default_factory=dict)
    hidden: dict[str, np.ndarray] = field(default_factory=dict)
    n_frames: int = 0


@dataclass(frozen=True)
class _Block:
    depthwise: np.ndarray
    depthwise_bias: np.ndarray
    pointwise: np.ndarray
    pointwise_bias: np.ndarray
    se: tuple | None


def _fold(weights: WeightStore, prefix: str, batch_norm: bool):
    if not batch_norm:
        bias = weights[f"{prefix}.bias"].astype(np.float64)
        return np.ones_like(bias), bias
    gamma, beta, mean, var = (weights[f"{prefix}.bn.{p}"].astype(np.float64)
                              for p in ("gamma", "beta", "mean", "var"))
    scale = gamma / np.sqrt(var + BN_EPS)
    return scale, beta - mean * scale


def validate_weights(config: ModelConfig, weights: WeightStore) -> None:
    expected = layer_specs(config)
    expected_names = {s.name for s in expected}
    for spec in expected:
        if spec.name not in weights:
            raise ShapeMismatchError(f"layer {spec.name!r} missing; expected shape {spec.shape}")
        actual = weights[spec.name].shape
        if actual != spec.shape:
            raise ShapeMismatchError(
                f"layer {spec.name!r}: expected shape {spec.shape}, got {actual}")
        if not np.all(np.isfinite(weights[spec.name])):
            raise InvalidInputError(f"layer {spec.name!r} contains non-finite values")
    extra = [n for n in weights.names if n not in expected_names]
    if extra:
        raise ShapeMismatchError(f"unexpected layers for this config: {extra}")


class CausalCRNN:
    """Immutable model built from a config and matching weights."""

    def __init__(self, config: ModelConfig, weights: WeightStore):
        validate_weights(config, weights)
        self.config = config
        cfg = config

        def f64(name):
            return weights[name].astype(np.float64)

        self._shift = f64("input_norm.shift")
        self._scale = f64("input_norm.scale")
        self._blocks: dict[str, _Block] = {}
        prefixes = [f"shared.block{i}" for i in range(cfg.n_shared)]
        prefixes += [f"{s}.block{i}" for s in cfg.stacks for i in range(cfg.n_shared, cfg.n_blocks)]
        for prefix in prefixes:
            dw_scale, dw_bias = _fold(weights, f"{prefix}.depthwise", cfg.batch_norm)
            pw_scale, pw_bias = _fold(weights, f"{prefix}.pointwise", cfg.batch_norm)
            se = None
            if cfg.se_enabled:
                se = tuple(f64(f"{prefix}.se.{p}") for p in
                           ("reduce.weight", "reduce.bias", "expand.weight", "expand.bias"))
            self._blocks[prefix] = _Block(
                f64(f"{prefix}.depthwise.weight") * dw_scale, dw_bias,
                f64(f"{prefix}.pointwise.weight") * pw_scale[None, :], pw_bias, se)
        self._dense = {n: f64(n) for n in weights.names
                       if ".embed." in n or ".gru." in n or ".out." in n}
        for arr in list(self._dense.values()) + [self._shift, self._scale]:
            arr.setflags(write=False)

    # -- shared pieces -------------------------------------------------

    def _block_prefixes(self, stack: str) -> list[str]:
        cfg = self.config
        return [f"{stack}.block{i}" for i in range(cfg.n_shared, cfg.n_blocks)]

    def _block_tail(self, y: np.ndarray, block: _Block) -> np.ndarray:
        y = _ops.hard_swish(y + block.depthwise_bias)
        y = _ops.hard_swish(_ops.det_matmul(y, block.pointwise) + block.pointwise_bias)
        if block.se is not None:
            w1, b1, w2, b2 = block.se
            pooled = y.mean(axis=tuple(range(y.ndim - 1)))
            excite = _ops.hard_sigmoid(np.maximum(pooled @ w1 + b1, 0.0) @ w2 + b2)
            y = y * excite
        return _ops.freq_pool(y, self.config.freq_pool)

    def _embed(self, y: np.ndarray, stack: str) -> np.ndarray:
        flat = y.reshape(*y.shape[:-2], y.shape[-2] * y.shape[-1])
        if not self.config.embed_units:
            return flat
        w, b = self._dense[f"{stack}.embed.weight"], self._dense[f"{stack}.embed.bias"]
        return _ops.hard_swish(_ops.det_matmul(flat, w) + b)

    def _head_input(self, head: str, feats: dict, probs: dict) -> np.ndarray:
        cfg = self.config
        if head == "onset" and cfg.velocity_conditioning:
            return np.concatenate([feats["onset"], probs["velocity"]], axis=-1)
        if head == "offset" and not cfg.separate_offset_stack:
            return np.concatenate([feats["frame"], probs["onset"], probs["frame"]], axis=-1)
        return feats[head]

    def _gru_cell(self, head: str, gx: np.ndarray, h: np.ndarray) -> np.ndarray:
        units = self.config.recurrent_units
        gh = _ops.det_matmul(h, self._dense[f"{head}.gru.w_hidden"]) + \
            self._dense[f"{head}.gru.b_hidden"]
        reset = _ops.sigmoid(gx[:units] + gh[:units])
        update = _ops.sigmoid(gx[units:2 * units] + gh[units:2 * units])
        cand = _ops.tanh(gx[2 * units:] + reset * gh[2 * units:])
        return (1.0 - update) * cand + update * h

    def _gru_input(self, head: str, inp: np.ndarray) -> np.ndarray:
        return _ops.det_matmul(inp, self._dense[f"{head}.gru.w_input"]) + \
            self._dense[f"{head}.gru.b_input"]

    def _out(self, head: str, h: np.ndarray) -> np.ndarray:
        logits = _ops.det_matmul(h, self._dense[f"{head}.out.weight"]) + \
            self._dense[f"{head}.out.bias"]
        return _ops.sigmoid(logits)

    def _check_input(self, mel: np.ndarray, ndim: int) -> np.ndarray:
        mel = np.asarray(mel, dtype=np.float64)
        if mel.ndim != ndim or mel.shape[-1] != self.config.n_mels:
            raise ShapeMismatchError(
                f"expected mel input with {ndim} dims and {self.config.n_mels} bins, got {mel.shape}")
        if not np.all(np.isfinite(mel)):
            raise InvalidInputError("mel input contains non-finite values")
        return mel

    # -- batch ----------------------------------------------------------

    def _block_batch(self, x: np.ndarray, block: _Block) -> np.ndarray:
        kt = self.config.kernel_time
        before = kt - 1 if self.config.causal else (kt - 1) // 2
        padded = np.pad(x, ((before, kt - 1 - before), (0, 0), (0, 0)))
        return self._block_tail(_ops.depthwise(padded, block.depthwise), block)

    def forward_batch(self, mel) -> HeadOutputs:
        """Outputs for every frame of a ``(T, n_mels)`` excerpt."""
        cfg = self.config
        mel = self._check_input(mel, 2)
        if mel.shape[0] < 1:
            raise ShapeMismatchError("need at least one frame")
        x = ((mel - self._shift) * self._scale)[:, :, None]
        for i in range(cfg.n_shared):
            x = self._block_batch(x, self._blocks[f"shared.block{i}"])
        feats = {}
        for stack in cfg.stacks:
            y = x
            for prefix in self._block_prefixes(stack):
                y = self._block_batch(y, self._blocks[prefix])
            feats[stack] = self._embed(y, stack)

        probs = {}
        for head in cfg.heads:
            inp = self._head_input(head, feats, probs)
            if cfg.recurrent_units:
                gx = self._gru_input(head, inp)
                h = np.zeros(cfg.recurrent_units)
                states = np.empty((mel.shape[0], cfg.recurrent_units))
                for t in range(mel.shape[0]):
                    h = self._gru_cell(head, gx[t], h)
                    states[t] = h
                inp = states
            probs[head] = self._out(head, inp)
        return HeadOutputs(probs["onset"], probs["frame"], probs["offset"], probs.get("velocity"))

    # -- streaming ------------------------------------------------------

    def new_state(self) -> StreamingState:
        cfg = self.config
        if not cfg.is_streamable:
            reason = ("squeeze-and-excitation pools over the whole excerpt"
                      if cfg.se_enabled else "centered convolutions need future frames")
            raise UnsupportedConfigurationError(f"config cannot run in streaming mode: {reason}")
        state = StreamingState()
        bins = cfg.freq_bins()
        channels = cfg.block_channels()
        for prefix in self._blocks:
            i = int(prefix.rsplit("block", 1)[1])
            zero = np.zeros((bins[i], channels[i][0]))
            state.fifos[prefix] = deque([zero] * (cfg.kernel_time - 1), maxlen=cfg.kernel_time - 1)
        for head in cfg.heads:
            if cfg.recurrent_units:
                state.hidden[head] = np.zeros(cfg.recurrent_units)
        return state

    def _block_step(self, x: np.ndarray, block: _Block, fifo: deque) -> np.ndarray:
        window = np.stack(list(fifo) + [x])
        if fifo.maxlen:
            fifo.append(x)
        return self._block_tail(_ops.depthwise(window, block.depthwise)[0], block)

    def forward_step(self, state: StreamingState, frame) -> HeadOutputs:
        """Outputs for the next frame; mutates ``state``."""
        cfg = self.config
        if not cfg.is_streamable:
            self.new_state()  # raises with the reason
        frame = self._check_input(frame, 1)
        x = ((frame - self._shift) * self._scale)[:, None]
        for i in range(cfg.n_shared):
            prefix = f"shared.block{i}"
            x = self._block_step(x, self._blocks[prefix], state.fifos[prefix])
        feats = {}
        for stack in cfg.stacks:
            y = x
            for prefix in self._block_prefixes(stack):
                y = self._block_step(y, self._blocks[prefix], state.fifos[prefix])
            feats[stack] = self._embed(y, stack)

        probs = {}
        for head in cfg.heads:
            inp = self._head_input(head, feats, probs)
            if cfg.recurrent_units:
                state.hidden[head] = self._gru_cell(head, self._gru_input(head, inp),
                                                    state.hidden[head])
                inp = state.hidden[head]
            probs[head] = self._out(head, inp)
        state.n_frames += 1
        return HeadOutputs(probs["onset"], probs["frame"], probs["offset"], probs.get("velocity"))


def build(config: ModelConfig | None, weights: WeightStore) -> CausalCRNN:
    if config is None:
        if weights.config is None:
            raise ShapeMismatchError("weights carry no config; pass one explicitly")
        config = ModelConfig.from_dict(weights.config)
    return CausalCRNN(config, weights)


def forward_batch(model: CausalCRNN, mel) -> HeadOutputs:
    return model.forward_batch(mel)


def forward_step(model: CausalCRNN, state: StreamingState, frame) -> HeadOutputs:
    return model.forward_step(state, frame)

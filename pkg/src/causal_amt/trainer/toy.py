"""A small strictly causal transcriber with hand-written reverse mode.

The network is two (or more) causal depthwise-separable conv blocks shared by
all heads, followed by one affine layer per head with sigmoid outputs. Its
parameter names and shapes are exactly those of the inference model for the
config returned by :meth:`ToyModelConfig.model_config`, so trained weights
load straight into :func:`causal_amt.model.build`.

By default each head weight is one small template shared by all pitches,
read at the pitch's partial positions and scaled by a per-pitch gain (see
:func:`harmonic_basis`). ``head_harmonics=0`` trains a free dense weight.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import sparse

from .._serde import from_dict, to_dict
from ..decoder import MIN_PITCH
from ..errors import ConfigurationError, ShapeMismatchError
from ..frontend import mel_bin_position
from ..labels import LossConfig, TargetMatrices, apply_loss, velocity_mse, weighted_bce
from ..model import ModelConfig, WeightStore, layer_specs
from ..model import _ops

LR_SCHEDULES = ("constant", "cosine")


@dataclass(frozen=True)
class ToyModelConfig:
    channels: tuple[int, ...] = (8, 8)
    kernel_time: int = 3
    kernel_freq: int = 3
    freq_pool: int = 1
    with_velocity: bool = True
    n_pitches: int = 88
    n_mels: int = 229
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    lr_schedule: str = "constant"
    batch_segments: int = 2
    epochs: int = 50
    seed: int = 0
    onset_bias: float = -4.0
    head_harmonics: int = 8
    head_taps: int = 2
    head_grid: int = 2

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if not self.channels:
            raise ConfigurationError("the toy model needs at least one conv block")
        if self.learning_rate <= 0:
            raise ConfigurationError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.head_harmonics < 0 or self.head_taps < 0 or self.head_grid < 1:
            raise ConfigurationError("need head_harmonics >= 0, head_taps >= 0, head_grid >= 1")
        if self.weight_decay < 0:
            raise ConfigurationError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ConfigurationError(f"lr_schedule must be one of {LR_SCHEDULES}")
        if min(self.batch_segments, self.epochs) < 1:
            raise ConfigurationError("batch_segments and epochs must be >= 1")
        self.model_config()  # validates the topology

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            n_blocks=len(self.channels), channels=self.channels,
            kernel_time=self.kernel_time, kernel_freq=self.kernel_freq,
            causal=True, se_enabled=False, share_fraction=1.0,
            separate_offset_stack=True, velocity_conditioning=False,
            with_velocity=self.with_velocity, embed_units=0, recurrent_units=0,
            freq_pool=self.freq_pool, batch_norm=False,
            n_pitches=self.n_pitches, n_mels=self.n_mels)

    def to_dict(self) -> dict:
        return to_dict(self)

    @classmethod
    def from_dict(cls, data) -> "ToyModelConfig":
        return from_dict(cls, data)


def harmonic_basis(config: ToyModelConfig) -> np.ndarray:
    """Interpolation weights ``(n_taps_total, n_bins, n_pitches)`` for template heads.

    Tap ``(m, k)`` of pitch ``p`` reads the final-resolution feature map at
    frequency ``m * f0(p) / head_grid`` shifted by ``k`` bins, linearly
    interpolated, for ``m = 1 .. head_harmonics * head_grid``. A grid of 2
    also samples between partials, where a note an octave down would put
    energy. Positions past the last bin read nothing.
    """
    mc = config.model_config()
    n_bins = mc.freq_bins()[-1]
    pool = mc.freq_pool ** mc.n_blocks
    f0 = 440.0 * 2.0 ** ((MIN_PITCH + np.arange(mc.n_pitches) - 69) / 12.0)
    offsets = np.arange(-config.head_taps, config.head_taps + 1)
    n_partials = config.head_harmonics * config.head_grid
    basis = np.zeros((n_partials, offsets.size, n_bins, mc.n_pitches))
    pitches = np.arange(mc.n_pitches)
    for h in range(n_partials):
        # An average-pooled bin j covers input bins j*pool .. j*pool + pool - 1.
        freq = (h + 1) * f0 / config.head_grid
        pos = (mel_bin_position(freq, mc.n_mels) - (pool - 1) / 2.0) / pool
        for k, off in enumerate(offsets):
            x = np.maximum(pos + off, 0.0)
            lo = np.floor(x).astype(int)
            frac = x - lo
            for idx, w in ((lo, 1.0 - frac), (lo + 1, frac)):
                ok = idx < n_bins
                basis[h, k, idx[ok], pitches[ok]] += w[ok]
    return basis.reshape(-1, n_bins, mc.n_pitches)


def hard_swish_grad(x: np.ndarray) -> np.ndarray:
    return np.where(x < -3.0, 0.0, np.where(x > 3.0, 1.0, (2.0 * x + 3.0) / 6.0))


class ToyModel:
    """Parameters plus batched forward/backward over ``(B, T, n_mels)`` input."""

    def __init__(self, config: ToyModelConfig, params: dict[str, np.ndarray]):
        self.config = config
        self.model_config = config.model_config()
        self.params = params
        self.basis = None
        if config.head_harmonics:
            basis = harmonic_basis(config)
            self.n_bins = basis.shape[1]
            # (taps, bins * pitches), at most two non-zeros per tap and pitch
            self.basis = sparse.csr_matrix(basis.reshape(basis.shape[0], -1))

    @property
    def heads(self) -> tuple[str, ...]:
        return self.model_config.heads

    @property
    def trainable(self) -> list[str]:
        return [n for n in self.params if not n.startswith("input_norm.")]

    @classmethod
    def init(cls, config: ToyModelConfig, seed: int | None = None) -> "ToyModel":
        rng = np.random.default_rng(config.seed if seed is None else seed)
        mc = config.model_config()
        params: dict[str, np.ndarray] = {
            "input_norm.shift": np.zeros(mc.n_mels),
            "input_norm.scale": np.ones(mc.n_mels),
        }
        kt, kf = mc.kernel_time, mc.kernel_freq
        for i, (c_in, c_out) in enumerate(mc.block_channels()):
            p = f"shared.block{i}"
            params[f"{p}.depthwise.weight"] = rng.normal(0, np.sqrt(2.0 / (kt * kf)), (kt, kf, c_in))
            params[f"{p}.depthwise.bias"] = np.zeros(c_in)
            params[f"{p}.pointwise.weight"] = rng.normal(0, np.sqrt(2.0 / c_in), (c_in, c_out))
            params[f"{p}.pointwise.bias"] = np.zeros(c_out)
        n_in = mc.flat_features
        n_taps = config.head_harmonics * config.head_grid * (2 * config.head_taps + 1)
        for head in mc.heads:
            if n_taps:
                params[f"{head}.template"] = rng.normal(0, np.sqrt(1.0 / n_taps),
                                                        (n_taps, mc.channels[-1]))
                params[f"{head}.gain"] = np.ones(mc.n_pitches)
            else:
                params[f"{head}.out.weight"] = rng.normal(0, np.sqrt(1.0 / n_in),
                                                          (n_in, mc.n_pitches))
            bias = config.onset_bias if head in ("onset", "offset") else 0.0
            params[f"{head}.out.bias"] = np.full(mc.n_pitches, bias)
        return cls(config, params)

    def set_input_norm(self, features: np.ndarray) -> None:
        """Standardize each mel bin with statistics of ``features`` ``(N, n_mels)``."""
        self.params["input_norm.shift"] = features.mean(axis=0)
        self.params["input_norm.scale"] = 1.0 / np.maximum(features.std(axis=0), 1e-3)

    # -- forward / backward ------------------------------------------

    def _template_weight(self, head: str) -> np.ndarray:
        template = self.params[f"{head}.template"]
        w = (self.basis.T @ template).reshape(self.n_bins, -1, template.shape[1])
        return w.transpose(0, 2, 1).reshape(-1, w.shape[1])

    def head_weight(self, head: str) -> np.ndarray:
        """Dense ``(n_features, n_pitches)`` weight of ``head``."""
        if self.basis is None:
            return self.params[f"{head}.out.weight"]
        return self._template_weight(head) * self.params[f"{head}.gain"]

    def forward(self, mel: np.ndarray):
        """Returns ``(probabilities by head, cache)`` for ``mel`` shaped ``(B, T, n_mels)``."""
        mc, p = self.model_config, self.params
        if mel.ndim != 3 or mel.shape[-1] != mc.n_mels:
            raise ShapeMismatchError(f"expected (B, T, {mc.n_mels}) input, got {mel.shape}")
        kt, kf = mc.kernel_time, mc.kernel_freq
        pad_f = (kf - 1) // 2
        x = ((mel - p["input_norm.shift"]) * p["input_norm.scale"])[..., None]
        cache = {"blocks": []}
        for i in range(mc.n_blocks):
            pre = f"shared.block{i}"
            n_t, n_f = x.shape[1], x.shape[2]
            xp = np.pad(x, ((0, 0), (kt - 1, 0), (pad_f, kf - 1 - pad_f), (0, 0)))
            k = p[f"{pre}.depthwise.weight"]
            y = np.zeros(x.shape)
            for dt in range(kt):
                for df in range(kf):
                    y += k[dt, df] * xp[:, dt:dt + n_t, df:df + n_f]
            y += p[f"{pre}.depthwise.bias"]
            a = _ops.hard_swish(y)
            z = a @ p[f"{pre}.pointwise.weight"] + p[f"{pre}.pointwise.bias"]
            h = _ops.hard_swish(z)
            cache["blocks"].append((xp, y, a, z, h.shape))
            x = _ops.freq_pool(h, mc.freq_pool)
        flat = x.reshape(*x.shape[:2], -1)
        cache["flat"] = flat
        probs = {}
        for head in mc.heads:
            logits = flat @ self.head_weight(head) + p[f"{head}.out.bias"]
            probs[head] = _ops.sigmoid(logits)
        return probs, cache

    def backward(self, probs: dict, cache: dict, grad_probs: dict) -> dict[str, np.ndarray]:
        """Parameter gradients given ``dL/dprob`` for each head."""
        mc, p = self.model_config, self.params
        grads: dict[str, np.ndarray] = {}
        flat = cache["flat"]
        d_flat = np.zeros(flat.shape)
        flat2 = flat.reshape(-1, flat.shape[-1])
        for head in mc.heads:
            prob = probs[head]
            d_logits = (grad_probs[head] * prob * (1.0 - prob)).reshape(-1, prob.shape[-1])
            d_weight = flat2.T @ d_logits
            grads[f"{head}.out.bias"] = d_logits.sum(axis=0)
            if self.basis is None:
                grads[f"{head}.out.weight"] = d_weight
                weight = p[f"{head}.out.weight"]
            else:
                base = self._template_weight(head)
                gain = p[f"{head}.gain"]
                weight = base * gain
                grads[f"{head}.gain"] = (d_weight * base).sum(axis=0)
                d_base = (d_weight * gain).reshape(self.n_bins, -1, gain.size)
                grads[f"{head}.template"] = self.basis @ d_base.transpose(0, 2, 1).reshape(
                    -1, d_base.shape[1])
            d_flat += (d_logits @ weight.T).reshape(d_flat.shape)

        kt, kf = mc.kernel_time, mc.kernel_freq
        pad_f = (kf - 1) // 2
        c_last = mc.channels[-1]
        dx = d_flat.reshape(*flat.shape[:2], -1, c_last)
        for i in reversed(range(mc.n_blocks)):
            pre = f"shared.block{i}"
            xp, y, a, z, h_shape = cache["blocks"][i]
            factor = mc.freq_pool
            dh = np.zeros(h_shape)
            n_used = dx.shape[2] * factor
            for j in range(factor):
                dh[:, :, j:n_used:factor] = dx / factor
            dz = dh * hard_swish_grad(z)
            c_in, c_out = p[f"{pre}.pointwise.weight"].shape
            grads[f"{pre}.pointwise.weight"] = a.reshape(-1, c_in).T @ dz.reshape(-1, c_out)
            grads[f"{pre}.pointwise.bias"] = dz.sum(axis=(0, 1, 2))
            da = dz @ p[f"{pre}.pointwise.weight"].T
            dy = da * hard_swish_grad(y)
            grads[f"{pre}.depthwise.bias"] = dy.sum(axis=(0, 1, 2))
            k = p[f"{pre}.depthwise.weight"]
            dk = np.zeros(k.shape)
            n_t, n_f = y.shape[1], y.shape[2]
            need_dx = i > 0
            dxp = np.zeros(xp.shape) if need_dx else None
            for dt in range(kt):
                for df in range(kf):
                    window = xp[:, dt:dt + n_t, df:df + n_f]
                    dk[dt, df] = (dy * window).sum(axis=(0, 1, 2))
                    if need_dx:
                        dxp[:, dt:dt + n_t, df:df + n_f] += k[dt, df] * dy
            grads[f"{pre}.depthwise.weight"] = dk
            if need_dx:
                dx = dxp[:, kt - 1:, pad_f:pad_f + n_f]
        return grads

    # -- loss ---------------------------------------------------------

    def loss(self, mel: np.ndarray, targets: list[TargetMatrices], loss: LossConfig,
             want_grad: bool = True):
        """Summed head losses averaged over the batch, and parameter gradients."""
        probs, cache = self.forward(mel)
        total, grad_probs = head_losses(probs, targets, loss)
        if not want_grad:
            return total, None
        return total, self.backward(probs, cache, grad_probs)

    def predict(self, mel: np.ndarray) -> dict[str, np.ndarray]:
        """Head probabilities for one ``(T, n_mels)`` excerpt."""
        probs, _ = self.forward(mel[None])
        return {k: v[0] for k, v in probs.items()}

    def to_weights(self) -> WeightStore:
        mc = self.model_config
        store = WeightStore(config=mc.to_dict())
        for spec in layer_specs(mc):
            if spec.name.endswith(".out.weight"):
                store.add(spec.name, self.head_weight(spec.name.split(".")[0]))
            else:
                store.add(spec.name, self.params[spec.name])
        return store

    @classmethod
    def from_weights(cls, config: ToyModelConfig, weights: WeightStore) -> "ToyModel":
        """Load exported weights; template heads come back as dense heads."""
        return cls(replace(config, head_harmonics=0),
                   {n: t.astype(np.float64) for n, t in weights.items()})


def head_losses(probs: dict, targets: list[TargetMatrices], loss: LossConfig):
    """Total loss and ``dL/dprob`` per head for a batch of segments.

    Onset and offset use ``loss``; the frame head uses unweighted
    cross-entropy and the velocity head masked squared error.
    """
    batch = len(targets)
    grad_probs = {name: np.zeros(v.shape) for name, v in probs.items()}
    total = 0.0
    for b, tgt in enumerate(targets):
        parts = [("onset", apply_loss(loss, probs["onset"][b], tgt.onset)),
                 ("offset", apply_loss(loss, probs["offset"][b], tgt.offset)),
                 ("frame", weighted_bce(probs["frame"][b], tgt.frame, 1.0))]
        if "velocity" in probs:
            parts.append(("velocity", velocity_mse(probs["velocity"][b], tgt.velocity,
                                                   tgt.velocity_mask)))
        for name, res in parts:
            total += res.value / batch
            grad_probs[name][b] += res.gradient / batch
    return total, grad_probs

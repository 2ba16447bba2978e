"""Finite-difference checks of the hand-written gradients.

Derivatives are estimated with the fourth-order central stencil
``(8 (f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))) / 12h`` so that truncation
error stays far below the comparison tolerance even where the loss is
strongly curved (predictions near 0 or 1).
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError
from ..labels import LossConfig, TargetMatrices, apply_loss
from .toy import ToyModel, ToyModelConfig

FD_STEP = 1e-4
REL_FLOOR = 1e-6
KINK_MARGIN = 1e-2
TIE_MARGIN = 2e-3
MAX_FRAMES = 12
MAX_PITCHES = 8


def relative_error(analytic, numeric, floor: float = REL_FLOOR) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale))


def small_config(seed: int = 0, **overrides) -> ToyModelConfig:
    """A toy config sized for finite differences."""
    fields = dict(channels=(2, 3), n_pitches=6, n_mels=8, freq_pool=2, head_harmonics=0,
                  seed=seed, onset_bias=-1.0)
    fields.update(overrides)
    return ToyModelConfig(**fields)


def _random_targets(rng, n_frames: int, n_pitches: int, binary: bool) -> TargetMatrices:
    shape = (n_frames, n_pitches)
    if binary:
        onset = (rng.random(shape) < 0.15).astype(float)
        offset = (rng.random(shape) < 0.15).astype(float)
    else:
        onset, offset = rng.random(shape), rng.random(shape)
    frame = (rng.random(shape) < 0.4).astype(float)
    mask = (rng.random(shape) < 0.3).astype(float)
    return TargetMatrices(onset, offset, frame, rng.random(shape) * mask, mask)


def _window_gap(pred: np.ndarray, tol: int, centers=None) -> float:
    """Smallest gap between the two largest values of the ``2*tol+1`` windows.

    Only windows centered on ``centers`` (a boolean mask) are considered when
    it is given.
    """
    if tol == 0:
        return np.inf
    padded = np.pad(pred, ((tol, tol), (0, 0)), constant_values=-np.inf)
    windows = np.sort(np.lib.stride_tricks.sliding_window_view(padded, 2 * tol + 1, axis=0), -1)
    gaps = windows[..., -1] - windows[..., -2]
    if centers is not None:
        gaps = gaps[centers]
    return float(np.min(gaps)) if gaps.size else np.inf


def _is_smooth(model: ToyModel, mel, targets, loss: LossConfig) -> bool:
    # Finite differences are meaningless across the hard-swish corners, the
    # probability clamp, or a change of window maximum in the tolerant loss.
    probs, cache = model.forward(mel)
    for _, y, _, z, _ in cache["blocks"]:
        for pre in (y, z):
            if np.min(np.abs(np.abs(pre) - 3.0)) < KINK_MARGIN:
                return False
    for prob in probs.values():
        if np.min(prob) < 1e-5 or np.max(prob) > 1 - 1e-5:
            return False
    if loss.kind == "shift_tolerant":
        for head in ("onset", "offset"):
            for b, tgt in enumerate(targets):
                centers = getattr(tgt, head) == 1.0
                if _window_gap(probs[head][b], loss.tol_frames, centers) < TIE_MARGIN:
                    return False
    return True


def _draw_instance(config: ToyModelConfig, loss: LossConfig, rng, n_frames: int, batch: int):
    for _ in range(1000):
        model = ToyModel.init(config, seed=int(rng.integers(2 ** 32)))
        for name in model.trainable:
            values = model.params[name]
            if name.endswith(".bias"):
                model.params[name] = values + rng.normal(0, 0.3, values.shape)
            elif name.endswith((".out.weight", ".template")):
                # Spread the head outputs so window maxima are well separated.
                model.params[name] = values * 4.0
        mel = rng.normal(0, 1.0, (batch, n_frames, config.n_mels))
        binary = loss.kind == "shift_tolerant" or rng.random() < 0.5
        targets = [_random_targets(rng, n_frames, config.n_pitches, binary) for _ in range(batch)]
        if _is_smooth(model, mel, targets, loss):
            return model, mel, targets
    raise ConfigurationError("could not draw a smooth instance for the gradient check")


def central_difference(f, x: np.ndarray, idx, step: float = FD_STEP) -> float:
    """Fourth-order central estimate of ``df/dx[idx]``; restores ``x``."""
    saved = x[idx]
    values = []
    for offset in (step, -step, 2 * step, -2 * step):
        x[idx] = saved + offset
        values.append(f())
    x[idx] = saved
    return (8.0 * (values[0] - values[1]) - (values[2] - values[3])) / (12.0 * step)


def _entries(shape, limit, rng):
    every = list(np.ndindex(shape))
    if limit is None or limit >= len(every):
        return every
    return [every[i] for i in sorted(rng.choice(len(every), limit, replace=False))]


def numeric_gradients(model: ToyModel, mel, targets, loss: LossConfig,
                      step: float = FD_STEP, entries=None) -> dict[str, np.ndarray]:
    """Finite-difference gradients; ``entries`` optionally maps tensor names
    to the indices to probe (others are left as NaN)."""
    grads = {}
    for name in model.trainable:
        param = model.params[name]
        g = np.full(param.shape, np.nan)
        indices = entries[name] if entries is not None else np.ndindex(param.shape)
        for idx in indices:
            g[idx] = central_difference(
                lambda: model.loss(mel, targets, loss, want_grad=False)[0], param, idx, step)
        grads[name] = g
    return grads


def grad_check(config: ToyModelConfig | None = None, loss: LossConfig | None = None,
               seed: int = 0, n_frames: int = MAX_FRAMES, batch: int = 2,
               entries_per_tensor: int | None = None, return_all: bool = False):
    """Largest relative error between analytic and finite-difference gradients.

    Covers every trainable tensor of the toy model: depthwise and pointwise
    weights and biases, hard-swish, the sigmoid heads and the head losses.
    ``entries_per_tensor`` probes a random subset of each tensor instead of
    every entry. With ``return_all`` the per-tensor errors are returned.
    """
    config = config or small_config(seed)
    loss = loss or LossConfig()
    if n_frames > MAX_FRAMES or config.n_pitches > MAX_PITCHES:
        raise ConfigurationError(
            f"gradient checks need T <= {MAX_FRAMES} and at most {MAX_PITCHES} pitches")
    rng = np.random.default_rng(seed)
    model, mel, targets = _draw_instance(config, loss, rng, n_frames, batch)
    _, analytic = model.loss(mel, targets, loss)
    entries = {name: _entries(model.params[name].shape, entries_per_tensor, rng)
               for name in model.trainable}
    numeric = numeric_gradients(model, mel, targets, loss, entries=entries)
    errors = {}
    for name in model.trainable:
        idx = tuple(np.array(entries[name]).T)
        errors[name] = relative_error(analytic[name][idx], numeric[name][idx])
    return errors if return_all else max(errors.values())


def loss_grad_check(loss: LossConfig, seed: int = 0, shape=(MAX_FRAMES, MAX_PITCHES),
                    step: float = FD_STEP) -> float:
    """Relative error of a loss gradient with respect to its predictions."""
    rng = np.random.default_rng(seed)
    if loss.kind == "mse" or (loss.kind == "wbce" and rng.random() < 0.5):
        target = rng.random(shape)
    else:
        target = (rng.random(shape) < 0.2).astype(float)
    for _ in range(1000):
        pred = rng.uniform(0.02, 0.98, shape)
        if (loss.kind != "shift_tolerant"
                or _window_gap(pred, loss.tol_frames, target == 1.0) > TIE_MARGIN):
            break
    else:
        raise ConfigurationError("could not draw a tie-free prediction")
    analytic = apply_loss(loss, pred, target).gradient
    numeric = np.zeros(shape)
    for idx in np.ndindex(shape):
        numeric[idx] = central_difference(
            lambda: apply_loss(loss, pred, target).value, pred, idx, step)
    return relative_error(analytic, numeric)

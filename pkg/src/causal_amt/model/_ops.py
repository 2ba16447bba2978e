"""Elementwise-only kernels with a fixed accumulation order.

Every reduction here is spelled out as a sequence of elementwise numpy
operations whose order depends only on the reduced length, never on how many
leading rows are processed at once. That is what makes the per-frame
streaming path bit-identical to the whole-excerpt batch path; BLAS calls give
no such guarantee.
"""

from __future__ import annotations

import numpy as np

_CHUNK_ELEMENTS = 1 << 21


def _tree_sum(prod: np.ndarray) -> np.ndarray:
    # Pairwise reduction over axis 1 of (rows, n, m).
    while prod.shape[1] > 1:
        n = prod.shape[1]
        half = n // 2
        summed = prod[:, :half] + prod[:, half:2 * half]
        if n % 2:
            summed = np.concatenate([summed, prod[:, 2 * half:]], axis=1)
        prod = summed
    return prod[:, 0]


def det_matmul(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``x @ w`` over the last axis of ``x`` with a row-independent summation order."""
    n, m = w.shape
    lead = x.shape[:-1]
    rows = x.reshape(-1, n)
    out = np.empty((rows.shape[0], m))
    step = max(1, _CHUNK_ELEMENTS // max(1, n * m))
    for start in range(0, rows.shape[0], step):
        block = rows[start:start + step]
        out[start:start + step] = _tree_sum(block[:, :, None] * w[None])
    return out.reshape(*lead, m)


def hard_swish(x: np.ndarray) -> np.ndarray:
    return x * np.clip(x + 3.0, 0.0, 6.0) / 6.0


def hard_sigmoid(x: np.ndarray) -> np.ndarray:
    return np.clip(x + 3.0, 0.0, 6.0) / 6.0


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.ascontiguousarray(x)))


def tanh(x: np.ndarray) -> np.ndarray:
    return np.tanh(np.ascontiguousarray(x))


def freq_pool(x: np.ndarray, factor: int) -> np.ndarray:
    """Average non-overlapping groups of ``factor`` bins along axis -2."""
    if factor == 1:
        return x
    n = (x.shape[-2] // factor) * factor
    acc = x[..., 0:n:factor, :]
    for j in range(1, factor):
        acc = acc + x[..., j:n:factor, :]
    return acc / factor


def depthwise(window: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Depthwise convolution of a time-padded window.

    ``window`` is ``(T + kt - 1, F, C)``; ``kernel`` is ``(kt, kf, C)``.
    Frequency uses symmetric zero padding. Returns ``(T, F, C)``.
    """
    kt, kf, _ = kernel.shape
    n_out = window.shape[0] - kt + 1
    n_freq = window.shape[1]
    pad = (kf - 1) // 2
    padded = np.pad(window, ((0, 0), (pad, kf - 1 - pad), (0, 0)))
    acc = None
    for dt in range(kt):
        for df in range(kf):
            term = kernel[dt, df] * padded[dt:dt + n_out, df:df + n_freq]
            acc = term if acc is None else acc + term
    return acc

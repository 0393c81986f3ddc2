"""Pure-numpy reference implementations of the hot kernels.

Every function here has a numba twin in ``_kernels_numba`` with identical
semantics (same tie-breaking, same padding rules). The numpy versions are
the fallback path and the correctness oracle for the jitted ones.
"""
from __future__ import annotations

import numpy as np


def gaussian_taps(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian kernel, radius ceil(3*sigma)."""
    radius = int(np.ceil(3.0 * sigma))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    taps = np.exp(-0.5 * (xs / sigma) ** 2)
    return taps / taps.sum()


def gaussian_blur(img: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Separable Gaussian blur of an (H, W, C) image with reflect padding."""
    radius = (len(taps) - 1) // 2
    work = img.astype(np.float64)
    # horizontal pass
    padded = np.pad(work, ((0, 0), (radius, radius), (0, 0)), mode="reflect")
    horiz = np.zeros_like(work)
    for j, t in enumerate(taps):
        horiz += t * padded[:, j : j + img.shape[1], :]
    # vertical pass
    padded = np.pad(horiz, ((radius, radius), (0, 0), (0, 0)), mode="reflect")
    out = np.zeros_like(work)
    for j, t in enumerate(taps):
        out += t * padded[j : j + img.shape[0], :, :]
    return out.astype(img.dtype)


def salt_pepper_apply(
    img: np.ndarray, hit: np.ndarray, salt: np.ndarray, lo: np.ndarray, hi: np.ndarray
) -> np.ndarray:
    """Set hit pixel positions to the per-channel extremes.

    ``hit`` and ``salt`` are (H, W) booleans; ``lo``/``hi`` are per-channel
    values. Salt positions get ``hi``, the rest of the hits get ``lo``.
    """
    out = img.copy()
    out[hit & salt] = hi.astype(img.dtype)
    out[hit & ~salt] = lo.astype(img.dtype)
    return out


def topk_keep_mask(scores: np.ndarray, k: int) -> np.ndarray:
    """Boolean mask of the k largest entries per row.

    Ties at the cut keep the lower column index. k >= n_cols keeps all.
    """
    n, m = scores.shape
    if k >= m:
        return np.ones((n, m), dtype=np.bool_)
    order = np.argsort(-scores, axis=1, kind="stable")
    mask = np.zeros((n, m), dtype=np.bool_)
    rows = np.arange(n)[:, None]
    mask[rows, order[:, :k]] = True
    return mask


def adam_step(
    param: np.ndarray,
    grad: np.ndarray,
    m: np.ndarray,
    v: np.ndarray,
    step: int,
    lr: float,
    beta1: float,
    beta2: float,
    eps: float,
) -> None:
    """One in-place Adam update on flat float64 arrays."""
    c1 = 1.0 - beta1**step
    c2 = 1.0 - beta2**step
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    param -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def block_mean_downsample(frames: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Mean-pool (N, H, W, C) frames onto an (out_h, out_w) grid.

    H and W must be exact multiples of out_h and out_w.
    """
    n, h, w, c = frames.shape
    bh, bw = h // out_h, w // out_w
    view = frames.reshape(n, out_h, bh, out_w, bw, c)
    return view.mean(axis=(2, 4), dtype=np.float64)

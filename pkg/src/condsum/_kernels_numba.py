"""Numba-jitted twins of the hot kernels in ``_kernels_numpy``.

Semantics (tie-breaking, reflect padding) match the numpy fallbacks bit
for bit where the arithmetic is order-independent, and to float rounding
where it is not (blur accumulation order differs).
"""
from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _reflect(i: int, n: int) -> int:
    if n == 1:
        return 0
    while i < 0 or i >= n:
        if i < 0:
            i = -i
        if i >= n:
            i = 2 * n - 2 - i
    return i


@njit(cache=True)
def _blur_f64(img, taps):
    h, w, c = img.shape
    radius = (len(taps) - 1) // 2
    horiz = np.zeros((h, w, c), dtype=np.float64)
    for y in range(h):
        for x in range(w):
            for j in range(len(taps)):
                xs = _reflect(x + j - radius, w)
                for ch in range(c):
                    horiz[y, x, ch] += taps[j] * img[y, xs, ch]
    out = np.zeros((h, w, c), dtype=np.float64)
    for y in range(h):
        for x in range(w):
            for j in range(len(taps)):
                ys = _reflect(y + j - radius, h)
                for ch in range(c):
                    out[y, x, ch] += taps[j] * horiz[ys, x, ch]
    return out


def gaussian_blur(img: np.ndarray, taps: np.ndarray) -> np.ndarray:
    return _blur_f64(img.astype(np.float64), taps).astype(img.dtype)


@njit(cache=True)
def _salt_pepper(out, hit, salt, lo, hi):
    h, w, c = out.shape
    for y in range(h):
        for x in range(w):
            if hit[y, x]:
                for ch in range(c):
                    out[y, x, ch] = hi[ch] if salt[y, x] else lo[ch]


def salt_pepper_apply(img, hit, salt, lo, hi):
    out = img.copy()
    _salt_pepper(out, hit, salt, lo.astype(img.dtype), hi.astype(img.dtype))
    return out


@njit(cache=True)
def topk_keep_mask(scores: np.ndarray, k: int) -> np.ndarray:
    n, m = scores.shape
    mask = np.zeros((n, m), dtype=np.bool_)
    if k >= m:
        mask[:, :] = True
        return mask
    for i in range(n):
        taken = np.zeros(m, dtype=np.bool_)
        for _ in range(k):
            best = -1
            best_val = -np.inf
            for j in range(m):
                if not taken[j] and scores[i, j] > best_val:
                    best_val = scores[i, j]
                    best = j
            taken[best] = True
            mask[i, best] = True
    return mask


@njit(cache=True)
def _adam_apply(param, grad, m, v, c1, c2, lr, beta1, beta2, eps):
    for i in range(param.size):
        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i]
        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i]
        param[i] -= lr * (m[i] / c1) / (np.sqrt(v[i] / c2) + eps)


def adam_step(param, grad, m, v, step, lr, beta1, beta2, eps):
    # bias corrections in Python so both backends use identical scalars
    c1 = 1.0 - beta1**step
    c2 = 1.0 - beta2**step
    _adam_apply(param, grad, m, v, c1, c2, lr, beta1, beta2, eps)


@njit(cache=True)
def block_mean_downsample(frames: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    n, h, w, c = frames.shape
    bh, bw = h // out_h, w // out_w
    out = np.zeros((n, out_h, out_w, c), dtype=np.float64)
    inv = 1.0 / (bh * bw)
    for f in range(n):
        for oy in range(out_h):
            for ox in range(out_w):
                for ch in range(c):
                    acc = 0.0
                    for y in range(oy * bh, (oy + 1) * bh):
                        for x in range(ox * bw, (ox + 1) * bw):
                            acc += frames[f, y, x, ch]
                    out[f, oy, ox, ch] = acc * inv
    return out

"""Kernel backend selection.

The hot kernels (blur, salt-and-pepper, top-k row selection, Adam update,
block-mean downsampling) exist twice: jitted with numba and as pure numpy.
The active set is chosen once, at first use, from the CONDSUM_BACKEND
environment variable:

    CONDSUM_BACKEND=numpy   force the pure-numpy fallback
    CONDSUM_BACKEND=numba   force the jitted kernels (error if numba is absent)
    unset / auto            numba when importable, numpy otherwise

Library code imports the dispatch functions below; tests and the benchmark
import ``_kernels_numpy`` / ``_kernels_numba`` directly to compare paths.
"""
from __future__ import annotations

import os

from . import _kernels_numpy
from ._kernels_numpy import gaussian_taps  # noqa: F401  (backend-independent)

_ACTIVE = None
_ACTIVE_NAME = ""


def _load(name: str):
    if name == "numpy":
        return _kernels_numpy
    from . import _kernels_numba

    return _kernels_numba


def select_backend(name: str | None = None) -> str:
    """Resolve and activate a kernel backend, returning its name."""
    global _ACTIVE, _ACTIVE_NAME
    if name is None:
        name = os.environ.get("CONDSUM_BACKEND", "auto").lower()
    if name == "auto":
        try:
            _ACTIVE = _load("numba")
            _ACTIVE_NAME = "numba"
        except ImportError:
            _ACTIVE = _load("numpy")
            _ACTIVE_NAME = "numpy"
        return _ACTIVE_NAME
    if name not in ("numpy", "numba"):
        raise ValueError(f"unknown backend {name!r}; expected 'numpy', 'numba' or 'auto'")
    _ACTIVE = _load(name)
    _ACTIVE_NAME = name
    return _ACTIVE_NAME


def active_backend() -> str:
    if _ACTIVE is None:
        select_backend()
    return _ACTIVE_NAME


def _kernels():
    if _ACTIVE is None:
        select_backend()
    return _ACTIVE


def gaussian_blur(img, taps):
    return _kernels().gaussian_blur(img, taps)


def salt_pepper_apply(img, hit, salt, lo, hi):
    return _kernels().salt_pepper_apply(img, hit, salt, lo, hi)


def topk_keep_mask(scores, k):
    return _kernels().topk_keep_mask(scores, k)


def adam_step(param, grad, m, v, step, lr, beta1, beta2, eps):
    return _kernels().adam_step(param, grad, m, v, step, lr, beta1, beta2, eps)


def block_mean_downsample(frames, out_h, out_w):
    return _kernels().block_mean_downsample(frames, out_h, out_w)

"""Shared helpers: deterministic rounding and per-record RNG derivation."""
from __future__ import annotations

import zlib

import numpy as np


def round_half_up(x: float) -> int:
    """Round with .5 going up, independent of banker's rounding."""
    return int(np.floor(x + 0.5))


def record_rng(seed: int, record_id: str) -> np.random.Generator:
    """Generator derived from (seed, record id).

    Stable across processes and independent of iteration order, so
    per-record work can run in parallel without changing results.
    """
    tag = zlib.crc32(record_id.encode("utf-8"))
    return np.random.default_rng([seed & 0xFFFFFFFF, tag])

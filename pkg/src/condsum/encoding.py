"""Frame feature extraction and query token embedding.

Visual encoders are fixed, seeded feature extractors (stand-ins for a
pretrained backbone): they are read-only after construction and never
trained. Three are available:

    toy             random projection of 8x8 block-mean pixel statistics
    per_frame_2d    small 2D conv stack applied to each frame alone
    spatiotemporal  2D stage plus a temporal conv over a 5-frame window

Query text becomes a token matrix: lookup into a seeded embedding table
plus sinusoidal positional encoding. A bag-of-words mode collapses the
query to a single order-free count vector for the embedding ablation.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from . import backend
from .dataset import VideoRecord
from .errors import ValidationError
from .ioutil import read_arrays, write_arrays

DEFAULT_VISUAL_DIM = 64
DEFAULT_TOKEN_DIM = 64
TEMPORAL_WINDOW = 5

UNK = "<unk>"
PAD = "<pad>"


@dataclass
class FrameFeatures:
    matrix: np.ndarray  # (n_frames, visual_dim) float64
    encoder_id: str


@dataclass
class TokenMatrix:
    T: np.ndarray  # (n_tokens, token_dim) float64
    vocabulary_id: str


class Vocabulary:
    """Token index built from training queries, with reserved UNK/PAD rows."""

    def __init__(self, tokens: list[str]):
        self.tokens = [UNK, PAD] + [t for t in tokens if t not in (UNK, PAD)]
        self.index = {t: i for i, t in enumerate(self.tokens)}
        self.vocabulary_id = f"v{zlib.crc32('|'.join(self.tokens).encode('utf-8')):08x}"

    @staticmethod
    def build(queries: list[str]) -> "Vocabulary":
        seen = sorted({tok for q in queries if q for tok in q.lower().split()})
        return Vocabulary(seen)

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, query: str) -> np.ndarray:
        ids = [self.index.get(tok, self.index[UNK]) for tok in query.lower().split()]
        return np.asarray(ids, dtype=np.int64)


def sinusoidal_positional_encoding(n_positions: int, dim: int) -> np.ndarray:
    """Interleaved sin/cos position signal; rows differ across positions."""
    pos = np.arange(n_positions, dtype=np.float64)[:, None]
    i = np.arange(dim, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, (2.0 * np.floor(i / 2.0)) / dim)
    pe = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return pe


def embedding_table(vocab: Vocabulary, token_dim: int, seed: int) -> np.ndarray:
    """Seeded lookup table, a stand-in for a pretrained text encoder."""
    rng = np.random.default_rng([seed & 0xFFFFFFFF, zlib.crc32(vocab.vocabulary_id.encode()), token_dim])
    table = rng.normal(0.0, 1.0 / np.sqrt(token_dim), size=(len(vocab), token_dim))
    table[vocab.index[PAD]] = 0.0
    return table


def embed_query(
    query: str,
    vocab: Vocabulary,
    token_dim: int = DEFAULT_TOKEN_DIM,
    mode: str = "token",
    seed: int = 0,
) -> TokenMatrix:
    """Token rows = embedding + positional encoding; bow mode returns a
    single normalized count vector (order-free)."""
    if not query or not query.split():
        raise ValueError("query must be nonempty")
    ids = vocab.encode(query)
    if mode == "bow":
        counts = np.zeros(token_dim, dtype=np.float64)
        for tok_id in ids:
            counts[tok_id % token_dim] += 1.0
        counts /= counts.sum()
        return TokenMatrix(counts[None, :], vocab.vocabulary_id)
    if mode != "token":
        raise ValueError(f"unknown embedding mode {mode!r}")
    table = embedding_table(vocab, token_dim, seed)
    rows = table[ids] + sinusoidal_positional_encoding(len(ids), token_dim)
    return TokenMatrix(rows, vocab.vocabulary_id)


# -- visual encoders ----------------------------------------------------------


def _conv2d(x: np.ndarray, kernel: np.ndarray, stride: int) -> np.ndarray:
    """Valid 3x3 convolution with stride; x (H, W, Cin), kernel (3, 3, Cin, Cout)."""
    win = np.lib.stride_tricks.sliding_window_view(x, (3, 3), axis=(0, 1))
    win = win[::stride, ::stride]
    return np.einsum("hwcij,ijco->hwo", win, kernel, optimize=True)


def _stage_weights(seed: int, tag: str, shape: tuple) -> np.ndarray:
    rng = np.random.default_rng([seed & 0xFFFFFFFF, zlib.crc32(tag.encode())])
    fan_in = int(np.prod(shape[:-1]))
    return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape)


def encode_video(
    record: VideoRecord,
    encoder: str = "toy",
    visual_dim: int = DEFAULT_VISUAL_DIM,
    seed: int = 0,
) -> FrameFeatures:
    """Per-frame feature rows, (n_frames, visual_dim), deterministic under seed."""
    encoder_id = f"{encoder}-d{visual_dim}-s{seed}"
    if record.frames is None:
        feats = record.features
        if feats.shape[1] != visual_dim:
            raise ValidationError(
                f"video {record.video_id}: cached features are {feats.shape[1]}-wide, "
                f"expected {visual_dim}"
            )
        return FrameFeatures(feats.astype(np.float64), encoder_id)
    frames = record.frames
    if frames.shape[0] == 0:
        raise ValueError("record has no frames")

    if encoder == "toy":
        pooled = backend.block_mean_downsample(frames.astype(np.float64), 8, 8)
        flat = pooled.reshape(frames.shape[0], -1)
        proj = _stage_weights(seed, "toy-proj", (flat.shape[1], visual_dim))
        return FrameFeatures(flat @ proj, encoder_id)

    if encoder == "per_frame_2d":
        k1 = _stage_weights(seed, "2d-c1", (3, 3, 3, 8))
        k2 = _stage_weights(seed, "2d-c2", (3, 3, 8, 16))
        proj = _stage_weights(seed, "2d-proj", (16, visual_dim))
        rows = []
        for f in range(frames.shape[0]):
            h1 = np.tanh(_conv2d(frames[f].astype(np.float64), k1, stride=4))
            h2 = np.tanh(_conv2d(h1, k2, stride=4))
            rows.append(h2.mean(axis=(0, 1)) @ proj)
        return FrameFeatures(np.stack(rows), encoder_id)

    if encoder == "spatiotemporal":
        k1 = _stage_weights(seed, "3d-c1", (3, 3, 3, 8))
        kt = _stage_weights(seed, "3d-ct", (TEMPORAL_WINDOW, 3, 3, 8, 16))
        proj = _stage_weights(seed, "3d-proj", (16, visual_dim))
        n = frames.shape[0]
        stage1 = np.stack(
            [np.tanh(_conv2d(frames[f].astype(np.float64), k1, stride=4)) for f in range(n)]
        )
        # one spatial conv per temporal tap, then window sums with reflect padding
        taps = [
            np.stack([_conv2d(stage1[f], kt[dt], stride=4) for f in range(n)])
            for dt in range(TEMPORAL_WINDOW)
        ]
        half = TEMPORAL_WINDOW // 2
        rows = []
        for f in range(n):
            acc = np.zeros_like(taps[0][0])
            for dt in range(TEMPORAL_WINDOW):
                src = _reflect_index(f + dt - half, n)
                acc += taps[dt][src]
            rows.append(np.tanh(acc).mean(axis=(0, 1)) @ proj)
        return FrameFeatures(np.stack(rows), encoder_id)

    raise ValueError(f"unknown encoder {encoder!r}")


def _reflect_index(i: int, n: int) -> int:
    if n == 1:
        return 0
    while i < 0 or i >= n:
        if i < 0:
            i = -i
        if i >= n:
            i = 2 * n - 2 - i
    return i


def save_features(features: FrameFeatures, path, seed: int | None = None) -> None:
    write_arrays(
        path,
        {"features": features.matrix},
        {"shape": list(features.matrix.shape), "encoder_id": features.encoder_id, "seed": seed},
    )


def load_features(path) -> FrameFeatures:
    arrays, meta = read_arrays(path)
    return FrameFeatures(arrays["features"].astype(np.float64), meta.get("encoder_id", "cached"))

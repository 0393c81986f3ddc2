"""Dataset ingestion, weak segment labels, splits and synthetic data.

Videos arrive pre-extracted at 1 fps as a JSON manifest that lists, per
video, either frame image paths or one cached feature file, plus optional
query text and per-annotator frame scores:

    {"dataset": "tvsum",
     "videos": [{"id": "v01",
                 "query": "dog show",
                 "frames": ["v01/000001.png", ...],      # or "features": "v01.feat"
                 "annotations": [{"annotator": "a00", "scores": [...]}, ...]}]}

Frame paths are resolved relative to the manifest's directory. Images are
resized to 224x224 and normalized per channel.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataLoadError, ValidationError
from .ioutil import read_arrays, write_arrays
from .util import record_rng, round_half_up

IMAGE_SIZE = 224
CHANNEL_MEAN = (0.4280, 0.4106, 0.3589)
CHANNEL_STD = (0.2737, 0.2631, 0.2601)


@dataclass(frozen=True)
class DatasetSpec:
    """Declares a dataset's score range, class count and query availability."""

    name: str
    score_min: float
    score_max: float
    n_classes: int
    has_query: bool
    channel_mean: tuple = CHANNEL_MEAN
    channel_std: tuple = CHANNEL_STD

    def __post_init__(self):
        if self.score_min >= self.score_max:
            raise ValueError("score_min must be < score_max")
        if self.n_classes < 2:
            raise ValueError("need at least 2 outcome classes")
        if len(self.channel_mean) != 3 or len(self.channel_std) != 3:
            raise ValueError("channel stats must have 3 entries")
        if any(s <= 0 for s in self.channel_std):
            raise ValueError("channel std must be positive")

    @staticmethod
    def for_name(name: str, with_query: bool = True) -> "DatasetSpec":
        presets = {
            "tvsum": DatasetSpec("tvsum", 1.0, 5.0, 5, True),
            "queryvs": DatasetSpec("queryvs", 0.0, 3.0, 4, True),
            "summe": DatasetSpec("summe", 0.0, 1.0, 2, False),
            "synthetic": DatasetSpec("synthetic", 0.0, 1.0, 2, with_query),
        }
        try:
            return presets[name]
        except KeyError:
            raise ValueError(f"unknown dataset name {name!r}") from None

    def score_to_class(self, score: float) -> int:
        """Map an annotator score onto an outcome class index.

        Integer-labelled ranges shift to 0-based classes; the continuous
        [0, 1] two-class case thresholds at 0.5.
        """
        if self.n_classes == 2 and self.score_max - self.score_min <= 1.0:
            return int(score >= 0.5 * (self.score_min + self.score_max))
        cls = round_half_up(score) - round_half_up(self.score_min)
        return int(np.clip(cls, 0, self.n_classes - 1))


@dataclass
class AnnotationTrack:
    annotator_id: str
    frame_scores: np.ndarray


@dataclass
class VideoRecord:
    """One video: normalized frames or cached features plus annotations."""

    video_id: str
    fps: float
    annotations: list[AnnotationTrack]
    frames: np.ndarray | None = None  # (n, H, W, 3) float32, normalized
    features: np.ndarray | None = None  # (n, d_v) float32
    query: str | None = None

    @property
    def n_frames(self) -> int:
        if self.frames is not None:
            return self.frames.shape[0]
        return self.features.shape[0]

    def validate(self, spec: DatasetSpec) -> None:
        if self.frames is None and self.features is None:
            raise ValidationError(f"video {self.video_id}: no frames and no features")
        if self.n_frames < 1:
            raise ValidationError(f"video {self.video_id}: empty video")
        if self.fps <= 0:
            raise ValidationError(f"video {self.video_id}: fps must be positive")
        for track in self.annotations:
            if len(track.frame_scores) != self.n_frames:
                raise ValidationError(
                    f"video {self.video_id}, annotator {track.annotator_id}: "
                    f"{len(track.frame_scores)} scores for {self.n_frames} frames"
                )
            lo, hi = track.frame_scores.min(), track.frame_scores.max()
            if lo < spec.score_min or hi > spec.score_max:
                raise ValidationError(
                    f"video {self.video_id}, annotator {track.annotator_id}: "
                    f"score outside [{spec.score_min}, {spec.score_max}]"
                )
        if not spec.has_query and self.query is not None:
            raise ValidationError(f"video {self.video_id}: query present but dataset has none")

    def mean_scores(self) -> np.ndarray:
        """Per-frame average over annotator tracks."""
        if not self.annotations:
            raise ValidationError(f"video {self.video_id}: no annotation tracks")
        return np.mean([t.frame_scores for t in self.annotations], axis=0)

    def frame_classes(self, spec: DatasetSpec) -> np.ndarray:
        mean = self.mean_scores()
        return np.array([spec.score_to_class(s) for s in mean], dtype=np.int64)


@dataclass
class SplitPlan:
    """k random train/eval divisions of the video id list."""

    k: int
    seed: int
    train_ids: list[list[str]] = field(default_factory=list)
    eval_ids: list[list[str]] = field(default_factory=list)


def normalize_image(img01: np.ndarray, spec: DatasetSpec) -> np.ndarray:
    """Channel-normalize an image with values in [0, 1]."""
    mean = np.asarray(spec.channel_mean, dtype=np.float32)
    std = np.asarray(spec.channel_std, dtype=np.float32)
    return ((img01.astype(np.float32) - mean) / std).astype(np.float32)


def denormalize_image(img: np.ndarray, spec: DatasetSpec) -> np.ndarray:
    """Invert normalize_image, returning values in [0, 1]."""
    mean = np.asarray(spec.channel_mean, dtype=np.float32)
    std = np.asarray(spec.channel_std, dtype=np.float32)
    return img.astype(np.float32) * std + mean


def _load_image(path: Path, spec: DatasetSpec) -> np.ndarray:
    if not path.exists():
        raise DataLoadError(f"frame file not found: {path}")
    with Image.open(path) as im:
        im = im.convert("RGB")
        if im.size != (IMAGE_SIZE, IMAGE_SIZE):
            im = im.resize((IMAGE_SIZE, IMAGE_SIZE), Image.BILINEAR)
        arr = np.asarray(im, dtype=np.float32) / 255.0
    return normalize_image(arr, spec)


def load_dataset(manifest_path, spec: DatasetSpec) -> list[VideoRecord]:
    """Load all videos referenced by a manifest; see the module docstring."""
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise DataLoadError(f"manifest not found: {manifest_path}")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    base = manifest_path.parent

    records = []
    for entry in manifest.get("videos", []):
        video_id = entry["id"]
        frames = features = None
        if "features" in entry:
            arrays, _meta = read_arrays(base / entry["features"])
            features = arrays["features"]
        elif "frames" in entry:
            frames = np.stack([_load_image(base / p, spec) for p in entry["frames"]])
        else:
            raise ValidationError(f"video {video_id}: neither frames nor features listed")
        tracks = [
            AnnotationTrack(a["annotator"], np.asarray(a["scores"], dtype=np.float64))
            for a in entry.get("annotations", [])
        ]
        query = entry.get("query") if spec.has_query else None
        record = VideoRecord(
            video_id=video_id,
            fps=float(entry.get("fps", 1.0)),
            annotations=tracks,
            frames=frames,
            features=features,
            query=query,
        )
        record.validate(spec)
        records.append(record)
    return records


def save_dataset(records: list[VideoRecord], spec: DatasetSpec, out_dir) -> Path:
    """Write records as PNG frames (or feature containers) plus a manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for rec in records:
        entry: dict = {"id": rec.video_id, "fps": rec.fps}
        if rec.query is not None:
            entry["query"] = rec.query
        if rec.frames is not None:
            frame_dir = out_dir / rec.video_id
            frame_dir.mkdir(exist_ok=True)
            paths = []
            pixels = denormalize_image(rec.frames, spec)
            pixels = np.clip(np.round(pixels * 255.0), 0, 255).astype(np.uint8)
            for i in range(rec.n_frames):
                rel = f"{rec.video_id}/{i:05d}.png"
                Image.fromarray(pixels[i]).save(out_dir / rel)
                paths.append(rel)
            entry["frames"] = paths
        else:
            rel = f"{rec.video_id}.feat"
            write_arrays(out_dir / rel, {"features": rec.features}, {"video_id": rec.video_id})
            entry["features"] = rel
        entry["annotations"] = [
            {"annotator": t.annotator_id, "scores": t.frame_scores.tolist()}
            for t in rec.annotations
        ]
        entries.append(entry)
    manifest = {"dataset": spec.name, "videos": entries}
    manifest_path = out_dir / "manifest.json"
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return manifest_path


def derive_segment_scores(
    frame_scores, fps: float, segment_seconds: float = 2.0
) -> np.ndarray:
    """Average frame scores over fixed-length segments.

    The final segment may cover fewer frames; it is kept, not dropped.
    """
    scores = np.asarray(frame_scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("frame_scores must be nonempty")
    if fps <= 0 or segment_seconds <= 0:
        raise ValueError("fps and segment_seconds must be positive")
    frames_per_segment = fps * segment_seconds
    if frames_per_segment < 1.0:
        raise ValueError("segments shorter than one frame are not meaningful")
    n = scores.size
    n_segments = math.ceil(n / frames_per_segment)
    edges = [min(n, int(math.floor(i * frames_per_segment + 1e-9))) for i in range(n_segments + 1)]
    edges[-1] = n
    return np.array([scores[a:b].mean() for a, b in zip(edges[:-1], edges[1:])])


def expand_segment_scores(segment_scores, n_frames: int, fps: float, segment_seconds: float = 2.0) -> np.ndarray:
    """Repeat each segment score over its member frames (inverse layout of
    derive_segment_scores)."""
    segment_scores = np.asarray(segment_scores, dtype=np.float64)
    frames_per_segment = fps * segment_seconds
    n_segments = segment_scores.size
    edges = [min(n_frames, int(math.floor(i * frames_per_segment + 1e-9))) for i in range(n_segments + 1)]
    edges[-1] = n_frames
    out = np.empty(n_frames, dtype=np.float64)
    for i, (a, b) in enumerate(zip(edges[:-1], edges[1:])):
        out[a:b] = segment_scores[i]
    return out


def make_splits(video_ids: list[str], k: int = 5, train_frac: float = 0.8, seed: int = 0) -> SplitPlan:
    """k independent random train/eval divisions, deterministic under seed."""
    ids = list(video_ids)
    n = len(ids)
    n_train = round_half_up(train_frac * n)
    if n_train >= n or n_train < 1:
        raise ValueError(
            f"cannot split {n} ids with train_frac={train_frac}: eval set would be empty"
        )
    rng = np.random.default_rng(seed)
    plan = SplitPlan(k=k, seed=seed)
    for _ in range(k):
        perm = [ids[i] for i in rng.permutation(n)]
        plan.train_ids.append(perm[:n_train])
        plan.eval_ids.append(perm[n_train:])
    return plan


# -- synthetic data ------------------------------------------------------------

_QUERY_WORDS = ["skate", "parade", "cooking", "surf", "bike", "garden", "train", "market"]


def generate_synthetic(
    n_videos: int, n_frames: int, with_query: bool, seed: int
) -> list[VideoRecord]:
    """Deterministic toy videos with one planted high-importance block each.

    A quarter of each video's frames form a contiguous block with bright,
    structured pixels and annotator score 1.0; the rest are dark noise with
    score 0.0. Pixel content lives on an 8x8 cell grid so a downsampling
    encoder separates the two populations cleanly.
    """
    if n_videos < 1:
        raise ValueError("n_videos must be >= 1")
    if n_frames < 4:
        raise ValueError("n_frames must be >= 4")
    spec = DatasetSpec.for_name("synthetic", with_query=with_query)
    cell = IMAGE_SIZE // 8  # 28px cells -> an 8x8 pattern grid
    records = []
    for v in range(n_videos):
        video_id = f"syn{v:03d}"
        rng = record_rng(seed, video_id)
        block_len = max(1, n_frames // 4)
        start = int(rng.integers(0, n_frames - block_len + 1))

        grid = rng.integers(20, 70, size=(n_frames, 8, 8, 3)).astype(np.uint8)
        signature = rng.integers(150, 250, size=(8, 8, 3)).astype(np.uint8)
        for f in range(start, start + block_len):
            jitter = rng.integers(0, 30, size=(8, 8, 3)).astype(np.int16)
            grid[f] = np.clip(signature.astype(np.int16) + jitter - 15, 0, 255).astype(np.uint8)
        pixels = np.repeat(np.repeat(grid, cell, axis=1), cell, axis=2)
        frames = normalize_image(pixels.astype(np.float32) / 255.0, spec)

        scores = np.zeros(n_frames, dtype=np.float64)
        scores[start : start + block_len] = 1.0
        record = VideoRecord(
            video_id=video_id,
            fps=1.0,
            annotations=[AnnotationTrack("a00", scores)],
            frames=frames,
            query=f"find the {_QUERY_WORDS[v % len(_QUERY_WORDS)]} highlight" if with_query else None,
        )
        record.validate(spec)
        records.append(record)
    return records

"""Conditional-learning dataset construction.

Half of the (video, query) pairs are selected; within each selected pair,
30% of the frames are flagged and perturbed (salt-and-pepper or blur,
picked per frame), and the paired query may be perturbed by dropping
words. The flags become the binary intervention labels the model trains
on. Unselected records pass through untouched.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import backend
from .dataset import VideoRecord
from .util import record_rng, round_half_up

SALT_PEPPER = "salt_pepper"
BLUR = "blur"
WORD_DROP = "word_drop"

DEFAULT_SALT_PEPPER_DENSITY = 0.05
DEFAULT_BLUR_SIGMA = 2.0
DEFAULT_WORD_DROP_PROB = 0.3


@dataclass
class InterventionAssignment:
    """Ground-truth intervention labels for one video."""

    video_id: str
    pair_selected: bool
    frame_flags: np.ndarray  # (n_frames,) int8
    kinds: dict[int, str] = field(default_factory=dict)
    query_flag: bool = False
    query_kind: str | None = None

    def t_labels(self) -> np.ndarray:
        """Per-frame binary intervention labels: frame flag OR query flag."""
        if self.query_flag:
            return np.ones_like(self.frame_flags)
        return self.frame_flags.copy()

    def to_json(self) -> dict:
        return {
            "video_id": self.video_id,
            "pair_selected": self.pair_selected,
            "frame_flags": self.frame_flags.astype(int).tolist(),
            "kinds": {str(k): v for k, v in sorted(self.kinds.items())},
            "query_flag": self.query_flag,
            "query_kind": self.query_kind,
        }

    @staticmethod
    def from_json(obj: dict) -> "InterventionAssignment":
        return InterventionAssignment(
            video_id=obj["video_id"],
            pair_selected=obj["pair_selected"],
            frame_flags=np.asarray(obj["frame_flags"], dtype=np.int8),
            kinds={int(k): v for k, v in obj.get("kinds", {}).items()},
            query_flag=obj.get("query_flag", False),
            query_kind=obj.get("query_kind"),
        )


def apply_visual_intervention(image: np.ndarray, kind: str, strength: float, seed: int) -> np.ndarray:
    """Perturb one (H, W, C) image.

    salt_pepper: a fraction ``strength`` of pixel positions is set to the
    image's per-channel min or max, equiprobably. blur: Gaussian blur with
    standard deviation ``strength`` pixels, reflect padding.
    """
    if kind == SALT_PEPPER:
        if not 0.0 <= strength <= 1.0:
            raise ValueError("salt_pepper strength must be in [0, 1]")
        h, w = image.shape[:2]
        n_hit = round_half_up(strength * h * w)
        if n_hit == 0:
            return image.copy()
        rng = np.random.default_rng(seed)
        hit = np.zeros(h * w, dtype=bool)
        hit[rng.choice(h * w, size=n_hit, replace=False)] = True
        hit = hit.reshape(h, w)
        salt = rng.random((h, w)) < 0.5
        lo = image.reshape(-1, image.shape[2]).min(axis=0)
        hi = image.reshape(-1, image.shape[2]).max(axis=0)
        return backend.salt_pepper_apply(image, hit, salt, lo, hi)
    if kind == BLUR:
        if strength < 0:
            raise ValueError("blur strength (sigma, pixels) must be >= 0")
        if strength == 0:
            return image.copy()
        taps = backend.gaussian_taps(strength)
        return backend.gaussian_blur(image, taps)
    raise ValueError(f"unknown visual intervention kind {kind!r}")


def apply_textual_intervention(query: str, drop_prob: float, seed: int) -> str:
    """Drop each word independently with probability drop_prob.

    At least one word always survives; if everything is dropped, one word
    is retained uniformly at random. Word order is preserved.
    """
    tokens = query.split()
    if not tokens:
        raise ValueError("query is empty after whitespace tokenization")
    if not 0.0 <= drop_prob <= 1.0:
        raise ValueError("drop_prob must be in [0, 1]")
    rng = np.random.default_rng(seed)
    dropped = rng.random(len(tokens)) < drop_prob
    if dropped.all():
        dropped[rng.integers(len(tokens))] = False
    return " ".join(tok for tok, d in zip(tokens, dropped) if not d)


def build_conditional_dataset(
    records: list[VideoRecord],
    pair_fraction: float = 0.5,
    frame_fraction: float = 0.3,
    seed: int = 0,
    salt_pepper_density: float = DEFAULT_SALT_PEPPER_DENSITY,
    blur_sigma: float = DEFAULT_BLUR_SIGMA,
    word_drop_prob: float = DEFAULT_WORD_DROP_PROB,
) -> tuple[list[VideoRecord], list[InterventionAssignment]]:
    """Select pairs, flag frames, and perturb the selected content.

    Returns perturbed copies (inputs are never mutated) and one assignment
    per record, in input order. Exactly round(pair_fraction * N) records
    are selected; each selected record has exactly
    round(frame_fraction * n_frames) flagged frames.
    """
    for name, frac in (("pair_fraction", pair_fraction), ("frame_fraction", frame_fraction)):
        if not 0.0 <= frac <= 1.0:
            raise ValueError(f"{name} must be in [0, 1]")

    master = np.random.default_rng(seed)
    n_selected = round_half_up(pair_fraction * len(records))
    selected = set(master.permutation(len(records))[:n_selected].tolist())

    out_records: list[VideoRecord] = []
    assignments: list[InterventionAssignment] = []
    for i, rec in enumerate(records):
        n = rec.n_frames
        if i not in selected:
            out_records.append(_copy_record(rec))
            assignments.append(
                InterventionAssignment(rec.video_id, False, np.zeros(n, dtype=np.int8))
            )
            continue

        rng = record_rng(seed, rec.video_id)
        n_flag = round_half_up(frame_fraction * n)
        flagged = np.sort(rng.choice(n, size=n_flag, replace=False))
        flags = np.zeros(n, dtype=np.int8)
        flags[flagged] = 1
        kinds = {int(f): (SALT_PEPPER if rng.random() < 0.5 else BLUR) for f in flagged}
        frame_seeds = {int(f): int(rng.integers(0, 2**31)) for f in flagged}
        query_flag = bool(rec.query is not None and rng.random() < frame_fraction)
        query_seed = int(rng.integers(0, 2**31))

        new_rec = _copy_record(rec)
        if new_rec.frames is not None:
            for f in flagged:
                kind = kinds[int(f)]
                strength = salt_pepper_density if kind == SALT_PEPPER else blur_sigma
                new_rec.frames[f] = apply_visual_intervention(
                    new_rec.frames[f], kind, strength, frame_seeds[int(f)]
                )
        if query_flag:
            new_rec.query = apply_textual_intervention(rec.query, word_drop_prob, query_seed)

        out_records.append(new_rec)
        assignments.append(
            InterventionAssignment(
                video_id=rec.video_id,
                pair_selected=True,
                frame_flags=flags,
                kinds=kinds,
                query_flag=query_flag,
                query_kind=WORD_DROP if query_flag else None,
            )
        )
    return out_records, assignments


def _copy_record(rec: VideoRecord) -> VideoRecord:
    return VideoRecord(
        video_id=rec.video_id,
        fps=rec.fps,
        annotations=copy.deepcopy(rec.annotations),
        frames=None if rec.frames is None else rec.frames.copy(),
        features=None if rec.features is None else rec.features.copy(),
        query=rec.query,
    )


def save_assignments(assignments: list[InterventionAssignment], path) -> None:
    payload = {"assignments": [a.to_json() for a in assignments]}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)


def load_assignments(path) -> dict[str, InterventionAssignment]:
    with open(Path(path), "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    out = {}
    for obj in payload["assignments"]:
        a = InterventionAssignment.from_json(obj)
        out[a.video_id] = a
    return out

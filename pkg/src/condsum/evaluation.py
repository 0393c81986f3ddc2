"""Budget-constrained summary masks and the F1 evaluation protocol.

A summary is a binary frame mask with at most N_Y selected frames.
Ground-truth masks come from annotator scores through the same budgeted
top-N rule as predictions. Overlap gives precision (against the predicted
summary) and recall (against the ground truth); videos with several
annotators aggregate per-annotator F1 by mean or max; splits average over
their evaluation videos; the protocol reports the mean over splits.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .dataset import SplitPlan, VideoRecord


@dataclass
class PRF1:
    precision: float
    recall: float
    f1: float


@dataclass
class EvalReport:
    split_f1: list[float]
    mean_f1: float
    per_video: list[dict] = field(default_factory=list)
    budget_frac: float = 0.15
    aggregation: str = "mean"

    def to_json(self) -> dict:
        return {
            "split_f1": self.split_f1,
            "mean_f1": self.mean_f1,
            "per_video": self.per_video,
            "protocol": {"budget_frac": self.budget_frac, "aggregation": self.aggregation},
        }


def generate_summary(scores, budget: int) -> np.ndarray:
    """Binary mask selecting the ``budget`` highest-scoring frames.

    Ties keep the lower frame index. A budget at or above the frame count
    selects everything.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if budget < 0:
        raise ValueError("summary budget must be >= 0")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    n = scores.size
    mask = np.zeros(n, dtype=np.int8)
    if budget == 0:
        return mask
    order = np.argsort(-scores, kind="stable")
    mask[order[: min(budget, n)]] = 1
    return mask


def f1_score(pred: np.ndarray, truth: np.ndarray) -> PRF1:
    """Set-overlap precision/recall/F1 between two frame masks."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"mask length mismatch: {pred.shape} vs {truth.shape}")
    overlap = int(np.sum((pred != 0) & (truth != 0)))
    n_pred = int(np.sum(pred != 0))
    n_truth = int(np.sum(truth != 0))
    precision = overlap / n_pred if n_pred else 0.0
    recall = overlap / n_truth if n_truth else 0.0
    f1 = 2.0 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return PRF1(precision, recall, f1)


def video_f1(
    model,
    record: VideoRecord,
    budget_frac: float = 0.15,
    aggregation: str = "mean",
) -> PRF1:
    """Predicted-vs-annotators F1 for one video under a shared budget."""
    if aggregation not in ("mean", "max"):
        raise ValueError(f"unknown aggregation {aggregation!r}")
    budget = int(np.floor(budget_frac * record.n_frames))
    pred = generate_summary(model.importance_scores(record), budget)
    per_annotator = [
        f1_score(pred, generate_summary(track.frame_scores, budget))
        for track in record.annotations
    ]
    agg = np.mean if aggregation == "mean" else np.max
    return PRF1(
        float(agg([m.precision for m in per_annotator])),
        float(agg([m.recall for m in per_annotator])),
        float(agg([m.f1 for m in per_annotator])),
    )


def evaluate_protocol(
    models: list,
    records: list[VideoRecord],
    splits: SplitPlan,
    budget_frac: float = 0.15,
    aggregation: str = "mean",
) -> EvalReport:
    """Run the k-split protocol: one trained model per split, scored on
    that split's evaluation videos."""
    if len(models) != splits.k:
        raise ValueError(f"need one model per split: {len(models)} models, k={splits.k}")
    by_id = {r.video_id: r for r in records}
    split_f1 = []
    per_video = []
    for s in range(splits.k):
        scores = []
        for vid in splits.eval_ids[s]:
            record = by_id[vid]
            m = video_f1(models[s], record, budget_frac, aggregation)
            scores.append(m.f1)
            per_video.append(
                {
                    "split": s,
                    "video_id": vid,
                    "precision": m.precision,
                    "recall": m.recall,
                    "f1": m.f1,
                }
            )
        split_f1.append(float(np.mean(scores)))
    return EvalReport(
        split_f1=split_f1,
        mean_f1=float(np.mean(split_f1)),
        per_video=per_video,
        budget_frac=budget_frac,
        aggregation=aggregation,
    )


def dump_video_scores(path, record: VideoRecord, scores, pred_mask, truth_mask) -> None:
    """CSV rows (frame_index, score, selected, ground_truth) for plotting."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("frame_index,score,selected,ground_truth\n")
        for i in range(record.n_frames):
            fh.write(f"{i},{float(scores[i])!r},{int(pred_mask[i])},{int(truth_mask[i])}\n")


def save_report(report: EvalReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json(), fh, indent=1, sort_keys=True)

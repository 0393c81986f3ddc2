"""Command-line entry point.

Subcommands: build-dataset, train, eval, summarize, plot-scores.
Values resolve with precedence: explicit flag > --config JSON > built-in
default. All outputs land under --out-dir (or $CONDSUM_OUT_DIR).

Exit codes: 0 success, 1 usage error, 2 data/validation error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from .dataset import DatasetSpec, generate_synthetic, load_dataset, make_splits, save_dataset
from .errors import CondsumError, DataLoadError, NumericalError, StateError, ValidationError
from .evaluation import (
    dump_video_scores,
    evaluate_protocol,
    generate_summary,
    save_report,
)
from .intervention import build_conditional_dataset, load_assignments, save_assignments
from .training import TrainConfig, load_checkpoint, train, write_history_csv


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_common(p: _Parser) -> None:
    p.add_argument("--seed", type=int, default=None, help="base RNG seed (default 0)")
    p.add_argument("--config", type=str, default=None, help="JSON file with option defaults")
    p.add_argument(
        "--out-dir",
        type=str,
        default=None,
        help="output directory (default $CONDSUM_OUT_DIR or ./condsum_out)",
    )


class _Options:
    """Flag > config-file > default resolution."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.config = {}
        if args.config:
            path = Path(args.config)
            if not path.exists():
                raise DataLoadError(f"config file not found: {path}")
            with open(path, "r", encoding="utf-8") as fh:
                self.config = json.load(fh)

    def get(self, name: str, default):
        value = getattr(self.args, name.replace("-", "_"), None)
        if value is not None:
            return value
        if name in self.config:
            return self.config[name]
        return default

    def out_dir(self) -> Path:
        raw = self.get("out-dir", os.environ.get("CONDSUM_OUT_DIR", "condsum_out"))
        out = Path(raw)
        out.mkdir(parents=True, exist_ok=True)
        return out


def build_parser() -> _Parser:
    parser = _Parser(prog="condsum", description=__doc__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("build-dataset", help="generate/perturb a dataset and its intervention sidecar")
    _add_common(p)
    p.add_argument("--manifest", type=str, default=None, help="existing manifest to perturb (default: synthesize)")
    p.add_argument("--dataset", type=str, default=None, choices=["tvsum", "queryvs", "summe", "synthetic"])
    p.add_argument("--n-videos", type=int, default=None)
    p.add_argument("--n-frames", type=int, default=None)
    p.add_argument("--without-query", action="store_true", default=None)
    p.add_argument("--pair-fraction", type=float, default=None)
    p.add_argument("--frame-fraction", type=float, default=None)
    p.add_argument("--salt-pepper-density", type=float, default=None)
    p.add_argument("--blur-sigma", type=float, default=None)
    p.add_argument("--word-drop-prob", type=float, default=None)
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("train", help="train one model per split and checkpoint them")
    _add_common(p)
    p.add_argument("--manifest", type=str, required=True)
    p.add_argument("--dataset", type=str, default=None)
    p.add_argument("--interventions", type=str, default=None, help="sidecar JSON with t labels")
    p.add_argument("--splits", type=int, default=None)
    p.add_argument("--train-frac", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--encoder", type=str, default=None, choices=["toy", "per_frame_2d", "spatiotemporal"])
    p.add_argument("--latent-dim", type=int, default=None)
    p.add_argument("--hidden-dim", type=int, default=None)
    p.add_argument("--kappa", type=int, default=None)
    p.add_argument("--no-conditional-model", action="store_true", default=None)
    p.add_argument("--no-helpers", action="store_true", default=None)
    p.add_argument("--no-cam", action="store_true", default=None)
    p.add_argument("--bow", action="store_true", default=None)
    p.add_argument("--no-3d-encoder", action="store_true", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="run the split protocol against trained checkpoints")
    _add_common(p)
    p.add_argument("--manifest", type=str, required=True)
    p.add_argument("--dataset", type=str, default=None)
    p.add_argument("--checkpoint-dir", type=str, required=True)
    p.add_argument("--splits", type=int, default=None)
    p.add_argument("--train-frac", type=float, default=None)
    p.add_argument("--budget-frac", type=float, default=None)
    p.add_argument("--aggregation", type=str, default=None, choices=["mean", "max"])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("summarize", help="emit the budgeted summary mask for one video")
    _add_common(p)
    p.add_argument("--manifest", type=str, required=True)
    p.add_argument("--dataset", type=str, default=None)
    p.add_argument("--checkpoint", type=str, required=True)
    p.add_argument("--video-id", type=str, required=True)
    p.add_argument("--budget", type=int, default=None, help="absolute frame budget")
    p.add_argument("--budget-frac", type=float, default=None)
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("plot-scores", help="bar chart of a per-video score CSV")
    _add_common(p)
    p.add_argument("scores_csv", type=str)
    p.add_argument("--out", type=str, default=None, help="output image path")
    p.set_defaults(func=cmd_plot_scores)

    return parser


# -- subcommand bodies --------------------------------------------------------


def cmd_build_dataset(args) -> int:
    opts = _Options(args)
    out = opts.out_dir()
    seed = int(opts.get("seed", 0))
    manifest = opts.get("manifest", None)
    if manifest:
        name = opts.get("dataset", "tvsum")
        spec = DatasetSpec.for_name(name)
        records = load_dataset(manifest, spec)
    else:
        with_query = not bool(opts.get("without-query", False))
        spec = DatasetSpec.for_name("synthetic", with_query=with_query)
        records = generate_synthetic(
            int(opts.get("n-videos", 8)), int(opts.get("n-frames", 32)), with_query, seed
        )
    perturbed, assignments = build_conditional_dataset(
        records,
        pair_fraction=float(opts.get("pair-fraction", 0.5)),
        frame_fraction=float(opts.get("frame-fraction", 0.3)),
        seed=seed,
        salt_pepper_density=float(opts.get("salt-pepper-density", 0.05)),
        blur_sigma=float(opts.get("blur-sigma", 2.0)),
        word_drop_prob=float(opts.get("word-drop-prob", 0.3)),
    )
    manifest_path = save_dataset(perturbed, spec, out / "dataset")
    sidecar = out / "interventions.json"
    save_assignments(assignments, sidecar)
    print(f"manifest: {manifest_path}")
    print(f"interventions: {sidecar}")
    return 0


def _train_config(opts: _Options, seed: int) -> TrainConfig:
    return TrainConfig(
        epochs=int(opts.get("epochs", 60)),
        learning_rate=float(opts.get("learning-rate", 1e-6)),
        batch_size=int(opts.get("batch-size", 32)),
        seed=seed,
        max_steps=opts.get("max-steps", None),
        use_conditional_model=not bool(opts.get("no-conditional-model", False)),
        use_helpers=not bool(opts.get("no-helpers", False)),
        use_cam=not bool(opts.get("no-cam", False)),
        use_bow=bool(opts.get("bow", False)),
        use_3d_encoder=not bool(opts.get("no-3d-encoder", False)),
        encoder=opts.get("encoder", None),
        latent_dim=int(opts.get("latent-dim", 16)),
        hidden_dim=int(opts.get("hidden-dim", 64)),
        kappa=opts.get("kappa", None),
    )


def cmd_train(args) -> int:
    opts = _Options(args)
    out = opts.out_dir()
    seed = int(opts.get("seed", 0))
    spec = DatasetSpec.for_name(opts.get("dataset", "synthetic"))
    records = load_dataset(opts.get("manifest", None), spec)
    sidecar = opts.get("interventions", None)
    assignments = load_assignments(sidecar) if sidecar else None
    config = _train_config(opts, seed)
    k = int(opts.get("splits", 5))
    plan = make_splits([r.video_id for r in records], k=k, train_frac=float(opts.get("train-frac", 0.8)), seed=seed)
    ckpt_dir = out / "checkpoints"
    for i in range(plan.k):
        result = train(
            records,
            assignments,
            spec,
            config,
            train_ids=plan.train_ids[i],
            eval_ids=plan.eval_ids[i],
            out_dir=ckpt_dir,
            checkpoint_tag=f"split{i}",
        )
        write_history_csv(out / f"loss_split{i}.csv", result.history)
        last = result.history[-1].total if result.history else float("nan")
        val = f"{result.best_val_f1:.4f}" if result.best_val_f1 is not None else "n/a"
        print(f"split {i}: {len(result.history)} steps, final loss {last:.4f}, best val F1 {val}")
    print(f"checkpoints: {ckpt_dir}")
    return 0


def _load_split_models(ckpt_dir: Path, k: int):
    models = []
    for i in range(k):
        best = ckpt_dir / f"split{i}_best.ckpt"
        final = ckpt_dir / f"split{i}_final.ckpt"
        path = best if best.exists() else final
        if not path.exists():
            raise StateError(f"no checkpoint for split {i} under {ckpt_dir}")
        model, _meta = load_checkpoint(path)
        models.append(model)
    return models


def cmd_eval(args) -> int:
    opts = _Options(args)
    out = opts.out_dir()
    seed = int(opts.get("seed", 0))
    spec = DatasetSpec.for_name(opts.get("dataset", "synthetic"))
    records = load_dataset(opts.get("manifest", None), spec)
    k = int(opts.get("splits", 5))
    plan = make_splits([r.video_id for r in records], k=k, train_frac=float(opts.get("train-frac", 0.8)), seed=seed)
    budget_frac = float(opts.get("budget-frac", 0.15))
    aggregation = opts.get("aggregation", "mean")
    models = _load_split_models(Path(opts.get("checkpoint-dir", None)), plan.k)

    report = evaluate_protocol(models, records, plan, budget_frac, aggregation)
    report_path = out / "eval_report.json"
    save_report(report, report_path)

    by_id = {r.video_id: r for r in records}
    for s in range(plan.k):
        for vid in plan.eval_ids[s]:
            record = by_id[vid]
            budget = int(np.floor(budget_frac * record.n_frames))
            scores = models[s].importance_scores(record)
            pred = generate_summary(scores, budget)
            truth = generate_summary(record.mean_scores(), budget)
            dump_video_scores(out / f"scores_split{s}_{vid}.csv", record, scores, pred, truth)
    print(f"mean F1 over {plan.k} splits: {report.mean_f1:.4f}")
    print(f"report: {report_path}")
    return 0


def cmd_summarize(args) -> int:
    opts = _Options(args)
    out = opts.out_dir()
    spec = DatasetSpec.for_name(opts.get("dataset", "synthetic"))
    records = load_dataset(opts.get("manifest", None), spec)
    video_id = opts.get("video-id", None)
    matches = [r for r in records if r.video_id == video_id]
    if not matches:
        raise ValidationError(f"video {video_id!r} not in manifest")
    record = matches[0]
    model, _meta = load_checkpoint(opts.get("checkpoint", None))
    budget = opts.get("budget", None)
    if budget is None:
        budget = int(np.floor(float(opts.get("budget-frac", 0.15)) * record.n_frames))
    scores = model.importance_scores(record)
    mask = generate_summary(scores, int(budget))
    payload = {
        "video_id": record.video_id,
        "n_frames": record.n_frames,
        "budget": int(budget),
        "selected_indices": [int(i) for i in np.flatnonzero(mask)],
        "mask": mask.astype(int).tolist(),
    }
    path = out / f"summary_{record.video_id}.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
    print(f"summary: {path}")
    return 0


def plot_scores(csv_path, out_path) -> int:
    """Render the score bars (selected grey, discarded red); returns bar count."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = []
    with open(csv_path, "r", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            rows.append((int(row["frame_index"]), float(row["score"]), int(row["selected"])))
    if not rows:
        raise ValidationError(f"no rows in {csv_path}")
    idx = [r[0] for r in rows]
    vals = [r[1] for r in rows]
    colors = ["#7f7f7f" if r[2] else "#d62728" for r in rows]
    fig, ax = plt.subplots(figsize=(max(6.0, len(rows) / 20.0), 3.0))
    ax.bar(idx, vals, color=colors, width=1.0)
    ax.set_xlabel("frame index")
    ax.set_ylabel("score")
    fig.tight_layout()
    fig.savefig(out_path, metadata={"Software": None})
    plt.close(fig)
    return len(rows)


def cmd_plot_scores(args) -> int:
    opts = _Options(args)
    csv_path = Path(args.scores_csv)
    if not csv_path.exists():
        raise DataLoadError(f"score CSV not found: {csv_path}")
    out_path = opts.get("out", None)
    if out_path is None:
        out_path = opts.out_dir() / (csv_path.stem + ".png")
    n = plot_scores(csv_path, out_path)
    print(f"{n} bars -> {out_path}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if not getattr(args, "func", None):
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.func(args)
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3
    except (DataLoadError, ValidationError, StateError, CondsumError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

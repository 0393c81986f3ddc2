"""Objective assembly, the optimization loop, checkpointing and gradient
verification.

The trained objective sums, per instance, the helper log-likelihoods
log q(t*|x) + log q(y*|x, t*) and the single-sample (or averaged)
reparameterized estimate of

    E_q(z|x,t,y)[ log p(x|z) + log p(t|z) + log p(y|t,z) + log p(z) - log q(z|x,t,y) ].

That quantity is maximized; the trainer minimizes its negation, so every
reported loss component is a negative log-likelihood contribution and the
total is their sum.

Ablations: use_helpers=False drops the helper terms from the graph;
use_conditional_model=False replaces the whole objective with the plain
cross-entropy of q(y|x, t).
"""
from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import backend
from .autodiff import Tensor
from .dataset import DatasetSpec, VideoRecord
from .encoding import Vocabulary
from .errors import NumericalError, StateError
from .evaluation import video_f1
from .intervention import InterventionAssignment
from .ioutil import read_arrays, write_arrays
from .model import (
    ConditionalInstance,
    SummarizerModel,
    helper_log_probs,
    latent_log_density,
    posterior_infer,
    prior_log_terms,
    sample_latent,
)
from .nn import zero_grads

CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    """Optimizer settings and ablation switches.

    The stock learning rate (1e-6, 60 epochs) matches full-scale runs;
    desk-scale overfit experiments use lr=1e-3 with a step cap instead.
    """

    epochs: int = 60
    learning_rate: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    seed: int = 0
    mc_samples: int = 1
    max_steps: int | None = None
    # ablation switches
    use_conditional_model: bool = True
    use_helpers: bool = True
    use_cam: bool = True
    use_3d_encoder: bool = True
    use_bow: bool = False
    # architecture
    encoder: str | None = None  # None -> derived from use_3d_encoder
    visual_dim: int = 64
    token_dim: int = 64
    attn_dim: int = 64
    ffn_dim: int = 128
    fused_dim: int = 64
    latent_dim: int = 16
    hidden_dim: int = 64
    kappa: int | None = None
    single_stage: bool = False

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.mc_samples < 1:
            raise ValueError("epochs must be >= 0, batch_size and mc_samples >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")

    def resolved_encoder(self) -> str:
        if self.encoder is not None:
            return self.encoder
        return "spatiotemporal" if self.use_3d_encoder else "per_frame_2d"


@dataclass
class LossReport:
    step: int
    total: float
    helper_t: float
    helper_y: float
    recon: float
    outcome: float
    intervention: float
    kl_mc: float

    def validate(self) -> None:
        for name, value in asdict(self).items():
            if not math.isfinite(value):
                raise NumericalError(f"loss term {name} is not finite: {value}")


def build_vocabulary(records: list[VideoRecord]) -> Vocabulary | None:
    queries = [r.query for r in records if r.query]
    return Vocabulary.build(queries) if queries else None


def build_instances(
    records: list[VideoRecord],
    assignments: dict[str, InterventionAssignment] | None,
    spec: DatasetSpec,
    model: SummarizerModel,
) -> list[ConditionalInstance]:
    """Turn records into per-frame training units with observed (t*, y*)."""
    instances = []
    for record in records:
        features = model.encode_record(record)
        tokens = model.tokens_for(record)
        classes = record.frame_classes(spec)
        if assignments and record.video_id in assignments:
            t_labels = assignments[record.video_id].t_labels()
        else:
            t_labels = np.zeros(record.n_frames, dtype=np.int8)
        for i in range(record.n_frames):
            instances.append(
                ConditionalInstance(
                    video_id=record.video_id,
                    frame_index=i,
                    feature=features[i],
                    t=int(t_labels[i]),
                    y=int(classes[i]),
                    tokens=tokens,
                )
            )
    return instances


def _fused_batch(batch: list[ConditionalInstance], model: SummarizerModel):
    """Fuse the batch through attention, grouping frames by video so each
    video's token branch is computed once. Returns (x, t, y) with rows in
    group order."""
    groups: dict[str, list[ConditionalInstance]] = {}
    for inst in batch:
        groups.setdefault(inst.video_id, []).append(inst)
    parts = []
    t_list: list[int] = []
    y_list: list[int] = []
    for video_id, members in groups.items():
        feats = np.stack([m.feature for m in members])
        tokens = members[0].tokens if model.use_cam else None
        parts.append(model.fuse(feats, tokens))
        t_list.extend(m.t for m in members)
        y_list.extend(m.y for m in members)
    x = parts[0] if len(parts) == 1 else ad.concat(parts, axis=0)
    return x, np.asarray(t_list, dtype=np.float64), np.asarray(y_list, dtype=np.int64)


def compute_loss(
    batch: list[ConditionalInstance],
    model: SummarizerModel,
    config: TrainConfig,
    rng: np.random.Generator | None = None,
    eps_draws: list[np.ndarray] | None = None,
    step: int = 0,
) -> tuple[Tensor, LossReport]:
    """Assemble the minimization objective over one batch.

    ``eps_draws`` freezes the reparameterization noise (one (B, latent_dim)
    array per Monte Carlo sample) so the loss becomes a deterministic
    function of the parameters; otherwise noise comes from ``rng``.
    """
    if not batch:
        raise ValueError("batch must be nonempty")
    x, t_arr, y_arr = _fused_batch(batch, model)
    params = model.params

    if not config.use_conditional_model:
        # plain supervised baseline: cross-entropy of the outcome helper
        _log_qt, log_qy = helper_log_probs(x, t_arr, y_arr, params)
        total = -log_qy.sum()
        report = LossReport(
            step=step,
            total=total.item(),
            helper_t=0.0,
            helper_y=-log_qy.data.sum(),
            recon=0.0,
            outcome=0.0,
            intervention=0.0,
            kl_mc=0.0,
        )
        report.validate()
        return total, report

    g = posterior_infer(x, y_arr, t_arr, params)
    n_mc = config.mc_samples
    scale = 1.0 / n_mc
    acc: dict[str, Tensor] = {}
    for s in range(n_mc):
        if eps_draws is not None:
            eps = eps_draws[s]
        else:
            if rng is None:
                raise ValueError("compute_loss needs rng or eps_draws")
            eps = rng.standard_normal(g.mu.shape)
        z = sample_latent(g, eps=eps)
        terms = prior_log_terms(z, x, t_arr, y_arr, params)
        terms["elbo_gap"] = terms.pop("log_pz") - latent_log_density(z, g)
        for name, value in terms.items():
            acc[name] = value if name not in acc else acc[name] + value

    neg = {name: -(value.sum() * scale) for name, value in acc.items()}
    total = neg["log_px"] + neg["log_pt"] + neg["log_py"] + neg["elbo_gap"]

    helper_t_val = helper_y_val = 0.0
    if config.use_helpers:
        log_qt, log_qy = helper_log_probs(x, t_arr, y_arr, params)
        total = total + (-log_qt.sum()) + (-log_qy.sum())
        helper_t_val = -log_qt.data.sum()
        helper_y_val = -log_qy.data.sum()

    report = LossReport(
        step=step,
        total=total.item(),
        helper_t=float(helper_t_val),
        helper_y=float(helper_y_val),
        recon=neg["log_px"].item(),
        outcome=neg["log_py"].item(),
        intervention=neg["log_pt"].item(),
        kl_mc=neg["elbo_gap"].item(),
    )
    report.validate()
    return total, report


class Adam:
    """Adam with per-parameter first/second moment state.

    Parameters that did not participate in the step's graph (grad None)
    are skipped entirely, preserving exact zeros for ablated branches.
    """

    def __init__(self, params: dict[str, Tensor], config: TrainConfig):
        self.params = params
        self.lr = config.learning_rate
        self.beta1 = config.beta1
        self.beta2 = config.beta2
        self.eps = config.eps
        self.m = {k: np.zeros(p.data.size) for k, p in params.items()}
        self.v = {k: np.zeros(p.data.size) for k, p in params.items()}
        self.t = {k: 0 for k in params}

    def step(self) -> None:
        for name, p in self.params.items():
            if p.grad is None:
                continue
            self.t[name] += 1
            backend.adam_step(
                p.data.reshape(-1),
                np.ascontiguousarray(p.grad, dtype=np.float64).reshape(-1),
                self.m[name],
                self.v[name],
                self.t[name],
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
            )


@dataclass
class TrainResult:
    model: SummarizerModel
    history: list[LossReport]
    best_val_f1: float | None = None
    checkpoint_path: Path | None = None
    best_checkpoint_path: Path | None = None


def train(
    records: list[VideoRecord],
    assignments: dict[str, InterventionAssignment] | None,
    spec: DatasetSpec,
    config: TrainConfig,
    train_ids: list[str] | None = None,
    eval_ids: list[str] | None = None,
    out_dir=None,
    checkpoint_tag: str = "model",
    val_budget_frac: float = 0.15,
    val_aggregation: str = "mean",
) -> TrainResult:
    """Run the optimization loop; deterministic under config.seed.

    Writes a final checkpoint (and a best-validation one when eval_ids are
    given) under out_dir. If the loss goes non-finite the last finite
    parameters are checkpointed and NumericalError is raised.
    """
    by_id = {r.video_id: r for r in records}
    train_records = [by_id[v] for v in train_ids] if train_ids else list(records)
    eval_records = [by_id[v] for v in eval_ids] if eval_ids else []

    vocab = build_vocabulary(train_records)
    model = SummarizerModel(
        spec,
        vocab,
        seed=config.seed,
        encoder=config.resolved_encoder(),
        visual_dim=config.visual_dim,
        token_dim=config.token_dim,
        attn_dim=config.attn_dim,
        ffn_dim=config.ffn_dim,
        fused_dim=config.fused_dim,
        latent_dim=config.latent_dim,
        hidden_dim=config.hidden_dim,
        kappa=config.kappa,
        single_stage=config.single_stage,
        use_cam=config.use_cam,
        use_bow=config.use_bow,
        use_conditional_model=config.use_conditional_model,
    )
    instances = build_instances(train_records, assignments, spec, model)
    params = model.parameters()
    optimizer = Adam(params, config)
    shuffle_rng = np.random.default_rng([config.seed & 0xFFFFFFFF, 1])
    noise_rng = np.random.default_rng([config.seed & 0xFFFFFFFF, 2])

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    final_path = out_dir / f"{checkpoint_tag}_final.ckpt" if out_dir else None
    best_path = out_dir / f"{checkpoint_tag}_best.ckpt" if out_dir else None

    history: list[LossReport] = []
    best_val = None
    last_good = _snapshot(params)
    step = 0
    done = False
    for _epoch in range(config.epochs):
        if done:
            break
        order = shuffle_rng.permutation(len(instances))
        for start in range(0, len(instances), config.batch_size):
            batch = [instances[i] for i in order[start : start + config.batch_size]]
            zero_grads(params)
            try:
                loss, report = compute_loss(
                    batch, model, config, rng=noise_rng, step=step
                )
            except NumericalError:
                _restore(params, last_good)
                if final_path is not None:
                    save_checkpoint(final_path, model, config, step, best_val)
                raise
            last_good = _snapshot(params)  # these params produced a finite loss
            loss.backward()
            optimizer.step()
            history.append(report)
            step += 1
            if config.max_steps is not None and step >= config.max_steps:
                done = True
                break
        if eval_records:
            val = float(
                np.mean(
                    [video_f1(model, r, val_budget_frac, val_aggregation).f1 for r in eval_records]
                )
            )
            if best_val is None or val > best_val:
                best_val = val
                if best_path is not None:
                    save_checkpoint(best_path, model, config, step, val)

    if final_path is not None:
        save_checkpoint(final_path, model, config, step, best_val)
    if best_path is not None and best_val is None:
        best_path = None
    return TrainResult(model, history, best_val, final_path, best_path)


def _snapshot(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {k: p.data.copy() for k, p in params.items()}


def _restore(params: dict[str, Tensor], snapshot: dict[str, np.ndarray]) -> None:
    for k, p in params.items():
        p.data[...] = snapshot[k]


# -- gradient checking -------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    tolerance: float
    per_param: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def gradient_check(
    loss_fn,
    params: dict[str, Tensor],
    tolerance: float = 1e-4,
    fd_step: float = 1e-5,
) -> GradCheckReport:
    """Compare analytic gradients of a deterministic scalar loss against
    central finite differences, elementwise over every parameter tensor.

    Failure is reported, not raised.
    """
    zero_grads(params)
    loss = loss_fn()
    loss.backward()
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }
    per_param: dict[str, float] = {}
    worst = 0.0
    worst_name = ""
    for name, p in params.items():
        flat = p.data.reshape(-1)
        an = analytic[name].reshape(-1)
        rel_max = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + fd_step
            up = loss_fn().item()
            flat[i] = orig - fd_step
            down = loss_fn().item()
            flat[i] = orig
            numeric = (up - down) / (2.0 * fd_step)
            denom = max(abs(an[i]), abs(numeric), 1e-6)
            rel_max = max(rel_max, abs(an[i] - numeric) / denom)
        per_param[name] = rel_max
        if rel_max > worst:
            worst = rel_max
            worst_name = name
    zero_grads(params)
    return GradCheckReport(worst, worst_name, tolerance, per_param)


def gradient_check_loss(
    model: SummarizerModel,
    batch: list[ConditionalInstance],
    config: TrainConfig,
    noise_seed: int = 0,
    tolerance: float = 1e-4,
    fd_step: float = 1e-5,
) -> GradCheckReport:
    """Gradient-check compute_loss with frozen reparameterization noise."""
    rng = np.random.default_rng(noise_seed)
    eps_draws = [
        rng.standard_normal((len(batch), model.params.latent_dim))
        for _ in range(config.mc_samples)
    ]

    def loss_fn():
        return compute_loss(batch, model, config, eps_draws=eps_draws)[0]

    return gradient_check(loss_fn, model.parameters(), tolerance, fd_step)


# -- checkpoints ---------------------------------------------------------------


def save_checkpoint(path, model: SummarizerModel, config: TrainConfig | None, step: int, val_f1) -> None:
    arrays = {name: p.data for name, p in model.parameters().items()}
    meta = {
        "checkpoint_version": CHECKPOINT_VERSION,
        "step": step,
        "val_f1": val_f1,
        "config": asdict(config) if config is not None else None,
        "model": model.init_kwargs(),
        "spec": {
            "name": model.spec.name,
            "score_min": model.spec.score_min,
            "score_max": model.spec.score_max,
            "n_classes": model.spec.n_classes,
            "has_query": model.spec.has_query,
        },
        "vocab": model.vocab.tokens if model.vocab is not None else None,
    }
    write_arrays(path, arrays, meta)


def load_checkpoint(path) -> tuple[SummarizerModel, dict]:
    path = Path(path)
    if not path.exists():
        raise StateError(f"checkpoint not found: {path}")
    arrays, meta = read_arrays(path)
    spec_info = meta["spec"]
    spec = DatasetSpec(
        name=spec_info["name"],
        score_min=spec_info["score_min"],
        score_max=spec_info["score_max"],
        n_classes=spec_info["n_classes"],
        has_query=spec_info["has_query"],
    )
    vocab = Vocabulary(meta["vocab"]) if meta.get("vocab") else None
    model = SummarizerModel(spec, vocab, **meta["model"])
    params = model.parameters()
    for name, p in params.items():
        if name not in arrays:
            raise StateError(f"checkpoint missing parameter {name}")
        if tuple(arrays[name].shape) != tuple(p.data.shape):
            raise StateError(f"checkpoint shape mismatch for {name}")
        p.data[...] = arrays[name].astype(np.float64)
    return model, meta


def write_history_csv(path, history: list[LossReport]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,total,helper_t,helper_y,recon,outcome,intervention,kl_mc\n")
        for r in history:
            fh.write(
                f"{r.step},{r.total!r},{r.helper_t!r},{r.helper_y!r},"
                f"{r.recon!r},{r.outcome!r},{r.intervention!r},{r.kl_mc!r}\n"
            )

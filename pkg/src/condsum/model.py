"""Probabilistic core of the summarizer.

Generative side (conditioned on a latent vector z):
    p(z)        standard normal, componentwise
    p(x|z)      unit-variance Gaussian around a reconstructed feature vector
    p(t|z)      Bernoulli on a logistic logit (t = was the input perturbed)
    p(y|z,t)    class softmax, with separate heads for t=1 and t=0

Inference side:
    q(z|x,y,t)  diagonal Gaussian; a shared trunk reads (x, one-hot y) and
                t selects between two (mean, variance) head pairs
    q(t|x)      helper Bernoulli so t is predictable for unseen inputs
    q(y|x,t)    helper class softmax, again with t-selected heads

Variances are squashed through a logistic, so they live in (0, 1).
All heads are two-layer tanh perceptrons. Probabilities are clamped to
[1e-12, 1 - 1e-12] before every log.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .attention import AttentionParams, conditional_attention_forward
from .autodiff import Tensor
from .dataset import DatasetSpec, VideoRecord
from .encoding import TokenMatrix, Vocabulary, embed_query, encode_video
from .errors import StateError
from .nn import MLP2

LOG_2PI = float(np.log(2.0 * np.pi))
PROB_EPS = 1e-12


@dataclass
class ConditionalInstance:
    """One training unit: a frame's features, intervention label and class."""

    video_id: str
    frame_index: int
    feature: np.ndarray  # (visual_dim,) encoder output
    t: int
    y: int
    tokens: TokenMatrix | None = None  # shared per video
    x: np.ndarray | None = None  # fused vector, filled at prediction time

    def __post_init__(self):
        if self.t not in (0, 1):
            raise ValueError(f"intervention label must be 0 or 1, got {self.t}")
        if self.y < 0:
            raise ValueError(f"outcome class must be >= 0, got {self.y}")
        if not np.all(np.isfinite(self.feature)):
            raise ValueError("instance features contain non-finite values")


@dataclass
class GaussianLatent:
    """Diagonal Gaussian over the latent vector; variance in (0, 1)."""

    mu: Tensor
    var: Tensor


class ModelParams:
    """All probabilistic sub-networks, each a two-layer tanh perceptron."""

    def __init__(
        self,
        rng: np.random.Generator,
        fused_dim: int,
        latent_dim: int,
        n_classes: int,
        hidden_dim: int = 64,
    ):
        self.fused_dim = fused_dim
        self.latent_dim = latent_dim
        self.n_classes = n_classes
        self.hidden_dim = hidden_dim
        h = hidden_dim
        # generative heads
        self.intervention_net = MLP2(rng, latent_dim, h, 1)
        self.outcome_net_t1 = MLP2(rng, latent_dim, h, n_classes)
        self.outcome_net_t0 = MLP2(rng, latent_dim, h, n_classes)
        self.feature_mean_net = MLP2(rng, latent_dim, h, fused_dim)
        # posterior trunk and t-selected heads
        self.shared_net = MLP2(rng, fused_dim + n_classes, h, h)
        self.post_mu_t0 = MLP2(rng, h, h, latent_dim)
        self.post_var_t0 = MLP2(rng, h, h, latent_dim)
        self.post_mu_t1 = MLP2(rng, h, h, latent_dim)
        self.post_var_t1 = MLP2(rng, h, h, latent_dim)
        # helpers
        self.helper_t_net = MLP2(rng, fused_dim, h, 1)
        self.helper_y_t1 = MLP2(rng, fused_dim, h, n_classes)
        self.helper_y_t0 = MLP2(rng, fused_dim, h, n_classes)

    def parameters(self, prefix: str = "model") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name in (
            "intervention_net",
            "outcome_net_t1",
            "outcome_net_t0",
            "feature_mean_net",
            "shared_net",
            "post_mu_t0",
            "post_var_t0",
            "post_mu_t1",
            "post_var_t1",
            "helper_t_net",
            "helper_y_t1",
            "helper_y_t0",
        ):
            out.update(getattr(self, name).parameters(f"{prefix}.{name}"))
        return out


def _as_batch(arr, width: int | None = None) -> Tensor:
    t = arr if isinstance(arr, Tensor) else Tensor(np.asarray(arr, dtype=np.float64))
    if t.data.ndim == 1:
        t = t.reshape(1, -1)
    return t


def _label_arrays(t, y, n_classes: int):
    t_arr = np.atleast_1d(np.asarray(t, dtype=np.float64))
    y_arr = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if np.any((t_arr != 0.0) & (t_arr != 1.0)):
        raise ValueError("intervention labels must be binary")
    if np.any(y_arr < 0) or np.any(y_arr >= n_classes):
        raise ValueError(f"outcome class out of range [0, {n_classes})")
    return t_arr, y_arr


def _log_bernoulli(logit: Tensor, t_col: np.ndarray) -> Tensor:
    p = ad.clip(ad.sigmoid(logit), PROB_EPS, 1.0 - PROB_EPS)
    return Tensor(t_col) * ad.log(p) + Tensor(1.0 - t_col) * ad.log(1.0 - p)


def prior_log_terms(z, x, t, y, params: ModelParams) -> dict[str, Tensor]:
    """Log densities of the generative side, each a (batch,) tensor."""
    z = _as_batch(z)
    x = _as_batch(x)
    t_arr, y_arr = _label_arrays(t, y, params.n_classes)

    log_pz = ((z * z + LOG_2PI) * -0.5).sum(axis=1)

    recon = params.feature_mean_net(z)
    diff = x - recon
    log_px = ((diff * diff + LOG_2PI) * -0.5).sum(axis=1)

    t_logit = params.intervention_net(z).reshape(-1)
    log_pt = _log_bernoulli(t_logit, t_arr)

    t_col = t_arr[:, None]
    logits = Tensor(t_col) * params.outcome_net_t1(z) + Tensor(1.0 - t_col) * params.outcome_net_t0(z)
    log_py = ad.gather_rows(ad.log_softmax(logits, axis=-1), y_arr)

    return {"log_pz": log_pz, "log_px": log_px, "log_pt": log_pt, "log_py": log_py}


def posterior_infer(x, y, t, params: ModelParams) -> GaussianLatent:
    """Gaussian posterior over z given fused features, class and t label.

    t picks between the two head pairs; with binary t exactly one branch
    contributes, so the other branch's parameters get zero gradient.
    """
    x = _as_batch(x)
    t_arr, y_arr = _label_arrays(t, y, params.n_classes)
    onehot = np.zeros((y_arr.size, params.n_classes))
    onehot[np.arange(y_arr.size), y_arr] = 1.0

    shared = params.shared_net(ad.concat([x, Tensor(onehot)], axis=-1))
    mu0 = params.post_mu_t0(shared)
    var0 = ad.clip(ad.sigmoid(params.post_var_t0(shared)), PROB_EPS, 1.0 - PROB_EPS)
    mu1 = params.post_mu_t1(shared)
    var1 = ad.clip(ad.sigmoid(params.post_var_t1(shared)), PROB_EPS, 1.0 - PROB_EPS)

    t_col = Tensor(t_arr[:, None])
    one_minus = Tensor(1.0 - t_arr[:, None])
    return GaussianLatent(
        mu=t_col * mu1 + one_minus * mu0,
        var=t_col * var1 + one_minus * var0,
    )


def sample_latent(g: GaussianLatent, seed: int | None = None, eps: np.ndarray | None = None) -> Tensor:
    """Reparameterized draw z = mu + sqrt(var) * eps, differentiable in (mu, var)."""
    if eps is None:
        eps = np.random.default_rng(seed).standard_normal(g.mu.shape)
    return g.mu + ad.sqrt(g.var) * Tensor(eps)


def latent_log_density(z: Tensor, g: GaussianLatent) -> Tensor:
    """log q(z | mu, var) for a diagonal Gaussian, (batch,)."""
    diff = z - g.mu
    return ((ad.log(g.var) + diff * diff / g.var + LOG_2PI) * -0.5).sum(axis=1)


def kl_standard_normal(mu: np.ndarray, var: np.ndarray) -> np.ndarray:
    """Closed-form KL(N(mu, var) || N(0, I)) per batch row."""
    mu = np.atleast_2d(np.asarray(mu, dtype=np.float64))
    var = np.atleast_2d(np.asarray(var, dtype=np.float64))
    return 0.5 * np.sum(var + mu**2 - 1.0 - np.log(var), axis=-1)


def helper_predict(x, params: ModelParams) -> dict[str, Tensor]:
    """Helper distributions: q(t=1|x) and q(y|x, t) for both t branches."""
    x = _as_batch(x)
    t1_prob = ad.clip(ad.sigmoid(params.helper_t_net(x).reshape(-1)), PROB_EPS, 1.0 - PROB_EPS)
    y_probs_t1 = ad.softmax(params.helper_y_t1(x), axis=-1)
    y_probs_t0 = ad.softmax(params.helper_y_t0(x), axis=-1)
    return {"t1_prob": t1_prob, "y_probs_t1": y_probs_t1, "y_probs_t0": y_probs_t0}


def helper_log_probs(x, t, y, params: ModelParams) -> tuple[Tensor, Tensor]:
    """log q(t=t*|x) and log q(y=y*|x, t*), each (batch,)."""
    x = _as_batch(x)
    t_arr, y_arr = _label_arrays(t, y, params.n_classes)
    log_qt = _log_bernoulli(params.helper_t_net(x).reshape(-1), t_arr)
    t_col = t_arr[:, None]
    logits = Tensor(t_col) * params.helper_y_t1(x) + Tensor(1.0 - t_col) * params.helper_y_t0(x)
    log_qy = ad.gather_rows(ad.log_softmax(logits, axis=-1), y_arr)
    return log_qt, log_qy


class SummarizerModel:
    """Bundles encoders, attention and the probabilistic nets behind one
    prediction surface."""

    def __init__(
        self,
        spec: DatasetSpec,
        vocab: Vocabulary | None,
        seed: int = 0,
        encoder: str = "toy",
        visual_dim: int = 64,
        token_dim: int = 64,
        attn_dim: int = 64,
        ffn_dim: int = 128,
        fused_dim: int = 64,
        latent_dim: int = 16,
        hidden_dim: int = 64,
        kappa: int | None = None,
        single_stage: bool = False,
        use_cam: bool = True,
        use_bow: bool = False,
        use_conditional_model: bool = True,
        use_text_gate: bool = True,
        use_visual_gate: bool = True,
        use_topk: bool = True,
    ):
        self.spec = spec
        self.vocab = vocab
        self.seed = seed
        self.encoder = encoder
        self.visual_dim = visual_dim
        self.token_dim = token_dim
        self.use_cam = use_cam
        self.use_bow = use_bow
        self.use_conditional_model = use_conditional_model
        rng = np.random.default_rng([seed & 0xFFFFFFFF, 0x5EED])
        self.attention = AttentionParams(
            rng,
            token_dim=token_dim,
            attn_dim=attn_dim,
            ffn_dim=ffn_dim,
            visual_dim=visual_dim,
            fused_dim=fused_dim,
            kappa=kappa,
            single_stage=single_stage,
            use_topk=use_topk,
            use_text_gate=use_text_gate,
            use_visual_gate=use_visual_gate,
        )
        self.params = ModelParams(
            rng,
            fused_dim=fused_dim,
            latent_dim=latent_dim,
            n_classes=spec.n_classes,
            hidden_dim=hidden_dim,
        )

    # -- parameter access -----------------------------------------------

    def parameters(self) -> dict[str, Tensor]:
        out = self.attention.parameters()
        out.update(self.params.parameters())
        return out

    def init_kwargs(self) -> dict:
        return {
            "seed": self.seed,
            "encoder": self.encoder,
            "visual_dim": self.visual_dim,
            "token_dim": self.token_dim,
            "attn_dim": self.attention.attn_dim,
            "ffn_dim": self.attention.ffn_in.W.shape[1],
            "fused_dim": self.attention.fused_dim,
            "latent_dim": self.params.latent_dim,
            "hidden_dim": self.params.hidden_dim,
            "kappa": self.attention.kappa,
            "single_stage": self.attention.single_stage,
            "use_cam": self.use_cam,
            "use_bow": self.use_bow,
            "use_conditional_model": self.use_conditional_model,
            "use_text_gate": self.attention.use_text_gate,
            "use_visual_gate": self.attention.use_visual_gate,
            "use_topk": self.attention.use_topk,
        }

    # -- feature plumbing -------------------------------------------------

    def encode_record(self, record: VideoRecord) -> np.ndarray:
        return encode_video(record, self.encoder, self.visual_dim, self.seed).matrix

    def tokens_for(self, record: VideoRecord) -> TokenMatrix | None:
        if not self.use_cam or record.query is None or self.vocab is None:
            return None
        mode = "bow" if self.use_bow else "token"
        return embed_query(record.query, self.vocab, self.token_dim, mode=mode, seed=self.seed)

    def fuse(self, features, tokens) -> Tensor:
        fused, _ws = conditional_attention_forward(features, tokens, self.attention)
        return fused

    # -- inference ----------------------------------------------------------

    def predict_frame_scores(self, record: VideoRecord, t_override=None) -> np.ndarray:
        """Per-frame class distributions, (n_frames, n_classes).

        Deterministic: helpers pick t and a provisional class, the
        posterior mean gives z, and the t-selected outcome head scores the
        frame. ``t_override`` substitutes stored intervention labels for
        the helper's t estimate.
        """
        if self.params is None:
            raise StateError("model has no parameters")
        x = self.fuse(self.encode_record(record), self.tokens_for(record))
        helpers = helper_predict(x, self.params)
        if t_override is not None:
            t_hat = np.asarray(t_override, dtype=np.float64)
            if t_hat.shape[0] != record.n_frames:
                raise ValueError("t_override length must match n_frames")
        else:
            t_hat = (helpers["t1_prob"].data > 0.5).astype(np.float64)
        t_col = t_hat[:, None]
        probs_sel = t_col * helpers["y_probs_t1"].data + (1.0 - t_col) * helpers["y_probs_t0"].data
        if not self.use_conditional_model:
            return probs_sel
        y_hat = probs_sel.argmax(axis=1)

        g = posterior_infer(x, y_hat, t_hat, self.params)
        z = g.mu  # deterministic inference: posterior mean, no sampling
        logits = (
            Tensor(t_col) * self.params.outcome_net_t1(z)
            + Tensor(1.0 - t_col) * self.params.outcome_net_t0(z)
        )
        return ad.softmax(logits, axis=-1).data

    def importance_scores(self, record: VideoRecord, t_override=None) -> np.ndarray:
        """Scalar frame importance: expected class index under p(y)."""
        probs = self.predict_frame_scores(record, t_override=t_override)
        classes = np.arange(probs.shape[1], dtype=np.float64)
        return probs @ classes

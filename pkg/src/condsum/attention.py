"""Conditional attention: dense dot-product attention over query tokens,
row-wise top-k sparsification, gated text/visual branches, and fusion of
both modalities into one feature vector per frame.

The sparse stage keeps, per row, the k largest scaled dot-product logits,
sets the rest to -inf, renormalizes with softmax, and multiplies the
result into the dense attention output (a two-stage product). A
single_stage flag multiplies the sparse weights into the raw value matrix
instead; it exists for comparison and is off by default.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import backend
from .autodiff import Tensor
from .encoding import TokenMatrix
from .errors import ValidationError
from .nn import LayerNorm, Linear, glorot_uniform


@dataclass
class AttentionWorkspace:
    """Intermediate products of one attention forward pass (detached)."""

    tokens: np.ndarray | None = None
    query: np.ndarray | None = None
    key: np.ndarray | None = None
    value: np.ndarray | None = None
    logits: np.ndarray | None = None  # scaled dot products, (n, n)
    attn_weights: np.ndarray | None = None  # dense softmax rows
    masked_logits: np.ndarray | None = None  # -inf outside the top-k
    sparse_weights: np.ndarray | None = None  # softmax of masked logits
    values_dense: np.ndarray | None = None  # dense attention output
    values_topk: np.ndarray | None = None  # sparse-stage output
    text_vec: np.ndarray | None = None  # pooled text branch, (attn_dim,)
    visual_vec: np.ndarray | None = None  # gated features, (n_frames, visual_dim)
    fused: np.ndarray | None = None  # (n_frames, fused_dim)


class AttentionParams:
    """Learnable state of the conditional attention module."""

    def __init__(
        self,
        rng: np.random.Generator,
        token_dim: int = 64,
        attn_dim: int = 64,
        ffn_dim: int = 128,
        visual_dim: int = 64,
        fused_dim: int = 64,
        kappa: int | None = None,
        single_stage: bool = False,
        use_topk: bool = True,
        use_text_gate: bool = True,
        use_visual_gate: bool = True,
    ):
        self.token_dim = token_dim
        self.attn_dim = attn_dim
        self.visual_dim = visual_dim
        self.fused_dim = fused_dim
        self.kappa = kappa  # None -> ceil(n/2) at call time
        self.single_stage = single_stage
        self.use_topk = use_topk
        self.use_text_gate = use_text_gate
        self.use_visual_gate = use_visual_gate

        self.w_query = Tensor(glorot_uniform(rng, token_dim, attn_dim), requires_grad=True)
        self.w_key = Tensor(glorot_uniform(rng, token_dim, attn_dim), requires_grad=True)
        self.w_value = Tensor(glorot_uniform(rng, token_dim, attn_dim), requires_grad=True)
        self.norm = LayerNorm(attn_dim)
        self.ffn_in = Linear(rng, attn_dim, ffn_dim)
        self.ffn_out = Linear(rng, ffn_dim, attn_dim)
        self.text_gate = Tensor(np.ones(attn_dim), requires_grad=True)
        self.visual_gate = Tensor(np.ones(visual_dim), requires_grad=True)
        self.fuse_text = Tensor(glorot_uniform(rng, attn_dim, fused_dim), requires_grad=True)
        self.fuse_visual = Tensor(glorot_uniform(rng, visual_dim, fused_dim), requires_grad=True)
        self.fuse_bias = Tensor(np.zeros(fused_dim), requires_grad=True)
        self.visual_only = Linear(rng, visual_dim, fused_dim)

    def parameters(self, prefix: str = "attention") -> dict[str, Tensor]:
        out = {
            f"{prefix}.w_query": self.w_query,
            f"{prefix}.w_key": self.w_key,
            f"{prefix}.w_value": self.w_value,
            f"{prefix}.text_gate": self.text_gate,
            f"{prefix}.visual_gate": self.visual_gate,
            f"{prefix}.fuse_text": self.fuse_text,
            f"{prefix}.fuse_visual": self.fuse_visual,
            f"{prefix}.fuse_bias": self.fuse_bias,
        }
        out.update(self.norm.parameters(f"{prefix}.norm"))
        out.update(self.ffn_in.parameters(f"{prefix}.ffn_in"))
        out.update(self.ffn_out.parameters(f"{prefix}.ffn_out"))
        out.update(self.visual_only.parameters(f"{prefix}.visual_only"))
        return out

    def resolve_kappa(self, n_tokens: int) -> int:
        k = self.kappa if self.kappa is not None else int(np.ceil(n_tokens / 2))
        return max(1, min(k, n_tokens))


def topk_attention(tokens, params: AttentionParams) -> tuple[Tensor, AttentionWorkspace]:
    """Sparse attention over the token rows.

    Dense stage: A = softmax(Q K^T / sqrt(d)), values_dense = A V.
    Sparse stage: keep the top-k logits per row (-inf elsewhere, ties keep
    the lower column), renormalize, and multiply into values_dense.
    """
    t_data = tokens.T if isinstance(tokens, TokenMatrix) else np.asarray(tokens)
    if t_data.size == 0 or t_data.shape[0] < 1:
        raise ValueError("token matrix is empty")
    if t_data.shape[1] != params.token_dim:
        raise ValidationError(
            f"token width {t_data.shape[1]} does not match configured {params.token_dim}"
        )
    for name in ("w_query", "w_key", "w_value"):
        if not np.all(np.isfinite(getattr(params, name).data)):
            raise ValidationError(f"non-finite attention weights in {name}")

    t = Tensor(t_data)
    n = t_data.shape[0]
    q = t @ params.w_query
    k = t @ params.w_key
    v = t @ params.w_value
    logits = (q @ k.T) * (1.0 / np.sqrt(params.attn_dim))
    attn = ad.softmax(logits, axis=-1)
    values_dense = attn @ v

    kappa = params.resolve_kappa(n)
    if params.use_topk:
        keep = backend.topk_keep_mask(logits.data, kappa)
        sparse = ad.masked_softmax(logits, keep, axis=-1)
        values_topk = sparse @ (v if params.single_stage else values_dense)
        masked_logits = np.where(keep, logits.data, -np.inf)
    else:
        sparse = attn
        values_topk = values_dense
        masked_logits = logits.data.copy()

    ws = AttentionWorkspace(
        tokens=t_data.copy(),
        query=q.data.copy(),
        key=k.data.copy(),
        value=v.data.copy(),
        logits=logits.data.copy(),
        attn_weights=attn.data.copy(),
        masked_logits=masked_logits,
        sparse_weights=sparse.data.copy(),
        values_dense=values_dense.data.copy(),
        values_topk=values_topk.data.copy(),
    )
    return values_topk, ws


def conditional_attention_forward(
    features, tokens, params: AttentionParams
) -> tuple[Tensor, AttentionWorkspace]:
    """Fuse per-frame visual features with the query token summary.

    Text branch: top-k attention -> layer norm -> feed-forward -> gate ->
    mean pool over tokens. Visual branch: per-frame gated features. The
    fused output is a linear map of the concatenated branches. Without
    tokens the visual-only linear head is used instead.
    """
    feat = features.matrix if hasattr(features, "matrix") else np.asarray(features)
    if feat.ndim != 2 or feat.shape[1] != params.visual_dim:
        raise ValidationError(
            f"feature width {feat.shape[-1]} does not match configured {params.visual_dim}"
        )
    f = Tensor(feat)
    z_visual = f * params.visual_gate if params.use_visual_gate else f

    if tokens is None:
        fused = params.visual_only(z_visual)
        ws = AttentionWorkspace(visual_vec=z_visual.data.copy(), fused=fused.data.copy())
        return fused, ws

    values_topk, ws = topk_attention(tokens, params)
    normed = params.norm(values_topk)
    ffn = params.ffn_out(ad.tanh(params.ffn_in(normed)))
    gated = ffn * params.text_gate if params.use_text_gate else ffn
    z_text = gated.mean(axis=0)

    fused = (z_text @ params.fuse_text) + (z_visual @ params.fuse_visual) + params.fuse_bias
    ws.text_vec = z_text.data.copy()
    ws.visual_vec = z_visual.data.copy()
    ws.fused = fused.data.copy()
    return fused, ws

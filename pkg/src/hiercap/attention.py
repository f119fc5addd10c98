"""Soft attention over feature rows, batched, with optional slot masking.

The scorer is a single-hidden-layer additive network:

    e_i = v . tanh(W_f f_i + W_h h_prev + b)

computed for all locations of all batch rows in one pass. Feature rows
are laid out flat as ``[batch * locations, feat_dim]`` so that the whole
mechanism runs on 2-D primitives.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError
from .layers import uniform_init
from .tensor import Tensor


@dataclass
class AttentionWeights:
    alpha: Tensor     # [batch, locations], rows sum to 1 over valid slots
    context: Tensor   # [batch, context_dim]


class AdditiveAttention:
    def __init__(self, feat_dim: int, query_dim: int, hidden_dim: int,
                 rng: np.random.Generator, init_scale: float = 0.08):
        self.feat_dim = feat_dim
        self.query_dim = query_dim
        self.hidden_dim = hidden_dim
        self.w_feat = uniform_init(rng, (feat_dim, hidden_dim), init_scale)
        self.w_query = uniform_init(rng, (query_dim, hidden_dim), init_scale)
        self.bias = T.parameter(np.zeros(hidden_dim))
        self.v = uniform_init(rng, (hidden_dim, 1), init_scale)

    def parameters(self, prefix: str) -> list:
        return [(f"{prefix}.w_feat", self.w_feat),
                (f"{prefix}.w_query", self.w_query),
                (f"{prefix}.bias", self.bias),
                (f"{prefix}.v", self.v)]

    def project_features(self, feats_flat: Tensor) -> Tensor:
        """Per-location projection, computed once per sequence."""
        if feats_flat.data.ndim != 2 or feats_flat.data.shape[1] != self.feat_dim:
            raise DimensionError(
                f"features have shape {feats_flat.data.shape}, expected [*, {self.feat_dim}]")
        return T.add(T.matmul(feats_flat, self.w_feat), self.bias)

    def scores(self, feat_proj: Tensor, h_prev: Tensor, locations: int) -> Tensor:
        """Raw scores e as a [batch, locations] matrix."""
        if h_prev.data.shape[1] != self.query_dim:
            raise DimensionError(
                f"query has shape {h_prev.data.shape}, expected [*, {self.query_dim}]")
        batch = h_prev.data.shape[0]
        if feat_proj.data.shape[0] != batch * locations:
            raise DimensionError("feature rows disagree with batch x locations")
        q = T.repeat_rows(T.matmul(h_prev, self.w_query), locations)
        e = T.matmul(T.tanh(T.add(feat_proj, q)), self.v)
        return T.reshape(e, (batch, locations))

    def pooled(self, alpha: Tensor, feats_flat: Tensor, locations: int) -> Tensor:
        """Expectation of feature rows under alpha."""
        batch = alpha.data.shape[0]
        flat = T.reshape(alpha, (batch * locations, 1))
        return T.group_sum(T.mul(flat, feats_flat), locations)


def global_context(attn: AdditiveAttention, feat_proj: Tensor, feats_flat: Tensor,
                   h_prev: Tensor, locations: int) -> AttentionWeights:
    """Softmax-weighted pooling over all grid locations."""
    e = attn.scores(feat_proj, h_prev, locations)
    alpha = T.softmax(e)
    return AttentionWeights(alpha=alpha, context=attn.pooled(alpha, feats_flat, locations))


def local_context(attn: AdditiveAttention, feat_proj: Tensor, feats_flat: Tensor,
                  h_prev_local: Tensor, h_prev_global: Tensor | None,
                  valid_mask: np.ndarray, slots: int) -> AttentionWeights:
    """Masked attention over object slots, concatenated with the other
    stream's previous hidden state.

    Scores are conditioned on the local stream's own hidden state; padded
    slots receive weight exactly zero. With ``h_prev_global=None`` the
    context is the pooled objects alone (single-stream ablation).
    """
    mask = np.asarray(valid_mask, dtype=bool)
    if mask.ndim == 1:
        mask = np.broadcast_to(mask, (h_prev_local.data.shape[0], slots))
    if not mask.any(axis=1).all():
        raise ContractError("local attention requires at least one valid object slot")
    e = attn.scores(feat_proj, h_prev_local, slots)
    alpha = T.masked_softmax(e, mask)
    pooled = attn.pooled(alpha, feats_flat, slots)
    if h_prev_global is None:
        return AttentionWeights(alpha=alpha, context=pooled)
    return AttentionWeights(alpha=alpha, context=T.concat(pooled, h_prev_global, axis=1))

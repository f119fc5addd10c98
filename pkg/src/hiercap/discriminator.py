"""Probability-of-real scorer over captions, in two variants.

Both variants run an LSTM over the caption's embedded tokens (the
discriminator owns its embedding table, separate from the generator's)
and project the final hidden state to a fixed-size sentence vector.

  * ``sentence``: logit = w . V_w + b, image ignored.
  * ``coherence``: logit = V_i . V_w where V_i projects the
    average-pooled grid and valid-object features of the scene.

Losses are single-logit binary cross entropy, the two-class case of a
softmax cross entropy, computed in the numerically stable softplus form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, DimensionError
from .layers import Embedding, Linear, LstmCell, LstmState, zero_state
from .tensor import Tensor
from .vocab import NULL_ID

VARIANTS = ("sentence", "coherence")


@dataclass
class DiscConfig:
    vocab_size: int
    embed_dim: int = 128
    hidden_dim: int = 256
    out_dim: int = 256        # dot-product space for both V_w and V_i
    grid_dim: int = 32
    obj_dim: int = 48
    variant: str = "coherence"
    init_scale: float = 0.08

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown discriminator variant {self.variant!r}")
        for name in ("vocab_size", "embed_dim", "hidden_dim", "out_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")


class Discriminator:
    def __init__(self, config: DiscConfig, rng: np.random.Generator):
        config.validate()
        self.config = config
        c = config
        self.embedding = Embedding(c.vocab_size, c.embed_dim, rng, c.init_scale)
        self.lstm = LstmCell(c.embed_dim, c.hidden_dim, rng, c.init_scale)
        self.enc_proj = Linear(c.hidden_dim, c.out_dim, rng, c.init_scale)
        if c.variant == "sentence":
            self.score = Linear(c.out_dim, 1, rng, c.init_scale)
            self.img_proj = None
        else:
            self.score = None
            self.img_proj = Linear(c.grid_dim + c.obj_dim, c.out_dim, rng, c.init_scale)

    def parameters(self) -> list:
        out = self.embedding.parameters("disc.embed")
        out += self.lstm.parameters("disc.lstm")
        out += self.enc_proj.parameters("disc.enc_proj")
        if self.score is not None:
            out += self.score.parameters("disc.score")
        if self.img_proj is not None:
            out += self.img_proj.parameters("disc.img_proj")
        return out

    def state_arrays(self) -> dict:
        return {name: p.data for name, p in self.parameters()}

    def load_state_arrays(self, arrays: dict) -> None:
        for name, p in self.parameters():
            if name not in arrays:
                raise ContractError(f"checkpoint missing tensor {name}")
            p.data = np.array(arrays[name], dtype=np.float64)
            p.grad = None

    # --- encoding ------------------------------------------------------------

    def encode(self, captions: list) -> Tensor:
        """Sentence vectors V_w, [batch, out_dim]. Lengths may vary; the
        final state of each row is frozen once its caption ends."""
        if not captions or any(len(c) == 0 for c in captions):
            raise ContractError("discriminator requires non-empty captions")
        b = len(captions)
        t_max = max(len(c) for c in captions)
        ids = np.full((b, t_max), NULL_ID, dtype=np.intp)
        live = np.zeros((b, t_max), dtype=np.float64)
        for i, cap in enumerate(captions):
            ids[i, :len(cap)] = cap
            live[i, :len(cap)] = 1.0
        state = zero_state(b, self.config.hidden_dim)
        for t in range(t_max):
            nxt = self.lstm.step(self.embedding.lookup(ids[:, t]), state)
            m = T.constant(live[:, t][:, None])
            keep = T.constant(1.0 - live[:, t][:, None])
            state = LstmState(
                h=T.add(T.mul(m, nxt.h), T.mul(keep, state.h)),
                c=T.add(T.mul(m, nxt.c), T.mul(keep, state.c)),
            )
        return self.enc_proj(state.h)

    def image_vectors(self, grids: np.ndarray, objects: np.ndarray,
                      masks: np.ndarray) -> Tensor:
        """Pooled scene vectors V_i, [batch, out_dim]."""
        if self.img_proj is None:
            raise ContractError("sentence variant has no image pathway")
        grids = np.asarray(grids, dtype=np.float64)
        objects = np.asarray(objects, dtype=np.float64)
        masks = np.asarray(masks, dtype=bool)
        if masks.sum(axis=1).min() < 1:
            raise ContractError("every scene needs at least one valid object")
        g_pool = grids.mean(axis=1)
        counts = masks.sum(axis=1, keepdims=True).astype(np.float64)
        o_pool = (objects * masks[:, :, None]).sum(axis=1) / counts
        return self.img_proj(T.constant(np.concatenate([g_pool, o_pool], axis=1)))

    def logits(self, captions: list, scenes=None) -> Tensor:
        """Raw realness logits, [batch, 1]."""
        v_w = self.encode(captions)
        if self.config.variant == "sentence":
            return self.score(v_w)
        if scenes is None:
            raise ContractError("coherence variant requires scene features")
        grids, objects, masks = scenes
        if len(captions) != np.asarray(grids).shape[0]:
            raise DimensionError("caption and scene counts disagree")
        v_i = self.image_vectors(grids, objects, masks)
        return T.rowsum(T.mul(v_i, v_w))

    # --- public scoring --------------------------------------------------------

    def score_batch(self, captions: list, scenes=None) -> np.ndarray:
        """Probabilities of being real, shape [batch]; no gradients."""
        z = self.logits(captions, scenes)
        return _sigmoid_np(z.data[:, 0])

    def d_score(self, caption: list, scene=None) -> float:
        """Probability of a single caption being real; in (0, 1)."""
        if scene is not None:
            grid, objects, mask = scene
            scenes = (grid[None], objects[None], np.asarray(mask, dtype=bool)[None])
        else:
            scenes = None
        return float(self.score_batch([list(caption)], scenes)[0])

    def d_loss(self, captions: list, labels, scenes=None) -> Tensor:
        """Mean binary cross entropy against {real=1, fake=0} labels."""
        labels = np.asarray(labels, dtype=np.float64).reshape(-1, 1)
        if labels.shape[0] != len(captions):
            raise DimensionError("label count disagrees with captions")
        if not np.isin(labels, (0.0, 1.0)).all():
            raise ContractError("labels must be 0 or 1")
        z = self.logits(captions, scenes)
        # softplus(z) - y*z == -log sigmoid(z) for y=1, -log(1-sigmoid(z)) for y=0
        per = T.sub(T.softplus(z), T.mul(T.constant(labels), z))
        return T.mean(per)


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out

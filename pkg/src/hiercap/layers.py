"""LSTM cell, token embedding and affine projection built on the tape."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError, VocabularyError
from .tensor import Tensor

INIT_SCALE = 0.08


def uniform_init(rng: np.random.Generator, shape, scale: float = INIT_SCALE) -> Tensor:
    return T.parameter(rng.uniform(-scale, scale, size=shape))


@dataclass
class LstmState:
    h: Tensor
    c: Tensor


def zero_state(batch: int, hidden_dim: int) -> LstmState:
    return LstmState(
        h=T.constant(np.zeros((batch, hidden_dim))),
        c=T.constant(np.zeros((batch, hidden_dim))),
    )


class LstmCell:
    """Single-layer LSTM with sigmoid gates.

    The candidate (cell input) activation defaults to tanh; ``sigmoid``
    is accepted as a configuration switch.
    """

    GATES = ("i", "f", "o", "c")

    def __init__(self, input_dim: int, hidden_dim: int, rng: np.random.Generator,
                 init_scale: float = INIT_SCALE, candidate_activation: str = "tanh"):
        if candidate_activation not in ("tanh", "sigmoid"):
            raise ConfigError(f"unknown candidate activation {candidate_activation!r}")
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.candidate_activation = candidate_activation
        for gate in self.GATES:
            setattr(self, f"w_x{gate}", uniform_init(rng, (input_dim, hidden_dim), init_scale))
            setattr(self, f"w_h{gate}", uniform_init(rng, (hidden_dim, hidden_dim), init_scale))
            setattr(self, f"b_{gate}", T.parameter(np.zeros(hidden_dim)))

    def parameters(self, prefix: str) -> list:
        out = []
        for gate in self.GATES:
            out.append((f"{prefix}.w_x{gate}", getattr(self, f"w_x{gate}")))
            out.append((f"{prefix}.w_h{gate}", getattr(self, f"w_h{gate}")))
            out.append((f"{prefix}.b_{gate}", getattr(self, f"b_{gate}")))
        return out

    def step(self, z: Tensor, state: LstmState) -> LstmState:
        if z.data.ndim != 2 or z.data.shape[1] != self.input_dim:
            raise DimensionError(
                f"lstm input has shape {z.data.shape}, expected [batch, {self.input_dim}]")
        if state.h.data.shape != (z.data.shape[0], self.hidden_dim):
            raise DimensionError(
                f"lstm state has shape {state.h.data.shape}, expected "
                f"[{z.data.shape[0]}, {self.hidden_dim}]")

        def gate(name):
            pre = T.add(T.add(T.matmul(z, getattr(self, f"w_x{name}")),
                              T.matmul(state.h, getattr(self, f"w_h{name}"))),
                        getattr(self, f"b_{name}"))
            return pre

        i = T.sigmoid(gate("i"))
        f = T.sigmoid(gate("f"))
        o = T.sigmoid(gate("o"))
        pre_g = gate("c")
        g = T.tanh(pre_g) if self.candidate_activation == "tanh" else T.sigmoid(pre_g)
        c = T.add(T.mul(f, state.c), T.mul(i, g))
        h = T.mul(o, T.tanh(c))
        return LstmState(h=h, c=c)


def lstm_step(cell: LstmCell, z: Tensor, state: LstmState) -> LstmState:
    return cell.step(z, state)


class Embedding:
    """Trainable token embedding table with scatter-add gradients."""

    def __init__(self, vocab_size: int, dim: int, rng: np.random.Generator,
                 init_scale: float = INIT_SCALE):
        self.vocab_size = vocab_size
        self.dim = dim
        self.table = uniform_init(rng, (vocab_size, dim), init_scale)

    def parameters(self, name: str) -> list:
        return [(name, self.table)]

    def lookup(self, ids) -> Tensor:
        ids = np.asarray(ids, dtype=np.intp)
        if ids.size and (ids.min() < 0 or ids.max() >= self.vocab_size):
            raise VocabularyError(
                f"token id out of range for vocabulary of {self.vocab_size}")
        return T.gather_rows(self.table, ids)


def embed(embedding: Embedding, tokens) -> Tensor:
    return embedding.lookup(tokens)


class Linear:
    """Affine map y = x W + b."""

    def __init__(self, input_dim: int, output_dim: int, rng: np.random.Generator,
                 init_scale: float = INIT_SCALE):
        self.w = uniform_init(rng, (input_dim, output_dim), init_scale)
        self.b = T.parameter(np.zeros(output_dim))

    def parameters(self, prefix: str) -> list:
        return [(f"{prefix}.w", self.w), (f"{prefix}.b", self.b)]

    def __call__(self, x: Tensor) -> Tensor:
        return T.add(T.matmul(x, self.w), self.b)


def linear(w: Tensor, b: Tensor, x: Tensor) -> Tensor:
    return T.add(T.matmul(x, w), b)

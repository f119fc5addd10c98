"""Two-stream attention caption generator.

Per decoding step the model (in its full two-stream form):

  1. pools grid features with soft attention queried by the grid
     stream's previous hidden state,
  2. advances the grid-stream LSTM on [embedded previous token, pooled
     grid context],
  3. pools object features with masked attention queried by the object
     stream's own previous hidden state, concatenating the grid stream's
     hidden state onto the pooled objects,
  4. advances the object-stream LSTM on that combined context,
  5. decodes next-token logits from the concatenated hidden states.

``arch`` selects single-stream ablations: "global" drops steps 3-4 and
decodes from the grid stream alone; "local" drops steps 1-2, feeds
[embedding, pooled objects] to the object stream and decodes from it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import AdditiveAttention, global_context, local_context
from .errors import ConfigError, ContractError, DimensionError
from .layers import Embedding, Linear, LstmCell, LstmState, zero_state
from .tensor import Tensor
from .vocab import END_ID, NULL_ID, START_ID

ARCHES = ("hierarchical", "global", "local")


@dataclass
class GeneratorConfig:
    vocab_size: int
    embed_dim: int = 128
    hidden_dim: int = 512
    attn_hidden: int = 64
    grid_cells: int = 49
    grid_dim: int = 32
    obj_slots: int = 30
    obj_dim: int = 48
    arch: str = "hierarchical"
    candidate_activation: str = "tanh"
    local_uses_current_h: bool = False
    token_input: bool = True      # concat embedded token onto the grid context
    init_scale: float = 0.08
    max_gen_len: int = 30

    def validate(self) -> None:
        if self.arch not in ARCHES:
            raise ConfigError(f"unknown arch {self.arch!r}")
        for name in ("vocab_size", "embed_dim", "hidden_dim", "attn_hidden",
                     "grid_cells", "grid_dim", "obj_slots", "obj_dim", "max_gen_len"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")


@dataclass
class SceneFeatures:
    """Constant per-batch feature tensors, flattened for batched attention."""
    grid_flat: Tensor          # [batch * grid_cells, grid_dim]
    obj_flat: Tensor           # [batch * obj_slots, obj_dim]
    obj_mask: np.ndarray       # [batch, obj_slots] bool
    batch: int


@dataclass
class GenState:
    g: LstmState | None
    l: LstmState | None
    step: int = 0


@dataclass
class StepTrace:
    alpha_global: np.ndarray | None
    alpha_local: np.ndarray | None


class Generator:
    def __init__(self, config: GeneratorConfig, rng: np.random.Generator):
        config.validate()
        self.config = config
        c = config
        s = c.init_scale
        self.embedding = Embedding(c.vocab_size, c.embed_dim, rng, s)
        self.att_g = self.att_l = None
        self.lstm_g = self.lstm_l = None
        if c.arch in ("hierarchical", "global"):
            self.att_g = AdditiveAttention(c.grid_dim, c.hidden_dim, c.attn_hidden, rng, s)
            g_in = c.embed_dim + c.grid_dim if c.token_input else c.grid_dim
            self.lstm_g = LstmCell(g_in, c.hidden_dim, rng, s, c.candidate_activation)
        if c.arch in ("hierarchical", "local"):
            self.att_l = AdditiveAttention(c.obj_dim, c.hidden_dim, c.attn_hidden, rng, s)
            if c.arch == "hierarchical":
                l_in = c.obj_dim + c.hidden_dim
            else:
                l_in = c.embed_dim + c.obj_dim
            self.lstm_l = LstmCell(l_in, c.hidden_dim, rng, s, c.candidate_activation)
        out_in = c.hidden_dim * (2 if c.arch == "hierarchical" else 1)
        self.decode = Linear(out_in, c.vocab_size, rng, s)

    # --- parameters / checkpointing -------------------------------------

    def parameters(self) -> list:
        out = self.embedding.parameters("gen.embed")
        if self.lstm_g is not None:
            out += self.att_g.parameters("gen.att_g")
            out += self.lstm_g.parameters("gen.lstm_g")
        if self.lstm_l is not None:
            out += self.att_l.parameters("gen.att_l")
            out += self.lstm_l.parameters("gen.lstm_l")
        out += [("gen.W_p", self.decode.w), ("gen.b_p", self.decode.b)]
        return out

    def state_arrays(self) -> dict:
        return {name: p.data for name, p in self.parameters()}

    def load_state_arrays(self, arrays: dict) -> None:
        for name, p in self.parameters():
            if name not in arrays:
                raise ContractError(f"checkpoint missing tensor {name}")
            if arrays[name].shape != p.data.shape:
                raise ContractError(f"checkpoint tensor {name} has shape "
                                    f"{arrays[name].shape}, expected {p.data.shape}")
            p.data = np.array(arrays[name], dtype=np.float64)
            p.grad = None

    # --- features and state ----------------------------------------------

    def prepare(self, grids: np.ndarray, objects: np.ndarray,
                masks: np.ndarray) -> SceneFeatures:
        """Stack per-scene features into flat constant tensors.

        grids: [batch, grid_cells, grid_dim]; objects: [batch, obj_slots,
        obj_dim]; masks: [batch, obj_slots] booleans.
        """
        c = self.config
        grids = np.asarray(grids, dtype=np.float64)
        objects = np.asarray(objects, dtype=np.float64)
        masks = np.asarray(masks, dtype=bool)
        if grids.ndim != 3 or grids.shape[1:] != (c.grid_cells, c.grid_dim):
            raise DimensionError(f"grid features have shape {grids.shape}")
        if objects.ndim != 3 or objects.shape[1:] != (c.obj_slots, c.obj_dim):
            raise DimensionError(f"object features have shape {objects.shape}")
        if masks.shape != objects.shape[:2]:
            raise DimensionError("object mask shape mismatch")
        b = grids.shape[0]
        return SceneFeatures(
            grid_flat=T.constant(grids.reshape(b * c.grid_cells, c.grid_dim)),
            obj_flat=T.constant(objects.reshape(b * c.obj_slots, c.obj_dim)),
            obj_mask=masks,
            batch=b,
        )

    def init_state(self, batch: int) -> GenState:
        c = self.config
        g = zero_state(batch, c.hidden_dim) if self.lstm_g is not None else None
        l = zero_state(batch, c.hidden_dim) if self.lstm_l is not None else None
        return GenState(g=g, l=l, step=0)

    def project_features(self, feats: SceneFeatures) -> dict:
        """Attention feature projections; recompute inside each tape."""
        proj = {}
        if self.att_g is not None:
            proj["g"] = self.att_g.project_features(feats.grid_flat)
        if self.att_l is not None:
            proj["l"] = self.att_l.project_features(feats.obj_flat)
        return proj

    # --- one decoding step -------------------------------------------------

    def step_batch(self, feats: SceneFeatures, proj: dict, state: GenState,
                   tokens: np.ndarray, want_trace: bool = False):
        c = self.config
        emb = self.embedding.lookup(tokens)
        trace = StepTrace(None, None)

        new_g = state.g
        if self.lstm_g is not None:
            att = global_context(self.att_g, proj["g"], feats.grid_flat,
                                 state.g.h, c.grid_cells)
            if want_trace:
                trace.alpha_global = att.alpha.data.copy()
            z = T.concat(emb, att.context, axis=1) if c.token_input else att.context
            new_g = self.lstm_g.step(z, state.g)

        new_l = state.l
        if self.lstm_l is not None:
            if c.arch == "hierarchical":
                h_other = new_g.h if c.local_uses_current_h else state.g.h
                att = local_context(self.att_l, proj["l"], feats.obj_flat,
                                    state.l.h, h_other, feats.obj_mask, c.obj_slots)
                z = att.context
            else:
                att = local_context(self.att_l, proj["l"], feats.obj_flat,
                                    state.l.h, None, feats.obj_mask, c.obj_slots)
                z = T.concat(emb, att.context, axis=1)
            if want_trace:
                trace.alpha_local = att.alpha.data.copy()
            new_l = self.lstm_l.step(z, state.l)

        if c.arch == "hierarchical":
            decoded = T.concat(new_g.h, new_l.h, axis=1)
        elif c.arch == "global":
            decoded = new_g.h
        else:
            decoded = new_l.h
        logits = self.decode(decoded)
        return logits, GenState(g=new_g, l=new_l, step=state.step + 1), trace

    def step(self, feats: SceneFeatures, state: GenState, token: int):
        """Single-scene step: returns ([vocab] logits tensor, new state)."""
        if feats.batch != 1:
            raise ContractError("step() operates on a single prepared scene")
        proj = self.project_features(feats)
        logits, new_state, _ = self.step_batch(
            feats, proj, state, np.asarray([token], dtype=np.intp))
        return T.reshape(logits, (self.config.vocab_size,)), new_state

    # --- losses --------------------------------------------------------------

    def mle_loss(self, feats: SceneFeatures, refs: list) -> Tensor:
        """Teacher-forced negative log likelihood, averaged over the batch.

        Each reference is a list of content token ids; the END action is
        appended as the final prediction target. Padded positions are
        excluded from the sum exactly.
        """
        if not refs or any(len(r) == 0 for r in refs):
            raise ContractError("mle_loss needs non-empty references")
        if len(refs) != feats.batch:
            raise DimensionError("reference count disagrees with batch")
        b = feats.batch
        t_max = max(len(r) for r in refs) + 1
        inputs = np.full((b, t_max), NULL_ID, dtype=np.intp)
        targets = np.full((b, t_max), NULL_ID, dtype=np.intp)
        for i, ref in enumerate(refs):
            n = len(ref)
            inputs[i, 0] = START_ID
            inputs[i, 1:n + 1] = ref
            targets[i, :n] = ref
            targets[i, n] = END_ID
        mask = (targets != NULL_ID).astype(np.float64)

        proj = self.project_features(feats)
        state = self.init_state(b)
        picked = []
        for t in range(t_max):
            logits, state, _ = self.step_batch(feats, proj, state, inputs[:, t])
            logp = T.pick(T.log_softmax(logits), targets[:, t])
            picked.append(T.mul(logp, T.constant(mask[:, t][:, None])))
        stacked = picked[0]
        for p in picked[1:]:
            stacked = T.add(stacked, p)
        return T.scale(T.total(stacked), -1.0 / b)

    def teacher_forced_accuracy(self, feats: SceneFeatures, refs: list) -> tuple:
        """(correct, total) next-token argmax counts over non-pad positions."""
        b = feats.batch
        t_max = max(len(r) for r in refs) + 1
        inputs = np.full((b, t_max), NULL_ID, dtype=np.intp)
        targets = np.full((b, t_max), NULL_ID, dtype=np.intp)
        for i, ref in enumerate(refs):
            n = len(ref)
            inputs[i, 0] = START_ID
            inputs[i, 1:n + 1] = ref
            targets[i, :n] = ref
            targets[i, n] = END_ID
        proj = self.project_features(feats)
        state = self.init_state(b)
        correct = 0
        tot = 0
        for t in range(t_max):
            logits, state, _ = self.step_batch(feats, proj, state, inputs[:, t])
            live = targets[:, t] != NULL_ID
            pred = np.argmax(logits.data, axis=1)
            correct += int((pred[live] == targets[live, t]).sum())
            tot += int(live.sum())
        return correct, tot

    # --- decoding ----------------------------------------------------------

    def generate(self, feats: SceneFeatures, mode: str = "greedy",
                 rng: np.random.Generator | None = None,
                 max_len: int | None = None, keep_states: bool = False,
                 want_trace: bool = False):
        """Decode one sequence per scene.

        greedy: argmax at each step (ties resolved to the lowest id);
        multinomial: sample from the softmax distribution using ``rng``.
        Sequences stop after emitting END or at ``max_len`` actions.

        Returns a list of action-id lists. With ``keep_states`` also
        returns per-step state snapshots (arrays) for rollout re-entry;
        with ``want_trace`` also returns per-step attention weights.
        """
        if mode not in ("greedy", "multinomial"):
            raise ConfigError(f"unknown decoding mode {mode!r}")
        if mode == "multinomial" and rng is None:
            raise ContractError("multinomial decoding needs an explicit rng")
        max_len = max_len or self.config.max_gen_len
        b = feats.batch
        proj = self.project_features(feats)
        state = self.init_state(b)
        tokens = np.full(b, START_ID, dtype=np.intp)
        alive = np.ones(b, dtype=bool)
        seqs = [[] for _ in range(b)]
        snapshots = [self._snapshot(state)] if keep_states else None
        traces = [[] for _ in range(b)] if want_trace else None

        for _ in range(max_len):
            logits, state, tr = self.step_batch(feats, proj, state, tokens,
                                                want_trace=want_trace)
            if mode == "greedy":
                nxt = np.argmax(logits.data, axis=1)
            else:
                nxt = sample_rows(_softmax_np(logits.data), rng)
            for i in range(b):
                if alive[i]:
                    seqs[i].append(int(nxt[i]))
                    if want_trace:
                        traces[i].append(StepTrace(
                            None if tr.alpha_global is None else tr.alpha_global[i],
                            None if tr.alpha_local is None else tr.alpha_local[i]))
            alive &= nxt != END_ID
            if keep_states:
                snapshots.append(self._snapshot(state))
            if not alive.any():
                break
            tokens = nxt
        result = [seqs]
        if keep_states:
            result.append(snapshots)
        if want_trace:
            result.append(traces)
        return result[0] if len(result) == 1 else tuple(result)

    def _snapshot(self, state: GenState) -> dict:
        snap = {}
        if state.g is not None:
            snap["g"] = (state.g.h.data.copy(), state.g.c.data.copy())
        if state.l is not None:
            snap["l"] = (state.l.h.data.copy(), state.l.c.data.copy())
        return snap

    def state_from_snapshot(self, snap: dict, rows: np.ndarray,
                            tile: int = 1, step: int = 0) -> GenState:
        """Rebuild a GenState for ``rows`` of a snapshot, each tiled
        ``tile`` times consecutively."""
        def expand(pair):
            h, c = pair
            h = np.repeat(h[rows], tile, axis=0)
            c = np.repeat(c[rows], tile, axis=0)
            return LstmState(h=T.constant(h), c=T.constant(c))
        g = expand(snap["g"]) if "g" in snap else None
        l = expand(snap["l"]) if "l" in snap else None
        return GenState(g=g, l=l, step=step)


def _softmax_np(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def sample_rows(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One categorical draw per row by inverse CDF."""
    cs = probs.cumsum(axis=1)
    cs[:, -1] = 1.0 + 1e-12   # guard against cumulative rounding below 1
    u = rng.random((probs.shape[0], 1))
    return (cs > u).argmax(axis=1)


def sequence_log_probs(gen: Generator, feats: SceneFeatures, seqs: list):
    """Per-step log probabilities of given action sequences, teacher forced.

    Returns ``(cols, mask)``: a list of [batch, 1] tensors, one per time
    step, and a [batch, t_max] validity mask (sampled sequences may
    legitimately contain any id, so padding is tracked separately).
    Runs inside the caller's tape.
    """
    b = feats.batch
    if len(seqs) != b:
        raise DimensionError("sequence count disagrees with batch")
    t_max = max(len(s) for s in seqs)
    inputs = np.full((b, t_max), START_ID, dtype=np.intp)
    actions = np.zeros((b, t_max), dtype=np.intp)
    mask = np.zeros((b, t_max), dtype=bool)
    for i, s in enumerate(seqs):
        inputs[i, 1:len(s)] = s[:-1]
        actions[i, :len(s)] = s
        mask[i, :len(s)] = True
    proj = gen.project_features(feats)
    state = gen.init_state(b)
    cols = []
    for t in range(t_max):
        logits, state, _ = gen.step_batch(feats, proj, state, inputs[:, t])
        cols.append(T.pick(T.log_softmax(logits), actions[:, t]))
    return cols, mask

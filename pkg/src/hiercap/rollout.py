"""Monte Carlo rollout reward estimation and policy-gradient updates.

The generator is treated as a stochastic policy over token actions. For
a sampled sequence y_1..y_T the per-step action value Q(t) is estimated
by completing the prefix y_1..y_t N times with multinomial sampling from
the same policy and averaging the discriminator's probability-of-real
over the completions; at t = T the sequence is already complete and Q(T)
is the discriminator score itself, with no rollout noise.

The update maximizes expected terminal reward through the surrogate

    L = -(1/B) sum_b sum_t log pi(y_t | y_<t) * Q(t)

with Q treated as a constant, so no gradient reaches the discriminator
or the rollout samples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError
from .generator import Generator, SceneFeatures, _softmax_np, sample_rows, sequence_log_probs
from .tensor import Tape, Tensor
from .vocab import END_ID


@dataclass
class RewardTable:
    q: np.ndarray          # [T] action values, each in (0, 1)
    n: int                 # rollouts per intermediate step
    variance: np.ndarray   # [T] per-step sample variance (0 at t = T)


def _continue_from(gen: Generator, feats: SceneFeatures, snap: dict,
                   rows: np.ndarray, tile: int, last_tokens: np.ndarray,
                   budget: int, rng: np.random.Generator) -> list:
    """Sample continuations for ``rows`` of a snapshot, tiled ``tile``
    times each; returns a list of action-id lists (possibly empty)."""
    count = rows.size * tile
    if count == 0 or budget <= 0:
        return [[] for _ in range(count)]
    sub = SceneFeatures(
        grid_flat=T.constant(
            np.repeat(feats.grid_flat.data.reshape(feats.batch, gen.config.grid_cells, -1)[rows],
                      tile, axis=0).reshape(count * gen.config.grid_cells, -1)),
        obj_flat=T.constant(
            np.repeat(feats.obj_flat.data.reshape(feats.batch, gen.config.obj_slots, -1)[rows],
                      tile, axis=0).reshape(count * gen.config.obj_slots, -1)),
        obj_mask=np.repeat(feats.obj_mask[rows], tile, axis=0),
        batch=count,
    )
    proj = gen.project_features(sub)
    state = gen.state_from_snapshot(snap, rows, tile)
    tokens = np.repeat(last_tokens, tile)
    alive = np.ones(count, dtype=bool)
    conts = [[] for _ in range(count)]
    for _ in range(budget):
        logits, state, _ = gen.step_batch(sub, proj, state, tokens)
        nxt = sample_rows(_softmax_np(logits.data), rng)
        for i in range(count):
            if alive[i]:
                conts[i].append(int(nxt[i]))
        alive &= nxt != END_ID
        if not alive.any():
            break
        tokens = nxt
    return conts


def rollout(gen: Generator, feats: SceneFeatures, prefix: list, n: int,
            rng: np.random.Generator, max_len: int | None = None) -> list:
    """N continuations of a prefix on a single prepared scene; each
    returned sequence starts with the prefix verbatim."""
    if feats.batch != 1:
        raise ContractError("rollout() takes a single prepared scene")
    if n < 1:
        raise ContractError("rollout count must be >= 1")
    max_len = max_len or gen.config.max_gen_len
    if len(prefix) >= max_len and prefix and prefix[-1] != END_ID:
        return [list(prefix) for _ in range(n)]
    # replay the prefix to rebuild the decoder state
    proj = gen.project_features(feats)
    state = gen.init_state(1)
    tokens = np.asarray([1], dtype=np.intp)  # START
    for tok in prefix[:-1]:
        _, state, _ = gen.step_batch(feats, proj, state, tokens)
        tokens = np.asarray([tok], dtype=np.intp)
    if prefix:
        _, state, _ = gen.step_batch(feats, proj, state, tokens)
        tokens = np.asarray([prefix[-1]], dtype=np.intp)
    if prefix and prefix[-1] == END_ID:
        return [list(prefix) for _ in range(n)]
    snap = gen._snapshot(state)
    conts = _continue_from(gen, feats, snap, np.asarray([0]), n, tokens,
                           max_len - len(prefix), rng)
    return [list(prefix) + c for c in conts]


def estimate_rewards_batch(gen: Generator, disc, feats: SceneFeatures,
                           seqs: list, snapshots: list, n: int,
                           rng: np.random.Generator):
    """Action-value estimates for a batch of sampled sequences.

    Returns ``(q, mask)`` with q[b, t] the estimated long-term reward of
    action t of sequence b and mask flagging real (non-padded) steps.
    ``snapshots`` must come from ``generate(..., keep_states=True)``.
    """
    b = feats.batch
    lens = np.array([len(s) for s in seqs])
    t_max = int(lens.max())
    q = np.zeros((b, t_max))
    mask = np.zeros((b, t_max), dtype=bool)
    for i in range(b):
        mask[i, :lens[i]] = True

    grids = feats.grid_flat.data.reshape(b, gen.config.grid_cells, -1)
    objects = feats.obj_flat.data.reshape(b, gen.config.obj_slots, -1)

    # terminal steps: the exact single-caption discriminator score, no rollout
    for i in range(b):
        if disc.config.variant == "coherence":
            scene = (grids[i], objects[i], feats.obj_mask[i])
        else:
            scene = None
        q[i, lens[i] - 1] = disc.d_score(seqs[i], scene)

    jobs_caps = []
    jobs_scene = []
    jobs_slot = []   # (row, step, sample) destination
    # intermediate steps: n sampled completions each
    budget_total = gen.config.max_gen_len
    for t in range(t_max - 1):
        rows = np.flatnonzero(lens - 1 > t)
        if rows.size == 0:
            continue
        last = np.array([seqs[i][t] for i in rows], dtype=np.intp)
        conts = _continue_from(gen, feats, snapshots[t + 1], rows, n, last,
                               budget_total - (t + 1), rng)
        for j, i in enumerate(rows):
            prefix = seqs[i][:t + 1]
            for k in range(n):
                jobs_caps.append(prefix + conts[j * n + k])
                jobs_scene.append(i)
                jobs_slot.append((i, t, k))

    var = np.zeros((b, t_max))
    if jobs_caps:
        scene_idx = np.asarray(jobs_scene)
        if disc.config.variant == "coherence":
            scenes = (grids[scene_idx], objects[scene_idx], feats.obj_mask[scene_idx])
        else:
            scenes = None
        scores = _score_chunked(disc, jobs_caps, scenes)
        samples = {}
        for score, (i, t, k) in zip(scores, jobs_slot):
            samples.setdefault((i, t), []).append(score)
        for (i, t), vals in samples.items():
            arr = np.asarray(vals)
            q[i, t] = arr.mean()
            var[i, t] = arr.var()
    return q, mask, var


def _score_chunked(disc, captions: list, scenes, chunk: int = 512) -> np.ndarray:
    out = np.empty(len(captions))
    for start in range(0, len(captions), chunk):
        caps = captions[start:start + chunk]
        if scenes is None:
            out[start:start + len(caps)] = disc.score_batch(caps, None)
        else:
            g, o, m = scenes
            sub = (g[start:start + len(caps)], o[start:start + len(caps)],
                   m[start:start + len(caps)])
            out[start:start + len(caps)] = disc.score_batch(caps, sub)
    return out


def estimate_rewards(gen: Generator, disc, feats: SceneFeatures, seq: list,
                     n: int, rng: np.random.Generator) -> RewardTable:
    """RewardTable for one complete sampled sequence on one scene."""
    if feats.batch != 1:
        raise ContractError("estimate_rewards() takes a single prepared scene")
    if not seq:
        raise ContractError("sequence must be non-empty")
    # rebuild per-step snapshots by teacher-forcing the sequence
    proj = gen.project_features(feats)
    state = gen.init_state(1)
    snapshots = [gen._snapshot(state)]
    tokens = np.asarray([1], dtype=np.intp)
    for tok in seq:
        _, state, _ = gen.step_batch(feats, proj, state, tokens)
        snapshots.append(gen._snapshot(state))
        tokens = np.asarray([tok], dtype=np.intp)
    q, _, var = estimate_rewards_batch(gen, disc, feats, [list(seq)], snapshots, n, rng)
    return RewardTable(q=q[0], n=n, variance=var[0])


def surrogate_loss(gen: Generator, feats: SceneFeatures, seqs: list,
                   q: np.ndarray, mask: np.ndarray) -> Tensor:
    """Reward-weighted negative log likelihood of sampled sequences.

    ``q`` is treated as constant; gradients flow only through the
    policy's log probabilities. Mean over the batch.
    """
    cols, step_mask = sequence_log_probs(gen, feats, seqs)
    weights = q * mask
    pieces = None
    for t, col in enumerate(cols):
        w = T.constant((weights[:, t] * step_mask[:, t])[:, None])
        term = T.mul(col, w)
        pieces = term if pieces is None else T.add(pieces, term)
    return T.scale(T.total(pieces), -1.0 / feats.batch)


def policy_gradient_step(gen: Generator, disc, feats: SceneFeatures, n: int,
                         optimizer, rng: np.random.Generator,
                         baseline: "MovingBaseline | None" = None) -> dict:
    """One REINFORCE update of the generator on a batch of scenes.

    Samples a sequence per scene, estimates per-step action values by
    rollout, backpropagates the surrogate and applies the optimizer.
    Returns diagnostics (J estimate, mean Q, surrogate value).
    """
    if disc is None:
        raise ContractError("policy gradient requires a pretrained discriminator")
    seqs, snapshots = gen.generate(feats, mode="multinomial", rng=rng,
                                   keep_states=True)
    q, mask, _ = estimate_rewards_batch(gen, disc, feats, seqs, snapshots, n, rng)
    j = float(np.mean([q[i, len(s) - 1] for i, s in enumerate(seqs)]))
    mean_q = float(q[mask].mean())
    q_used = q
    if baseline is not None:
        q_used = baseline.apply(q, mask)
    with Tape() as tape:
        loss = surrogate_loss(gen, feats, seqs, q_used, mask)
    tape.backward(loss)
    optimizer.step()
    return {"j": j, "mean_q": mean_q, "g_surrogate": float(loss.data)}


def expected_reward(gen: Generator, disc, feats: SceneFeatures,
                    rng: np.random.Generator) -> float:
    """Mean terminal discriminator reward of sampled sequences."""
    seqs = gen.generate(feats, mode="multinomial", rng=rng)
    if disc.config.variant == "coherence":
        b = feats.batch
        scenes = (feats.grid_flat.data.reshape(b, gen.config.grid_cells, -1),
                  feats.obj_flat.data.reshape(b, gen.config.obj_slots, -1),
                  feats.obj_mask)
    else:
        scenes = None
    return float(disc.score_batch(seqs, scenes).mean())


class MovingBaseline:
    """Optional exponential moving-average reward baseline (off by default)."""

    def __init__(self, momentum: float = 0.9):
        self.momentum = momentum
        self.value = None

    def apply(self, q: np.ndarray, mask: np.ndarray) -> np.ndarray:
        current = float(q[mask].mean())
        if self.value is None:
            self.value = current
        else:
            self.value = self.momentum * self.value + (1 - self.momentum) * current
        return q - self.value

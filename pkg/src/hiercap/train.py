"""Three-phase training orchestration, evaluation and ablations.

Phase 1 pretrains the generator with teacher-forced maximum likelihood.
Phase 2 freezes the generator, samples a pool of fake captions from it
and pretrains the discriminator real-vs-fake. Phase 3 alternates one
policy-gradient generator update (per-step rewards from Monte Carlo
rollouts) with one or five discriminator updates on fresh fakes, until
a step budget, an epoch budget, or a reward plateau.

Every stochastic choice is drawn from a generator keyed by
(seed, purpose, step-or-epoch), so a run is reproducible bit-for-bit
and a killed run resumed from a checkpoint continues on exactly the
trajectory of an uninterrupted one.
"""

from __future__ import annotations

import csv
import json
import os
import time
import zlib
from dataclasses import dataclass, asdict, fields

import numpy as np

from . import metrics
from .checkpoint import load_tensors, save_tensors
from .discriminator import DiscConfig, Discriminator
from .errors import ConfigError, ContractError, DataError, NumericError
from .generator import Generator, GeneratorConfig, sequence_log_probs
from .optim import Adam
from .rollout import MovingBaseline, policy_gradient_step, surrogate_loss
from .tensor import Tape
from .toyscene import load_scenes, truncate_objects
from .vocab import END_ID, Vocabulary, clip_references

LEDGER_COLUMNS = ("step", "phase", "g_loss", "d_loss", "j", "mean_q")


@dataclass
class TrainConfig:
    data_dir: str = "data"
    out_dir: str = "run"
    seed: int = 0
    arch: str = "hierarchical"
    hidden: int = 512
    embed: int = 128
    attn_hidden: int = 64
    disc_embed: int = 128
    disc_hidden: int = 256
    disc_out: int = 256
    batch: int = 32
    adv_batch: int = 16
    lr_mle: float = 1e-3
    lr_adv: float = 1e-4
    mle_epochs: int = 10
    d_pretrain_steps: int = 2500
    adv_steps: int = 3000
    adv_budget: str = "steps"          # steps | epochs | auto
    adv_epochs: int = 1
    plateau_window: int = 200
    plateau_delta: float = 0.002
    rollout_n: int = 16
    d_steps_per_g: int = 1
    disc_variant: str = "coherence"
    disc_mismatch_frac: float = 0.0    # fraction of negatives that are real
                                       # captions paired with wrong scenes
    k_objects: int = 30
    grid_cells: int = 49
    grid_dim: int = 32
    obj_dim: int = 48
    max_train_len: int = 20
    max_gen_len: int = 30
    min_count: int = 5
    candidate_activation: str = "tanh"
    local_uses_current_h: bool = False
    token_input: bool = True
    gen_init_scale: float = 0.08
    use_baseline: bool = False
    fake_pool_size: int = 3000
    probe_g_loss: bool = True
    probe_every: int = 5
    probe_scenes: int = 4
    adv_select: str = "final"          # final | val_cider (needs a val bundle)
    adv_eval_every: int = 50
    checkpoint_every: int = 0          # 0 = only at phase boundaries

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        positive = ("hidden", "embed", "attn_hidden", "disc_embed", "disc_hidden",
                    "disc_out", "batch", "adv_batch", "rollout_n", "max_train_len",
                    "max_gen_len", "k_objects")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.d_steps_per_g not in (1, 5):
            raise ConfigError("d_steps_per_g must be 1 or 5")
        if self.adv_budget not in ("steps", "epochs", "auto"):
            raise ConfigError(f"unknown adv_budget {self.adv_budget!r}")
        if self.adv_select not in ("final", "val_cider"):
            raise ConfigError(f"unknown adv_select {self.adv_select!r}")
        if self.lr_mle <= 0 or self.lr_adv <= 0:
            raise ConfigError("learning rates must be positive")
        if not 0.0 <= self.disc_mismatch_frac <= 1.0:
            raise ConfigError("disc_mismatch_frac must be within [0, 1]")
        if self.disc_mismatch_frac > 0 and self.disc_variant != "coherence":
            raise ConfigError("mismatched-scene negatives require the coherence variant")

    @classmethod
    def from_file(cls, path: str, overrides: dict | None = None) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        blob = {}
        if path:
            try:
                with open(path, encoding="utf-8") as fh:
                    blob = json.load(fh)
            except OSError as e:
                raise ConfigError(f"cannot read config {path}: {e}") from e
            except json.JSONDecodeError as e:
                raise ConfigError(f"config {path} is not valid JSON: {e}") from e
            unknown = set(blob) - known
            if unknown:
                raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key, value in (overrides or {}).items():
            if value is None:
                continue
            if key not in known:
                raise ConfigError(f"unknown config override {key!r}")
            blob[key] = value
        cfg = cls(**blob)
        cfg.validate()
        return cfg


@dataclass
class DataBundle:
    vocab: Vocabulary
    grids: np.ndarray       # [n, cells, grid_dim]
    objects: np.ndarray     # [n, k, obj_dim]
    masks: np.ndarray       # [n, k]
    refs: list              # per scene: list of encoded references
    raw_refs: list          # per scene: list of caption strings
    scene_ids: list

    @property
    def count(self) -> int:
        return self.grids.shape[0]

    def pairs(self) -> list:
        return [(i, j) for i in range(self.count) for j in range(len(self.refs[i]))]


def load_bundle(cfg: TrainConfig, split: str, vocab: Vocabulary | None = None) -> DataBundle:
    path = os.path.join(cfg.data_dir, f"scenes.{split}.jsonl")
    scenes = load_scenes(path, grid_dim=cfg.grid_dim, obj_dim=cfg.obj_dim)
    if vocab is None:
        vocab = Vocabulary.load(os.path.join(cfg.data_dir, "vocab.json"))
    grids, objects, masks, refs, raw, ids = [], [], [], [], [], []
    for s in scenes:
        obj, mask = truncate_objects(s.objects, s.valid_mask, cfg.k_objects)
        encoded = clip_references(s.refs, vocab, cfg.max_train_len)
        if not encoded:
            continue
        grids.append(s.grid)
        objects.append(obj)
        masks.append(mask)
        refs.append(encoded)
        raw.append(list(s.refs))
        ids.append(s.scene_id)
    if not grids:
        raise DataError(f"no usable scenes in {path}")
    return DataBundle(vocab=vocab, grids=np.stack(grids), objects=np.stack(objects),
                      masks=np.stack(masks), refs=refs, raw_refs=raw, scene_ids=ids)


def _stream(seed: int, purpose: str, index: int) -> np.random.Generator:
    """Deterministic generator keyed by (seed, purpose, index); resuming a
    run re-derives exactly the streams an uninterrupted run would use."""
    tag = zlib.crc32(purpose.encode("utf-8"))
    return np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(tag, index)))


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


class Trainer:
    def __init__(self, cfg: TrainConfig, train: DataBundle,
                 val: DataBundle | None = None):
        cfg.validate()
        self.cfg = cfg
        self.train_data = train
        self.val_data = val
        vocab_size = len(train.vocab)
        self.gen = Generator(GeneratorConfig(
            vocab_size=vocab_size, embed_dim=cfg.embed, hidden_dim=cfg.hidden,
            attn_hidden=cfg.attn_hidden, grid_cells=cfg.grid_cells,
            grid_dim=cfg.grid_dim, obj_slots=cfg.k_objects, obj_dim=cfg.obj_dim,
            arch=cfg.arch, candidate_activation=cfg.candidate_activation,
            local_uses_current_h=cfg.local_uses_current_h,
            token_input=cfg.token_input, max_gen_len=cfg.max_gen_len,
            init_scale=cfg.gen_init_scale,
        ), _stream(cfg.seed, "gen-init", 0))
        self.disc = Discriminator(DiscConfig(
            vocab_size=vocab_size, embed_dim=cfg.disc_embed,
            hidden_dim=cfg.disc_hidden, out_dim=cfg.disc_out,
            grid_dim=cfg.grid_dim, obj_dim=cfg.obj_dim, variant=cfg.disc_variant,
        ), _stream(cfg.seed, "disc-init", 0))
        self.opt_mle = Adam(self.gen.parameters(), lr=cfg.lr_mle)
        self.opt_adv = Adam(self.gen.parameters(), lr=cfg.lr_adv)
        self.opt_disc = Adam(self.disc.parameters(), lr=cfg.lr_adv)
        self.baseline = MovingBaseline() if cfg.use_baseline else None
        self.rows = []
        self.step = 0
        self.mle_epochs_done = 0
        self.d_steps_done = 0
        self.adv_steps_done = 0
        self.fake_pool = []
        self.val_history = []
        self.wall = {}

    # --- bookkeeping -----------------------------------------------------------

    def _log(self, phase: str, g_loss=None, d_loss=None, j=None, mean_q=None) -> None:
        self.step += 1
        self.rows.append((self.step, phase, _fmt(g_loss), _fmt(d_loss),
                          _fmt(j), _fmt(mean_q)))

    def write_ledger(self, path: str | None = None) -> str:
        path = path or os.path.join(self.cfg.out_dir, "ledger.csv")
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(LEDGER_COLUMNS)
            writer.writerows(self.rows)
        return path

    def _features(self, data: DataBundle, idx: np.ndarray):
        return self.gen.prepare(data.grids[idx], data.objects[idx], data.masks[idx])

    # --- phase 1: maximum likelihood --------------------------------------------

    def mle_epoch(self) -> float:
        cfg = self.cfg
        data = self.train_data
        pairs = data.pairs()
        order = _stream(cfg.seed, "shuffle", self.mle_epochs_done).permutation(len(pairs))
        total = 0.0
        batches = 0
        for start in range(0, len(order), cfg.batch):
            chunk = [pairs[k] for k in order[start:start + cfg.batch]]
            idx = np.array([i for i, _ in chunk])
            refs = [data.refs[i][j] for i, j in chunk]
            feats = self._features(data, idx)
            with Tape() as tape:
                loss = self.gen.mle_loss(feats, refs)
            tape.backward(loss)
            self.opt_mle.step()
            val = float(loss.data)
            total += val
            batches += 1
            self._log("mle", g_loss=val)
        self.mle_epochs_done += 1
        return total / max(batches, 1)

    def pretrain_generator(self) -> None:
        t0 = time.perf_counter()
        while self.mle_epochs_done < self.cfg.mle_epochs:
            self.mle_epoch()
        self.wall["mle_s"] = time.perf_counter() - t0

    def train_accuracy(self, data: DataBundle | None = None, limit: int = 0) -> float:
        data = data or self.train_data
        pairs = data.pairs()
        if limit:
            pairs = pairs[:limit]
        correct = total = 0
        for start in range(0, len(pairs), 64):
            chunk = pairs[start:start + 64]
            idx = np.array([i for i, _ in chunk])
            refs = [data.refs[i][j] for i, j in chunk]
            feats = self._features(data, idx)
            c, t = self.gen.teacher_forced_accuracy(feats, refs)
            correct += c
            total += t
        return correct / max(total, 1)

    # --- phase 2: discriminator pretraining ---------------------------------------

    def build_fake_pool(self) -> None:
        cfg = self.cfg
        data = self.train_data
        pool = []
        want = cfg.fake_pool_size
        batch = 64
        draw = 0
        while len(pool) < want:
            rng = _stream(cfg.seed, "fakepool", draw)
            idx = rng.integers(0, data.count, size=min(batch, want - len(pool)))
            feats = self._features(data, idx)
            seqs = self.gen.generate(feats, mode="multinomial", rng=rng)
            pool.extend((int(i), seq) for i, seq in zip(idx, seqs) if seq)
            draw += 1
        self.fake_pool = pool[:want]

    def _disc_batch(self, rng: np.random.Generator, fresh_fakes: bool):
        cfg = self.cfg
        data = self.train_data
        half = max(cfg.batch // 2, 1)
        ridx = rng.integers(0, data.count, size=half)
        captions, scene_rows, labels = [], [], []
        for i in ridx:
            refs = data.refs[i]
            ref = refs[int(rng.integers(0, len(refs)))]
            captions.append(list(ref) + [END_ID])   # END closes a real caption
            scene_rows.append(int(i))
            labels.append(1.0)
        mismatched = int(round(half * cfg.disc_mismatch_frac))
        generated = half - mismatched
        if generated:
            if fresh_fakes:
                fidx = rng.integers(0, data.count, size=generated)
                feats = self._features(data, fidx)
                seqs = self.gen.generate(feats, mode="multinomial", rng=rng)
                for i, seq in zip(fidx, seqs):
                    captions.append(seq if seq else [END_ID])
                    scene_rows.append(int(i))
                    labels.append(0.0)
            else:
                for k in rng.integers(0, len(self.fake_pool), size=generated):
                    i, seq = self.fake_pool[int(k)]
                    captions.append(list(seq))
                    scene_rows.append(i)
                    labels.append(0.0)
        for _ in range(mismatched):
            # a real caption paired with a different scene, labeled fake,
            # forces the coherence score to bind captions to image content
            i = int(rng.integers(0, data.count))
            j = int(rng.integers(0, data.count))
            if j == i:
                j = (j + 1) % data.count
            refs = data.refs[i]
            ref = refs[int(rng.integers(0, len(refs)))]
            captions.append(list(ref) + [END_ID])
            scene_rows.append(j)
            labels.append(0.0)
        rows = np.asarray(scene_rows)
        scenes = None
        if cfg.disc_variant == "coherence":
            scenes = (data.grids[rows], data.objects[rows], data.masks[rows])
        return captions, labels, scenes

    def _probe_g_loss(self) -> float:
        """Generator loss probe: teacher-forced per-token NLL on a fixed
        batch of training references. It depends on the generator alone,
        so the curve is constant while only the discriminator trains and
        falls once policy-gradient updates start improving the model.
        Runs without a tape."""
        cfg = self.cfg
        data = self.train_data
        pairs = data.pairs()[:max(cfg.probe_scenes * 3, 8)]
        idx = np.array([i for i, _ in pairs])
        refs = [data.refs[i][j] for i, j in pairs]
        feats = self._features(data, idx)
        loss = self.gen.mle_loss(feats, refs)
        tokens = sum(len(r) + 1 for r in refs) / len(refs)
        return float(loss.data) / tokens

    def gen_zero_grad(self) -> None:
        for _, p in self.gen.parameters():
            p.grad = None

    def discriminator_step(self, fresh_fakes: bool) -> float:
        rng = _stream(self.cfg.seed, "disc", self.d_steps_done)
        captions, labels, scenes = self._disc_batch(rng, fresh_fakes)
        with Tape() as tape:
            loss = self.disc.d_loss(captions, labels, scenes)
        tape.backward(loss)
        self.opt_disc.step()
        self.d_steps_done += 1
        return float(loss.data)

    def pretrain_discriminator(self) -> None:
        cfg = self.cfg
        t0 = time.perf_counter()
        if self.d_steps_done >= cfg.d_pretrain_steps:
            return
        if not self.fake_pool:
            self.build_fake_pool()
        while self.d_steps_done < cfg.d_pretrain_steps:
            k = self.d_steps_done
            d_loss = self.discriminator_step(fresh_fakes=False)
            self._log("d_pretrain", d_loss=d_loss)
            if cfg.probe_g_loss and k % cfg.probe_every == 0:
                self._log("g_probe", g_loss=self._probe_g_loss())
        self.wall["d_pretrain_s"] = time.perf_counter() - t0

    def discriminator_accuracy(self, data: DataBundle, samples: int = 256) -> float:
        """Held-out real-vs-fake accuracy at threshold 0.5."""
        cfg = self.cfg
        rng = _stream(cfg.seed, "disc-eval", 0)
        idx = rng.integers(0, data.count, size=samples)
        reals = []
        for i in idx:
            refs = data.refs[i]
            reals.append(list(refs[int(rng.integers(0, len(refs)))]) + [2])
        feats = self._features(data, idx)
        fakes = self.gen.generate(feats, mode="multinomial", rng=rng)
        fakes = [f if f else [2] for f in fakes]
        scenes = None
        if cfg.disc_variant == "coherence":
            scenes = (data.grids[idx], data.objects[idx], data.masks[idx])
        real_scores = self.disc.score_batch(reals, scenes)
        fake_scores = self.disc.score_batch(fakes, scenes)
        return float(((real_scores > 0.5).sum() + (fake_scores <= 0.5).sum())
                     / (2 * samples))

    # --- phase 3: adversarial -----------------------------------------------------

    def adversarial_iteration(self) -> dict:
        cfg = self.cfg
        t0 = time.perf_counter()
        rng = _stream(cfg.seed, "adv", self.adv_steps_done)
        idx = rng.integers(0, self.train_data.count, size=cfg.adv_batch)
        feats = self._features(self.train_data, idx)
        diag = policy_gradient_step(self.gen, self.disc, feats, cfg.rollout_n,
                                    self.opt_adv, rng, baseline=self.baseline)
        self.adv_steps_done += 1
        self._log("adversarial_g", g_loss=diag["g_surrogate"], j=diag["j"],
                  mean_q=diag["mean_q"])
        d_losses = []
        for _ in range(cfg.d_steps_per_g):
            d_loss = self.discriminator_step(fresh_fakes=True)
            d_losses.append(d_loss)
            self._log("adversarial_d", d_loss=d_loss)
        diag["d_loss"] = d_losses[-1] if d_losses else None
        diag["wall_ms"] = (time.perf_counter() - t0) * 1000.0
        self._append_adv_diagnostics(diag)
        return diag

    def _append_adv_diagnostics(self, diag: dict) -> None:
        """Wall-clock timing lives here, outside the deterministic ledger."""
        os.makedirs(self.cfg.out_dir, exist_ok=True)
        path = os.path.join(self.cfg.out_dir, "adv_diagnostics.csv")
        fresh = not os.path.exists(path)
        with open(path, "a", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            if fresh:
                writer.writerow(("step", "j", "mean_q", "d_loss",
                                 "g_surrogate_loss", "wall_ms"))
            writer.writerow((self.adv_steps_done, repr(diag["j"]),
                             repr(diag["mean_q"]), _fmt(diag.get("d_loss")),
                             repr(diag["g_surrogate"]),
                             f"{diag['wall_ms']:.3f}"))

    def adversarial_phase(self) -> None:
        cfg = self.cfg
        t0 = time.perf_counter()
        if cfg.adv_select == "val_cider" and self.val_data is None:
            raise ContractError("val_cider selection needs a validation bundle")
        if cfg.adv_budget == "epochs":
            budget = cfg.adv_epochs * max(1, self.train_data.count // cfg.adv_batch)
        else:
            budget = cfg.adv_steps
        js = []
        best = None
        self.val_history = []
        while self.adv_steps_done < budget:
            if (cfg.probe_g_loss and
                    self.adv_steps_done % cfg.probe_every == 0):
                self._log("g_probe", g_loss=self._probe_g_loss())
            diag = self.adversarial_iteration()
            js.append(diag["j"])
            if (cfg.adv_select == "val_cider"
                    and self.adv_steps_done % cfg.adv_eval_every == 0):
                score = self.evaluate(self.val_data, write=False)["cider"]
                self.val_history.append((self.adv_steps_done, score))
                if best is None or score > best[0]:
                    best = (score, {n: p.data.copy()
                                    for n, p in self.gen.parameters()})
            if cfg.checkpoint_every and self.adv_steps_done % cfg.checkpoint_every == 0:
                self.save_checkpoint(self._ckpt_path(f"adv{self.adv_steps_done:06d}"))
            if cfg.adv_budget == "auto" and len(js) >= 2 * cfg.plateau_window:
                recent = float(np.mean(js[-cfg.plateau_window:]))
                previous = float(np.mean(js[-2 * cfg.plateau_window:-cfg.plateau_window]))
                if recent - previous < cfg.plateau_delta:
                    break
        if best is not None:
            self.gen.load_state_arrays(best[1])
        self.wall["adversarial_s"] = time.perf_counter() - t0

    # --- full procedure -------------------------------------------------------------

    def run_all(self, resume_from: str | None = None) -> None:
        os.makedirs(self.cfg.out_dir, exist_ok=True)
        if resume_from:
            self.load_checkpoint(resume_from)
        try:
            self.pretrain_generator()
            self.save_checkpoint(self._ckpt_path("mle"))
            self.pretrain_discriminator()
            self.save_checkpoint(self._ckpt_path("disc"))
            self.adversarial_phase()
            self.save_checkpoint(self._ckpt_path("final"))
        except NumericError:
            # fail fast but leave the last checkpoint in place
            self.write_ledger()
            raise
        self.write_ledger()

    # --- evaluation ---------------------------------------------------------------

    def greedy_captions(self, data: DataBundle, trace_path: str | None = None) -> list:
        captions = []
        trace_fh = open(trace_path, "w", encoding="utf-8") if trace_path else None
        try:
            for start in range(0, data.count, 64):
                idx = np.arange(start, min(start + 64, data.count))
                feats = self._features(data, idx)
                if trace_fh:
                    seqs, traces = self.gen.generate(feats, mode="greedy",
                                                     want_trace=True)
                else:
                    seqs = self.gen.generate(feats, mode="greedy")
                    traces = None
                for row, seq in enumerate(seqs):
                    words = data.vocab.decode(seq)
                    captions.append(" ".join(words))
                    if trace_fh:
                        for t, tr in enumerate(traces[row]):
                            trace_fh.write(json.dumps({
                                "scene": data.scene_ids[idx[row]],
                                "step": t,
                                "token": data.vocab.id_to_token[seq[t]]
                                if seq[t] < len(data.vocab.id_to_token) else "?",
                                "alpha_global": None if tr.alpha_global is None
                                else [round(float(a), 6) for a in tr.alpha_global],
                                "alpha_local": None if tr.alpha_local is None
                                else [round(float(a), 6) for a in tr.alpha_local],
                            }) + "\n")
        finally:
            if trace_fh:
                trace_fh.close()
        return captions

    def evaluate(self, data: DataBundle, write: bool = True,
                 name: str = "report", trace_path: str | None = None) -> dict:
        candidates = self.greedy_captions(data, trace_path=trace_path)
        report = metrics.score_captions(candidates, data.raw_refs)
        if write:
            os.makedirs(self.cfg.out_dir, exist_ok=True)
            with open(os.path.join(self.cfg.out_dir, f"{name}.json"), "w",
                      encoding="utf-8") as fh:
                json.dump(report, fh, sort_keys=True, indent=2)
                fh.write("\n")
            with open(os.path.join(self.cfg.out_dir, f"{name}.csv"), "w",
                      newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                cols = ("bleu_1", "bleu_2", "bleu_3", "bleu_4",
                        "meteor", "cider", "rouge_l")
                writer.writerow(cols)
                writer.writerow(["" if report[c] is None else repr(report[c])
                                 for c in cols])
        return report

    # --- checkpointing ---------------------------------------------------------------

    def _ckpt_path(self, tag: str) -> str:
        ckpt_dir = os.path.join(self.cfg.out_dir, "checkpoints")
        os.makedirs(ckpt_dir, exist_ok=True)
        return os.path.join(ckpt_dir, f"{tag}.ckpt")

    def save_checkpoint(self, path: str) -> str:
        arrays = {}
        arrays.update(self.gen.state_arrays())
        arrays.update(self.disc.state_arrays())
        for prefix, opt in (("optim.mle", self.opt_mle),
                            ("optim.adv", self.opt_adv),
                            ("optim.disc", self.opt_disc)):
            for key, val in opt.state_dict().items():
                arrays[f"{prefix}.{key}"] = np.asarray(val)
        meta = {
            "config": asdict(self.cfg),
            "vocab_checksum": self.train_data.vocab.checksum(),
            "counters": {
                "step": self.step,
                "mle_epochs_done": self.mle_epochs_done,
                "d_steps_done": self.d_steps_done,
                "adv_steps_done": self.adv_steps_done,
            },
        }
        save_tensors(path, arrays, meta)
        return path

    def load_checkpoint(self, path: str, strict_vocab: bool = True) -> dict:
        arrays, meta = load_tensors(path)
        if strict_vocab and meta.get("vocab_checksum") not in (
                None, self.train_data.vocab.checksum()):
            raise ContractError("checkpoint vocabulary does not match the dataset")
        self.gen.load_state_arrays(arrays)
        disc_keys = [k for k in arrays if k.startswith("disc.")]
        if disc_keys:
            self.disc.load_state_arrays(arrays)
        for prefix, opt in (("optim.mle", self.opt_mle),
                            ("optim.adv", self.opt_adv),
                            ("optim.disc", self.opt_disc)):
            keys = {k[len(prefix) + 1:]: arrays[k]
                    for k in arrays if k.startswith(prefix + ".")}
            if keys:
                opt.load_state_dict(keys)
        counters = meta.get("counters", {})
        self.step = int(counters.get("step", 0))
        self.mle_epochs_done = int(counters.get("mle_epochs_done", 0))
        self.d_steps_done = int(counters.get("d_steps_done", 0))
        self.adv_steps_done = int(counters.get("adv_steps_done", 0))
        return meta


def run_algorithm(cfg: TrainConfig) -> Trainer:
    """End-to-end pipeline on the configured dataset; returns the trainer."""
    train = load_bundle(cfg, "train")
    trainer = Trainer(cfg, train)
    trainer.run_all()
    return trainer


def ablate(cfg: TrainConfig, seeds: list, out_path: str | None = None) -> dict:
    """Side-by-side architecture and object-budget comparison.

    Trains (MLE phase only) the two-stream model, the grid-only and the
    object-only ablations, plus object budgets 10/20/30, under each
    seed, and reports test CIDEr for every cell.
    """
    def run_cell(arch: str, k: int, key: str) -> list:
        scores = []
        for seed in seeds:
            sub = TrainConfig(**{**asdict(cfg), "arch": arch, "k_objects": k,
                                 "seed": seed,
                                 "out_dir": os.path.join(cfg.out_dir, f"{key}-s{seed}")})
            train = load_bundle(sub, "train")
            test = load_bundle(sub, "test", vocab=train.vocab)
            trainer = Trainer(sub, train)
            trainer.pretrain_generator()
            report = trainer.evaluate(test, write=False)
            scores.append(report["cider"])
        return scores

    results = {"arch": {}, "k": {}}
    for arch in ("hierarchical", "global", "local"):
        results["arch"][arch] = run_cell(arch, cfg.k_objects, arch)
    for k in (10, 20, 30):
        if k == cfg.k_objects:
            results["k"][f"k{k}"] = list(results["arch"]["hierarchical"])
        else:
            results["k"][f"k{k}"] = run_cell("hierarchical", k, f"k{k}")
    if out_path:
        os.makedirs(os.path.dirname(out_path) or ".", exist_ok=True)
        with open(out_path, "w", encoding="utf-8") as fh:
            json.dump(results, fh, sort_keys=True, indent=2)
            fh.write("\n")
    return results

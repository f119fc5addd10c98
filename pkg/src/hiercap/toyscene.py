"""Procedural scenes standing in for CNN/detector features.

A scene is a handful of colored shapes at continuous positions in the
unit square. It is emitted in three coordinated views:

  * a grid of cell features (cells covered by an object receive a
    rank-limited projection of its identity code, scaled by coverage,
    plus noise over a fixed background vector),
  * a confidence-sorted list of detection features (a clean full-rank
    projection of the identity code plus small noise; objects may yield
    several detections, mimicking duplicate detector hits),
  * reference captions from a small deterministic grammar.

Grid features carry layout but a lossy identity signal; detections carry
clean identity but no layout. Captions describe the object nearest the
scene center relative to its nearest neighbour, so producing them needs
both views, which is exactly the regime the two-stream model targets.
"""

from __future__ import annotations

import base64
import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, DataError

SHAPES = ("circle", "square", "triangle", "star", "diamond", "hexagon", "ring", "cross")
COLORS = ("red", "blue", "green", "yellow", "purple", "orange")
SIZES = ("small", "large")

REL_PHRASES = {
    "left": ("to", "the", "left", "of"),
    "right": ("to", "the", "right", "of"),
    "above": ("to", "the", "top", "of"),
    "below": ("to", "the", "bottom", "of"),
}

CODE_DIM = len(SHAPES) + len(COLORS) + len(SIZES)


@dataclass
class SceneObject:
    shape: str
    color: str
    size: str
    x: float
    y: float


@dataclass
class SceneGraph:
    objects: list
    subject: int      # index of the object nearest the scene center
    target: int       # nearest other object, described relative to subject
    relation: str     # "" for single-object scenes


@dataclass
class Scene:
    scene_id: str
    graph: SceneGraph
    grid: np.ndarray       # [cells, grid_dim]
    objects: np.ndarray    # [slots, obj_dim], confidence sorted
    valid_mask: np.ndarray  # [slots] bool
    refs: list             # caption strings


@dataclass
class SceneConfig:
    grid_side: int = 7
    grid_dim: int = 32
    obj_dim: int = 48
    obj_slots: int = 30
    pos_channels: int = 6     # leading grid channels encode cell position
    pos_scale: float = 1.0
    axis_margin: float = 0.20  # dominant-axis clearance of the subject pair
    min_objects: int = 2
    max_objects: int = 3
    detection_counts: tuple = (1, 2, 3, 4)
    detection_probs: tuple = (0.35, 0.30, 0.20, 0.15)
    obj_noise: float = 0.05
    grid_noise: float = 0.10
    grid_rank: int = 10
    caption_style: str = "long"   # or "short"
    basis_seed: int = 777
    n_train: int = 2000
    n_val: int = 500
    n_test: int = 500
    seed: int = 0

    def validate(self) -> None:
        if self.grid_side < 2 or self.grid_dim < 1 or self.obj_dim < 1:
            raise ConfigError("feature dimensions must be positive")
        if not 0 <= self.pos_channels <= min(6, self.grid_dim - 1):
            raise ConfigError("pos_channels must leave room for identity channels")
        if not 1 <= self.min_objects <= self.max_objects:
            raise ConfigError("bad object count range")
        if self.caption_style not in ("long", "short"):
            raise ConfigError(f"unknown caption style {self.caption_style!r}")
        if self.obj_slots < self.max_objects * max(self.detection_counts):
            raise ConfigError("obj_slots too small for the detection counts")

    @property
    def grid_cells(self) -> int:
        return self.grid_side * self.grid_side


class FeatureBasis:
    """Fixed projections shared by every scene of a dataset."""

    def __init__(self, cfg: SceneConfig):
        rng = np.random.default_rng(cfg.basis_seed)
        a = rng.normal(0.0, 1.0, (CODE_DIM, cfg.obj_dim))
        a *= 0.5 / a.std()
        self.obj_proj = a
        ident = cfg.grid_dim - cfg.pos_channels
        u = rng.normal(0.0, 1.0, (CODE_DIM, cfg.grid_rank))
        v = rng.normal(0.0, 1.0, (cfg.grid_rank, ident))
        g = u @ v
        g *= 0.5 / g.std()
        # identity lives in the channels after the positional block
        self.grid_proj = np.concatenate([np.zeros((CODE_DIM, cfg.pos_channels)), g],
                                        axis=1)
        self.background = rng.normal(0.0, 0.25, cfg.grid_dim)
        self.background[:cfg.pos_channels] = 0.0


def identity_code(obj: SceneObject) -> np.ndarray:
    code = np.zeros(CODE_DIM)
    code[SHAPES.index(obj.shape)] = 1.0
    code[len(SHAPES) + COLORS.index(obj.color)] = 1.0
    code[len(SHAPES) + len(COLORS) + SIZES.index(obj.size)] = 1.0
    return code


def _pick_relation(subj: SceneObject, targ: SceneObject) -> str:
    dx = targ.x - subj.x
    dy = targ.y - subj.y
    if abs(dx) >= abs(dy):
        return "left" if dx > 0 else "right"
    return "above" if dy < 0 else "below"


def sample_graph(cfg: SceneConfig, rng: np.random.Generator) -> SceneGraph:
    n = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
    # distinct (shape, color) pairs keep attribute attribution unambiguous
    pairs = rng.choice(len(SHAPES) * len(COLORS), size=n, replace=False)
    objects = []
    for p in pairs:
        shape = SHAPES[p // len(COLORS)]
        color = COLORS[p % len(COLORS)]
        size = SIZES[int(rng.integers(0, 2))]
        objects.append(SceneObject(shape=shape, color=color, size=size, x=0.0, y=0.0))
    for _ in range(200):
        xs = rng.uniform(0.10, 0.90, n)
        ys = rng.uniform(0.10, 0.90, n)
        ok = True
        for i in range(n):
            for j in range(i + 1, n):
                if np.hypot(xs[i] - xs[j], ys[i] - ys[j]) < 0.22:
                    ok = False
        if not ok:
            continue
        for o, x, y in zip(objects, xs, ys):
            o.x, o.y = float(x), float(y)
        subject = int(np.argmin([np.hypot(o.x - 0.5, o.y - 0.5) for o in objects]))
        if n == 1:
            return SceneGraph(objects=objects, subject=subject, target=-1, relation="")
        others = [i for i in range(n) if i != subject]
        target = min(others, key=lambda i: np.hypot(
            objects[i].x - objects[subject].x, objects[i].y - objects[subject].y))
        s, t = objects[subject], objects[target]
        # keep the dominant axis unambiguous
        if abs(abs(t.x - s.x) - abs(t.y - s.y)) < cfg.axis_margin:
            continue
        return SceneGraph(objects=objects, subject=subject, target=target,
                          relation=_pick_relation(s, t))
    raise ContractError("could not place objects after 200 attempts")


# --- captions ----------------------------------------------------------------


def _caption_variants(graph: SceneGraph, style: str) -> list:
    subj = graph.objects[graph.subject]
    if graph.target < 0:
        return [["a", subj.color, subj.shape],
                ["a", subj.size, subj.color, subj.shape],
                ["the", subj.color, subj.shape]]
    targ = graph.objects[graph.target]
    rel = list(REL_PHRASES[graph.relation])
    if style == "long":
        core = ([subj.size, subj.color, subj.shape, "is"] + rel +
                ["a", targ.size, targ.color, targ.shape,
                 "sitting", "over", "there", "in", "the"])
        return [["a"] + core + ["picture"],
                ["a"] + core + ["image"],
                ["the"] + core + ["picture"]]
    core = [subj.color, subj.shape, "is"] + rel + ["a", targ.color, targ.shape]
    return [["a"] + core, ["the"] + core, ["one"] + core]


def caption_grammar(graph: SceneGraph, rng: np.random.Generator,
                    style: str = "long") -> str:
    """One sampled caption for the scene graph."""
    if not graph.objects:
        raise ContractError("caption grammar needs at least one object")
    variants = _caption_variants(graph, style)
    return " ".join(variants[int(rng.integers(0, len(variants)))])


def make_references(graph: SceneGraph, style: str = "long") -> list:
    """The three distinct reference captions for a scene."""
    if not graph.objects:
        raise ContractError("caption grammar needs at least one object")
    return [" ".join(v) for v in _caption_variants(graph, style)]


def parse_caption(tokens: list):
    """Recover ((size, color, shape), relation, (size, color, shape)) from a
    grammar caption; target triple is None for single-object captions.
    Sizes may be absent (short style)."""
    toks = list(tokens)

    def triple(pos):
        size = None
        if pos < len(toks) and toks[pos] in SIZES:
            size = toks[pos]
            pos += 1
        if pos + 1 >= len(toks) or toks[pos] not in COLORS or toks[pos + 1] not in SHAPES:
            raise ContractError(f"unparseable attribute triple at {pos}: {toks}")
        return (size, toks[pos], toks[pos + 1]), pos + 2

    if not toks or toks[0] not in ("a", "the", "one"):
        raise ContractError(f"caption does not start with an article: {toks}")
    subj, pos = triple(1)
    if pos >= len(toks) or toks[pos] != "is":
        return subj, "", None
    pos += 1
    relation = None
    for name, phrase in REL_PHRASES.items():
        if tuple(toks[pos:pos + len(phrase)]) == phrase:
            relation = name
            pos += len(phrase)
            break
    if relation is None:
        raise ContractError(f"no relation phrase at {pos}: {toks}")
    if pos >= len(toks) or toks[pos] != "a":
        raise ContractError(f"missing target article at {pos}: {toks}")
    targ, pos = triple(pos + 1)
    return subj, relation, targ


def caption_matches_graph(tokens: list, graph: SceneGraph) -> bool:
    subj, relation, targ = parse_caption(tokens)
    s = graph.objects[graph.subject]
    if (subj[1], subj[2]) != (s.color, s.shape):
        return False
    if subj[0] is not None and subj[0] != s.size:
        return False
    if graph.target < 0:
        return relation == "" and targ is None
    t = graph.objects[graph.target]
    if relation != graph.relation or targ is None:
        return False
    if (targ[1], targ[2]) != (t.color, t.shape):
        return False
    return not (targ[0] is not None and targ[0] != t.size)


# --- features ----------------------------------------------------------------


def cell_positions(cfg: SceneConfig):
    centers = (np.arange(cfg.grid_side) + 0.5) / cfg.grid_side
    gx, gy = np.meshgrid(centers, centers, indexing="xy")
    return gx, gy


def positional_block(cfg: SceneConfig) -> np.ndarray:
    """Per-cell position encoding for the leading grid channels."""
    gx, gy = cell_positions(cfg)
    x = gx.reshape(-1)
    y = gy.reshape(-1)
    channels = [x - 0.5, y - 0.5, (x - 0.5) ** 2, (y - 0.5) ** 2,
                np.sin(np.pi * x), np.sin(np.pi * y)]
    block = np.stack(channels[:cfg.pos_channels], axis=1) if cfg.pos_channels else \
        np.zeros((cfg.grid_cells, 0))
    return cfg.pos_scale * block


def render_features(cfg: SceneConfig, basis: FeatureBasis, graph: SceneGraph,
                    rng: np.random.Generator):
    gx, gy = cell_positions(cfg)
    grid = np.tile(basis.background, (cfg.grid_cells, 1))
    if cfg.pos_channels:
        grid[:, :cfg.pos_channels] += positional_block(cfg)
    for obj in graph.objects:
        radius = 0.065 if obj.size == "small" else 0.105
        d2 = (gx - obj.x) ** 2 + (gy - obj.y) ** 2
        cover = np.exp(-d2 / (2.0 * radius * radius)).reshape(-1)
        cover[cover < 0.05] = 0.0
        grid += cover[:, None] * (identity_code(obj) @ basis.grid_proj)
    grid += rng.normal(0.0, cfg.grid_noise, grid.shape)

    detections = []
    for obj in graph.objects:
        n_det = int(rng.choice(cfg.detection_counts, p=cfg.detection_probs))
        code = identity_code(obj) @ basis.obj_proj
        for _ in range(n_det):
            conf = float(rng.random())
            feat = code + rng.normal(0.0, cfg.obj_noise, cfg.obj_dim)
            detections.append((conf, feat))
    detections.sort(key=lambda p: -p[0])
    objects = np.zeros((cfg.obj_slots, cfg.obj_dim))
    mask = np.zeros(cfg.obj_slots, dtype=bool)
    for slot, (_, feat) in enumerate(detections[:cfg.obj_slots]):
        objects[slot] = feat
        mask[slot] = True
    return grid, objects, mask


def build_scene(cfg: SceneConfig, basis: FeatureBasis, scene_id: str,
                seed_seq: np.random.SeedSequence) -> Scene:
    rng = np.random.default_rng(seed_seq)
    graph = sample_graph(cfg, rng)
    grid, objects, mask = render_features(cfg, basis, graph, rng)
    refs = make_references(graph, cfg.caption_style)
    return Scene(scene_id=scene_id, graph=graph, grid=grid,
                 objects=objects, valid_mask=mask, refs=refs)


SPLITS = ("train", "val", "test")


def generate_split(cfg: SceneConfig, split: str) -> list:
    cfg.validate()
    if split not in SPLITS:
        raise ConfigError(f"unknown split {split!r}")
    count = {"train": cfg.n_train, "val": cfg.n_val, "test": cfg.n_test}[split]
    basis = FeatureBasis(cfg)
    scenes = []
    split_idx = SPLITS.index(split)
    for i in range(count):
        ss = np.random.SeedSequence(entropy=cfg.seed, spawn_key=(split_idx, i))
        scenes.append(build_scene(cfg, basis, f"{split}-{i:06d}", ss))
    return scenes


def generate_dataset(cfg: SceneConfig, out_dir: str) -> dict:
    """Write scenes.{train,val,test}.jsonl and vocab.json; returns the splits."""
    from .vocab import build_vocabulary

    os.makedirs(out_dir, exist_ok=True)
    splits = {}
    for split in SPLITS:
        scenes = generate_split(cfg, split)
        splits[split] = scenes
        write_scenes(os.path.join(out_dir, f"scenes.{split}.jsonl"), scenes)
    vocab = build_vocabulary(
        [ref for scene in splits["train"] for ref in scene.refs])
    vocab.save(os.path.join(out_dir, "vocab.json"))
    with open(os.path.join(out_dir, "scene_config.json"), "w", encoding="utf-8") as fh:
        json.dump(vars(cfg), fh, sort_keys=True, indent=1)
    return splits


def _b64(arr: np.ndarray) -> str:
    return base64.b64encode(arr.astype("<f8").tobytes()).decode("ascii")


def _unb64(blob: str, shape) -> np.ndarray:
    return np.frombuffer(base64.b64decode(blob), dtype="<f8").reshape(shape).copy()


def write_scenes(path: str, scenes: list) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in scenes:
            fh.write(json.dumps({
                "id": s.scene_id,
                "grid_b64": _b64(s.grid),
                "objects_b64": _b64(s.objects),
                "valid_mask": [bool(v) for v in s.valid_mask],
                "refs": s.refs,
            }) + "\n")


@dataclass
class LoadedScene:
    scene_id: str
    grid: np.ndarray
    objects: np.ndarray
    valid_mask: np.ndarray
    refs: list


def load_scenes(path: str, grid_dim: int = 32, obj_dim: int = 48) -> list:
    if not os.path.exists(path):
        raise DataError(f"scene file not found: {path}")
    scenes = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            try:
                blob = json.loads(line)
                mask = np.asarray(blob["valid_mask"], dtype=bool)
                slots = mask.shape[0]
                grid = _unb64(blob["grid_b64"], (-1, grid_dim))
                objects = _unb64(blob["objects_b64"], (slots, obj_dim))
            except (KeyError, ValueError, TypeError) as e:
                raise DataError(f"malformed scene line in {path}: {e}") from e
            scenes.append(LoadedScene(scene_id=blob["id"], grid=grid,
                                      objects=objects, valid_mask=mask,
                                      refs=list(blob["refs"])))
    if not scenes:
        raise DataError(f"no scenes in {path}")
    return scenes


def truncate_objects(scene_objects: np.ndarray, mask: np.ndarray, k: int):
    """Keep the top-k confidence-sorted detection slots."""
    if k < 1:
        raise ConfigError("object slot budget must be >= 1")
    k = min(k, mask.shape[0])
    return scene_objects[:k], mask[:k]

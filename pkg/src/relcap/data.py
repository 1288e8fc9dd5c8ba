"""Caption samples, JSON-lines dataset I/O, batching and the synthetic world."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .config import Config
from .errors import ContractError, DatasetError
from .gcn import GraphBatch
from .geometry import (BBox, HashLabeler, Region, ScriptedLabeler, SemanticGraph,
                       build_reduced_graph, label_graph)


@dataclass
class CaptionSample:
    image_id: int | str
    width: float
    height: float
    global_feature: np.ndarray
    regions: list[Region]
    captions: list[str]
    relations: list[tuple[int, int, str]] = field(default_factory=list)

    def __post_init__(self):
        if not self.regions:
            raise ContractError(f"sample {self.image_id}: needs at least one region")
        if not self.captions:
            raise ContractError(f"sample {self.image_id}: needs at least one reference caption")

    @property
    def k(self) -> int:
        return len(self.regions)

    @property
    def features(self) -> np.ndarray:
        return np.stack([r.feature for r in self.regions])

    @property
    def positions(self) -> np.ndarray:
        return np.stack([r.positional for r in self.regions])

    def to_record(self) -> dict:
        rec = {
            "image_id": self.image_id,
            "width": self.width,
            "height": self.height,
            "global_feature": [float(x) for x in self.global_feature],
            "regions": [],
            "captions": list(self.captions),
            "relations": [[s, o, r] for s, o, r in self.relations],
        }
        for reg in self.regions:
            item = {"bbox": [float(c) for c in reg.bbox], "feature": [float(x) for x in reg.feature]}
            if reg.kind is not None:
                item["kind"] = reg.kind
            rec["regions"].append(item)
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "CaptionSample":
        w, h = float(rec["width"]), float(rec["height"])
        regions = [Region.from_box(BBox(*r["bbox"]), r["feature"], w, h, r.get("kind"))
                   for r in rec["regions"]]
        rels = [(int(s), int(o), str(name)) for s, o, name in rec.get("relations", [])]
        return cls(rec["image_id"], rec["width"], rec["height"],
                   np.asarray(rec["global_feature"], dtype=np.float64),
                   regions, list(rec["captions"]), rels)


def dumps_dataset(samples: Sequence[CaptionSample]) -> str:
    return "".join(json.dumps(s.to_record(), separators=(",", ":")) + "\n" for s in samples)


def save_dataset(samples: Sequence[CaptionSample], path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_dataset(samples))


def loads_dataset(text: str) -> list[CaptionSample]:
    samples = []
    dim = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            sample = CaptionSample.from_record(rec)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"malformed JSON ({exc.msg})", lineno) from None
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"invalid record: {exc}", lineno) from None
        dims = {sample.global_feature.shape[0]} | {r.feature.shape[0] for r in sample.regions}
        if len(dims) != 1 or (dim is not None and dims != {dim}):
            raise ContractError(
                f"line {lineno}: feature dimension mismatch {sorted(dims)} (expected {dim})")
        dim = dims.pop()
        samples.append(sample)
    return samples


def load_dataset(path) -> list[CaptionSample]:
    with open(path, encoding="utf-8") as fh:
        return loads_dataset(fh.read())


# --------------------------------------------------------------------------
# Graphs and batches
# --------------------------------------------------------------------------

def sample_graph(sample: CaptionSample, config: Config) -> SemanticGraph:
    g = build_reduced_graph(sample.regions, config.filter_edges, config.relations)
    if config.labeler == "scripted":
        labeler = ScriptedLabeler.from_relations(sample.relations, config.relations)
    else:
        labeler = HashLabeler(len(config.relations), seed=config.seed)
    return label_graph(g, sample.regions, labeler, unordered=config.unordered_labels)


@dataclass
class Batch:
    feats: np.ndarray      # (B, K, v)
    pos: np.ndarray        # (B, K, 6)
    mask: np.ndarray       # (B, K) bool
    glob: np.ndarray       # (B, v)
    graphs: GraphBatch

    @property
    def size(self) -> int:
        return self.feats.shape[0]

    def repeat(self, n: int) -> "Batch":
        """Each image repeated ``n`` times consecutively."""
        idx = np.repeat(np.arange(self.size), n)
        return self.select(idx)

    def select(self, idx) -> "Batch":
        idx = np.asarray(idx)
        return Batch(self.feats[idx], self.pos[idx], self.mask[idx], self.glob[idx],
                     _select_graphs(self.graphs, idx, self.feats.shape[1]))


def _select_graphs(gb: GraphBatch, idx, k_pad) -> GraphBatch:
    parts = {name: [] for name in ("recv", "src", "direction", "label", "sub", "obj")}
    img = gb.recv // k_pad
    for new, old in enumerate(idx):
        sel = img == old
        shift = (new - old) * k_pad
        for name in parts:
            arr = getattr(gb, name)[sel]
            parts[name].append(arr + shift if name in ("recv", "src", "sub", "obj") else arr)
    cat = {k: (np.concatenate(v) if v else np.zeros(0, np.int64)) for k, v in parts.items()}
    return GraphBatch(len(idx) * k_pad, **cat)


def collate(samples: Sequence[CaptionSample], graphs: Sequence[SemanticGraph],
            k_pad: int | None = None, dtype=np.float64) -> Batch:
    k_pad = k_pad or max(s.k for s in samples)
    v = samples[0].global_feature.shape[0]
    B = len(samples)
    feats = np.zeros((B, k_pad, v), dtype=dtype)
    pos = np.zeros((B, k_pad, 6), dtype=dtype)
    mask = np.zeros((B, k_pad), dtype=bool)
    for b, s in enumerate(samples):
        if s.k > k_pad:
            raise ContractError(f"sample {s.image_id} has {s.k} regions > k_pad {k_pad}")
        feats[b, :s.k] = s.features
        pos[b, :s.k] = s.positions
        mask[b, :s.k] = True
    glob = np.stack([s.global_feature for s in samples]).astype(dtype)
    return Batch(feats, pos, mask, glob, GraphBatch.from_graphs(graphs, k_pad))


# --------------------------------------------------------------------------
# Synthetic world
# --------------------------------------------------------------------------

SUBJECTS = ("man", "woman", "dog", "boy")
OBJECTS = ("horse", "bike", "ball", "kite", "skateboard")
ACTIONS = ("riding", "holding", "watching", "pulling", "chasing")
DISTRACTORS = ("tree", "sign", "bench")
SCENES = {"field": "in a field", "street": "on the street",
          "beach": "at the beach", "park": "in the park"}
RELATION_WORDS = ACTIONS

_WORLD_SEED = 20210705


def _prototypes(v: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng([_WORLD_SEED, v])
    names = SUBJECTS + OBJECTS + DISTRACTORS + tuple(f"scene:{s}" for s in SCENES)
    return {n: rng.standard_normal(v) for n in names}


def _random_box(rng, w, h, lo=40.0, hi=200.0) -> BBox:
    bw, bh = rng.uniform(lo, hi, size=2)
    x1 = rng.uniform(0, w - bw)
    y1 = rng.uniform(0, h - bh)
    return BBox(*(float(round(c, 2)) for c in (x1, y1, x1 + bw, y1 + bh)))


def _overlapping_box(rng, anchor: BBox, w, h) -> BBox:
    """A box whose centre lies inside ``anchor``, so the pair always overlaps."""
    cx = rng.uniform(anchor.x1 + 0.25 * anchor.width, anchor.x2 - 0.25 * anchor.width)
    cy = rng.uniform(anchor.y1 + 0.25 * anchor.height, anchor.y2 - 0.25 * anchor.height)
    bw, bh = rng.uniform(40.0, 200.0, size=2)
    x1, x2 = max(0.0, cx - bw / 2), min(w, cx + bw / 2)
    y1, y2 = max(0.0, cy - bh / 2), min(h, cy + bh / 2)
    return BBox(*(float(round(c, 2)) for c in (x1, y1, x2, y2)))


def synthesize_sample(index: int, config: Config, seed: int,
                      protos: dict[str, np.ndarray] | None = None) -> CaptionSample:
    """One image of the synthetic world.

    A scene holds one (subject, action, object) triple plus 0-4 distractor
    objects. Region features are type prototypes plus noise, so they reveal
    object types but not the action; the action is only recorded as a
    ground-truth relation (and so reaches the model through the labeled
    graph). The scene type is mixed only into the global feature.
    """
    protos = protos or _prototypes(config.v)
    rng = np.random.default_rng([seed, index])
    w, h = config.image_w, config.image_h
    subj = SUBJECTS[rng.integers(len(SUBJECTS))]
    obj = OBJECTS[rng.integers(len(OBJECTS))]
    action = ACTIONS[rng.integers(len(ACTIONS))]
    scene = list(SCENES)[rng.integers(len(SCENES))]
    n_distract = int(rng.integers(0, min(4, config.k_max - 2) + 1))

    obj_box = _random_box(rng, w, h, 60.0, 220.0)
    subj_box = _overlapping_box(rng, obj_box, w, h)
    kinds = [subj, obj] + [DISTRACTORS[rng.integers(len(DISTRACTORS))] for _ in range(n_distract)]
    boxes = [subj_box, obj_box] + [_random_box(rng, w, h) for _ in range(n_distract)]
    order = rng.permutation(len(kinds))
    noise = config.feature_noise
    regions = []
    for i in order:
        feat = protos[kinds[i]] + noise * rng.standard_normal(config.v)
        regions.append(Region.from_box(boxes[i], np.round(feat, 6), w, h, kinds[i]))
    where = {int(old): new for new, old in enumerate(order)}
    feats = np.stack([r.feature for r in regions])
    glob = feats.mean(axis=0) + protos[f"scene:{scene}"] + noise * rng.standard_normal(config.v)
    caption = f"a {subj} {action} a {obj} {SCENES[scene]}"
    return CaptionSample(index, w, h, np.round(glob, 6), regions, [caption],
                         [(where[0], where[1], action)])


def generate_synthetic_dataset(config: Config, seed: int, n: int | None = None,
                               start: int = 0) -> list[CaptionSample]:
    n = config.n_samples if n is None else n
    protos = _prototypes(config.v)
    return [synthesize_sample(start + i, config, seed, protos) for i in range(n)]

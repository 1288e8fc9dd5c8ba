"""Box geometry, the overlap/distance edge filter and relation labeling."""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .errors import ContractError, DatasetError

DEFAULT_RELATIONS = (
    "background", "riding", "holding", "watching", "pulling", "chasing",
    "near", "wearing", "carrying", "on", "under", "behind", "in front of",
    "beside", "above", "below", "has", "with", "eating", "sitting on",
)


@dataclass(frozen=True)
class BBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ContractError(f"degenerate box {tuple(self)}")

    def __iter__(self):
        return iter((self.x1, self.y1, self.x2, self.y2))

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def centroid(self) -> tuple[float, float]:
        return ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)


def positional_vector(box: BBox, width: float, height: float) -> np.ndarray:
    """(top, bottom, left, right, width, height), each normalized by image size."""
    return np.array([
        box.y1 / height, box.y2 / height, box.x1 / width, box.x2 / width,
        box.width / width, box.height / height,
    ])


@dataclass
class Region:
    bbox: BBox
    feature: np.ndarray
    positional: np.ndarray
    kind: str | None = None

    @classmethod
    def from_box(cls, bbox: BBox, feature, image_w: float, image_h: float, kind=None):
        return cls(bbox, np.asarray(feature, dtype=np.float64),
                   positional_vector(bbox, image_w, image_h), kind)


def iou(a: BBox, b: BBox) -> float:
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def centroid_distance(a: BBox, b: BBox) -> float:
    (xa, ya), (xb, yb) = a.centroid, b.centroid
    return math.hypot(xa - xb, ya - yb)


def longest_edge(a: BBox, b: BBox) -> float:
    return max(a.width, a.height, b.width, b.height)


def edge_removed(a: BBox, b: BBox) -> bool:
    """True when the pair is disjoint and farther apart than its longest side."""
    return iou(a, b) == 0.0 and centroid_distance(a, b) > longest_edge(a, b)


@dataclass
class SemanticGraph:
    """Directed graph over k regions. ``label`` is None on unlabeled edges."""

    k: int
    edges: list[tuple[int, int, int | None]] = field(default_factory=list)
    labels: tuple[str, ...] = DEFAULT_RELATIONS

    def __post_init__(self):
        seen = set()
        for s, d, lab in self.edges:
            if s == d:
                raise ContractError(f"self-edge ({s}, {d}) in stored edge list")
            if not (0 <= s < self.k and 0 <= d < self.k):
                raise ContractError(f"edge ({s}, {d}) outside node range {self.k}")
            if (s, d) in seen:
                raise ContractError(f"duplicate edge ({s}, {d})")
            if lab is not None and not 0 <= lab < len(self.labels):
                raise ContractError(f"label id {lab} outside vocabulary of {len(self.labels)}")
            seen.add((s, d))

    def pairs(self) -> set[tuple[int, int]]:
        return {(s, d) for s, d, _ in self.edges}

    # text serialization: k, vocabulary line, then "src dst label" lines

    def dumps(self) -> str:
        lines = [str(self.k), "\t".join(self.labels)]
        lines += [f"{s} {d} {-1 if lab is None else lab}" for s, d, lab in self.edges]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "SemanticGraph":
        lines = text.rstrip("\n").split("\n")
        if len(lines) < 2:
            raise DatasetError("graph text needs a node count and a label line")
        try:
            k = int(lines[0])
        except ValueError:
            raise DatasetError(f"bad node count {lines[0]!r}", 1) from None
        labels = tuple(lines[1].split("\t"))
        edges = []
        for lineno, line in enumerate(lines[2:], start=3):
            parts = line.split()
            if len(parts) != 3:
                raise DatasetError(f"expected 'src dst label', got {line!r}", lineno)
            s, d, lab = (int(p) for p in parts)
            edges.append((s, d, None if lab < 0 else lab))
        return cls(k, edges, labels)


def build_reduced_graph(regions: Sequence[Region], filter_edges: bool = True,
                        labels: Sequence[str] = DEFAULT_RELATIONS) -> SemanticGraph:
    """Complete directed graph minus the pairs the geometric filter rejects."""
    k = len(regions)
    if k < 1:
        raise ContractError("build_reduced_graph needs at least one region")
    edges = []
    for i in range(k):
        for j in range(k):
            if i == j:
                continue
            if filter_edges and edge_removed(regions[i].bbox, regions[j].bbox):
                continue
            edges.append((i, j, None))
    return SemanticGraph(k, edges, tuple(labels))


class RelationLabeler(Protocol):
    def label(self, regions: Sequence[Region], src: int, dst: int) -> list[tuple[int, float]]:
        ...


def label_graph(g: SemanticGraph, regions: Sequence[Region], labeler: RelationLabeler,
                unordered: bool = False) -> SemanticGraph:
    """Give every surviving edge the labeler's most probable relation.

    Ties go to the lowest label id. With ``unordered=True`` only the more
    probable direction of each mutually connected pair is kept.
    """
    best = {}
    for s, d, _ in g.edges:
        cands = labeler.label(regions, s, d)
        if not cands:
            raise ContractError(f"labeler returned no relation for edge ({s}, {d})")
        lab, prob = min(cands, key=lambda c: (-c[1], c[0]))
        if not 0 <= lab < len(g.labels):
            raise ContractError(f"labeler produced label id {lab} outside vocabulary")
        best[(s, d)] = (lab, prob)
    edges = []
    for s, d, _ in g.edges:
        lab, prob = best[(s, d)]
        if unordered and (d, s) in best:
            other = best[(d, s)][1]
            if other > prob or (other == prob and (d, s) < (s, d)):
                continue
        edges.append((s, d, lab))
    return SemanticGraph(g.k, edges, g.labels)


class ScriptedLabeler:
    """Lookup-table labeler.

    ``table`` maps (key(src), key(dst)) to a label id; anything missing gets
    ``default`` with probability 1. By default regions are keyed by their
    ``kind``; pass ``key=by_index`` to script individual region pairs.
    """

    def __init__(self, table: dict, default: int = 0,
                 key: Callable[[Sequence[Region], int], object] | None = None):
        self.table = dict(table)
        self.default = default
        self.key = key or (lambda regions, i: regions[i].kind)

    def label(self, regions, src, dst):
        lab = self.table.get((self.key(regions, src), self.key(regions, dst)), self.default)
        return [(lab, 1.0)]

    @classmethod
    def from_relations(cls, relations, labels: Sequence[str] = DEFAULT_RELATIONS,
                       default: int = 0) -> "ScriptedLabeler":
        """Script ground-truth ``(src_index, dst_index, relation_name)`` triples."""
        ids = {name: i for i, name in enumerate(labels)}
        table = {}
        for s, d, name in relations:
            if name not in ids:
                raise ContractError(f"relation {name!r} not in label vocabulary")
            table[(s, d)] = ids[name]
        return cls(table, default, key=by_index)


def by_index(regions, i):
    return i


class HashLabeler:
    """Deterministic pseudo-random relation distribution per ordered pair."""

    def __init__(self, n_labels: int = len(DEFAULT_RELATIONS), seed: int = 0):
        self.n_labels = n_labels
        self.seed = seed

    def label(self, regions, src, dst):
        digest = hashlib.sha256(f"{self.seed}:{src}:{dst}".encode()).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        p = rng.dirichlet(np.ones(self.n_labels))
        return [(i, float(pi)) for i, pi in enumerate(p)]

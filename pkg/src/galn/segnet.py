"""A small hierarchical point network: four encoder levels, per-level decoders, linear classifier.

Level 1 is a per-point MLP on block coordinates. Each deeper level keeps a
farthest-point quarter of the previous level and feeds every kept point its own
feature concatenated with the mean feature of its 8 nearest previous-level
points. The decoder copies each level back to full resolution from the nearest
level member and the classifier reads the concatenation of all levels.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geom import Block, farthest_point_sample, knn
from .numcore import (Tensor, add, concat, gather_mean, gather_rows, matmul, relu)

NUM_LEVELS = 4


@dataclass
class NetConfig:
    widths: tuple[int, ...] = (16, 32, 64, 64)
    num_classes: int = 4
    agg_neighbors: int = 8
    coord_scale: float = 2.0

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if len(self.widths) != NUM_LEVELS or min(self.widths) < 1:
            raise ValueError(f"need {NUM_LEVELS} positive widths, got {self.widths}")
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")


@dataclass
class ModelParams:
    config: NetConfig
    tensors: dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def items(self):
        return self.tensors.items()

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def values(self) -> dict[str, np.ndarray]:
        return {k: t.values for k, t in self.tensors.items()}

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: Tensor(t.values.copy(), requires_grad=True, name=t.name)
                                         for k, t in self.tensors.items()})


def layer_shapes(cfg: NetConfig) -> dict[str, tuple[int, int]]:
    """Weight shapes (fan_in, fan_out) in a stable order."""
    d = cfg.widths
    shapes = {"enc.1": (3, d[0])}
    for j in range(1, NUM_LEVELS):
        shapes[f"enc.{j + 1}"] = (2 * d[j - 1], d[j])
    for j in range(NUM_LEVELS):
        shapes[f"dec.{j + 1}"] = (d[j], d[j])
    shapes["cls"] = (sum(d), cfg.num_classes)
    return shapes


def init_params(cfg: NetConfig, seed: int) -> ModelParams:
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, (fan_in, fan_out) in layer_shapes(cfg).items():
        bound = 1.0 / math.sqrt(fan_in)
        tensors[f"{name}.w"] = Tensor(rng.uniform(-bound, bound, (fan_in, fan_out)), True, f"{name}.w")
        tensors[f"{name}.b"] = Tensor(rng.uniform(-bound, bound, (1, fan_out)), True, f"{name}.b")
    return ModelParams(cfg, tensors)


def params_from_arrays(arrays: dict[str, np.ndarray], **overrides) -> ModelParams:
    """Rebuild parameters from checkpoint arrays, inferring widths and class count."""
    widths = tuple(arrays[f"enc.{j}.w"].shape[1] for j in range(1, NUM_LEVELS + 1))
    cfg = NetConfig(widths=widths, num_classes=arrays["cls.w"].shape[1], **overrides)
    expected = layer_shapes(cfg)
    tensors = {}
    for name, shape in expected.items():
        w, b = arrays[f"{name}.w"], arrays[f"{name}.b"]
        if w.shape != shape or b.shape != (1, shape[1]):
            raise ValueError(f"checkpoint tensor {name} has shape {w.shape}, expected {shape}")
        tensors[f"{name}.w"] = Tensor(w, True, f"{name}.w")
        tensors[f"{name}.b"] = Tensor(b, True, f"{name}.b")
    return ModelParams(cfg, tensors)


def _linear(x: Tensor, params: ModelParams, name: str) -> Tensor:
    return add(matmul(x, params[f"{name}.w"]), params[f"{name}.b"])


def fps_start(points: np.ndarray) -> int:
    """Lexicographically smallest point; independent of point order for distinct points."""
    return int(np.lexsort(points.T[::-1])[0])


@dataclass
class Hierarchy:
    """Coordinate-only structure of a block, shared by every forward pass over it."""

    indices: list[np.ndarray]        # block indices present at each level
    parent_rows: list[np.ndarray]    # rows of level j-1 kept at level j (level >= 2)
    neighbor_rows: list[np.ndarray]  # q x k rows of level j-1 aggregated into level j
    upsample_rows: list[np.ndarray]  # per block point, nearest row at each level


def build_hierarchy(points: np.ndarray, agg_neighbors: int = 8) -> Hierarchy:
    n = len(points)
    indices = [np.arange(n)]
    parent_rows, neighbor_rows = [np.arange(n)], [None]
    for _ in range(1, NUM_LEVELS):
        prev = indices[-1]
        sub = points[prev]
        m = math.ceil(len(prev) / 4)
        rows = farthest_point_sample(sub, m, fps_start(sub))
        nb, _ = knn(sub[rows], sub, min(agg_neighbors, len(prev)))
        indices.append(prev[rows])
        parent_rows.append(rows)
        neighbor_rows.append(nb)
    upsample = [np.arange(n)]
    for lvl in indices[1:]:
        nearest, _ = knn(points, points[lvl], 1)
        upsample.append(nearest[:, 0])
    return Hierarchy(indices, parent_rows, neighbor_rows, upsample)


def block_hierarchy(block: Block, agg_neighbors: int = 8) -> Hierarchy:
    cache = block.__dict__.setdefault("_hierarchy", {})
    if agg_neighbors not in cache:
        cache[agg_neighbors] = build_hierarchy(block.points, agg_neighbors)
    return cache[agg_neighbors]


@dataclass
class LevelFeatures:
    indices: list[np.ndarray]
    features: list[Tensor]
    hierarchy: Hierarchy

    @property
    def sizes(self) -> list[int]:
        return [len(i) for i in self.indices]


def extract_features(params: ModelParams, block: Block) -> LevelFeatures:
    cfg = params.config
    h = block_hierarchy(block, cfg.agg_neighbors)
    x = Tensor(block.points / cfg.coord_scale)
    feats = [relu(_linear(x, params, "enc.1"))]
    for j in range(1, NUM_LEVELS):
        prev = feats[-1]
        own = gather_rows(prev, h.parent_rows[j])
        ctx = gather_mean(prev, h.neighbor_rows[j])
        feats.append(relu(_linear(concat([own, ctx], axis=1), params, f"enc.{j + 1}")))
    return LevelFeatures(h.indices, feats, h)


def classify(params: ModelParams, feats: LevelFeatures, block: Block) -> Tensor:
    """Raw per-point logits, shape n x C."""
    h = feats.hierarchy
    parts = []
    for j, f in enumerate(feats.features):
        dec = relu(_linear(f, params, f"dec.{j + 1}"))
        parts.append(dec if j == 0 else gather_rows(dec, h.upsample_rows[j]))
    return _linear(concat(parts, axis=1), params, "cls")


def predict(params: ModelParams, block: Block) -> np.ndarray:
    """Softmax probabilities, n x C, computed without recording gradients."""
    logits = classify(params, extract_features(params, block), block).values
    z = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(z)
    return p / p.sum(axis=1, keepdims=True)

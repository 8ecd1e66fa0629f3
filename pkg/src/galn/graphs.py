"""Dynamic local feature graphs around farthest-point centroids.

A graph holds, for each encoder level, the k nearest level features of the
centroid (in feature space) with the Euclidean feature distance to the
centroid appended as a last column.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .geom import Block, farthest_point_sample, knn, num_centroids
from .numcore import Tensor, concat, gather_rows, row_norm, sub
from .segnet import LevelFeatures, fps_start

DEFAULT_K_LEVELS = (1, 4, 16, 64)


@dataclass
class FeatureGraph:
    centroid_block_index: int
    centroid_label: int | None
    levels: list[Tensor]

    @property
    def k_levels(self) -> tuple[int, ...]:
        return tuple(t.shape[0] for t in self.levels)

    @property
    def widths(self) -> tuple[int, ...]:
        return tuple(t.shape[1] for t in self.levels)

    def arrays(self) -> list[np.ndarray]:
        return [t.values for t in self.levels]

    def detached(self) -> "FeatureGraph":
        return FeatureGraph(self.centroid_block_index, self.centroid_label,
                            [t.detach() for t in self.levels])

    def mean_feature(self) -> np.ndarray:
        """Per-level node-row means, concatenated."""
        return np.concatenate([t.values.mean(axis=0) for t in self.levels])


def centroid_indices(block: Block) -> np.ndarray:
    return farthest_point_sample(block.points, num_centroids(len(block)), fps_start(block.points))


def build_graphs(feats: LevelFeatures, block: Block,
                 k_levels: Sequence[int] = DEFAULT_K_LEVELS) -> list[FeatureGraph]:
    k_levels = tuple(int(k) for k in k_levels)
    if len(k_levels) != len(feats.features):
        raise ValueError(f"need one k per level ({len(feats.features)}), got {k_levels}")
    for j, (k, size) in enumerate(zip(k_levels, feats.sizes), start=1):
        if not 1 <= k <= size:
            raise ValueError(f"k={k} at level {j} exceeds its {size} points")

    centroids = centroid_indices(block)
    nodes_per_level = []
    for j, (f, members, k) in enumerate(zip(feats.features, feats.indices, k_levels)):
        # row of each centroid at this level, or its nearest surviving member
        pos = {int(b): r for r, b in enumerate(members)}
        rows = np.array([pos.get(int(c), -1) for c in centroids])
        gone = rows < 0
        if gone.any():
            nearest, _ = knn(block.points[centroids[gone]], block.points[members], 1)
            rows[gone] = nearest[:, 0]
        nbrs, _ = knn(f.values[rows], f.values, k)
        level_nodes = []
        for r, nb in zip(rows, nbrs):
            vert = gather_rows(f, nb)
            edge = row_norm(sub(vert, gather_rows(f, [r])))
            level_nodes.append(concat([vert, edge], axis=1))
        nodes_per_level.append(level_nodes)

    labels = block.labels
    return [
        FeatureGraph(int(c), None if labels is None else int(labels[c]),
                     [nodes_per_level[j][i] for j in range(len(k_levels))])
        for i, c in enumerate(centroids)
    ]


# -- debug dumps -------------------------------------------------------------

def dump_graphs(path: str | os.PathLike, graphs: Iterable[FeatureGraph]) -> None:
    with open(path, "w") as fh:
        for g in graphs:
            label = "-" if g.centroid_label is None else str(g.centroid_label)
            fh.write(f"graph {g.centroid_block_index} {label}\n")
            for j, t in enumerate(g.levels, start=1):
                fh.write(f"level {j} {t.shape[0]} {t.shape[1]}\n")
                for row in t.values:
                    fh.write(" ".join(repr(float(v)) for v in row) + "\n")
            fh.write("end\n")


def load_graphs(path: str | os.PathLike) -> list[FeatureGraph]:
    graphs = []
    with open(path) as fh:
        lines = iter(fh.read().splitlines())
    for line in lines:
        head = line.split()
        if not head:
            continue
        if head[0] != "graph":
            raise ValueError(f"expected 'graph' record, got {line!r}")
        label = None if head[2] == "-" else int(head[2])
        levels = []
        for line in lines:
            parts = line.split()
            if parts[0] == "end":
                break
            rows, cols = int(parts[2]), int(parts[3])
            vals = [[float(v) for v in next(lines).split()] for _ in range(rows)]
            levels.append(Tensor(np.array(vals).reshape(rows, cols)))
        graphs.append(FeatureGraph(int(head[1]), label, levels))
    return graphs

"""Point-cloud containers, block sampling, farthest point sampling and exact k-NN."""
from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

DOMAINS = ("source", "target")


@dataclass
class LabeledCloud:
    points: np.ndarray
    labels: np.ndarray | None = None
    domain_tag: str = "source"
    num_classes: int | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3 or len(self.points) < 1:
            raise ValueError(f"points must be N x 3 with N >= 1, got {self.points.shape}")
        if self.domain_tag not in DOMAINS:
            raise ValueError(f"domain_tag must be one of {DOMAINS}, got {self.domain_tag!r}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (len(self.points),):
                raise ValueError(f"{len(self.labels)} labels for {len(self.points)} points")
            if self.labels.min() < 0:
                raise ValueError("labels must be nonnegative")
            if self.num_classes is not None and self.labels.max() >= self.num_classes:
                raise ValueError(f"label {self.labels.max()} out of range for {self.num_classes} classes")

    def __len__(self) -> int:
        return len(self.points)

    def unlabeled(self) -> "LabeledCloud":
        return LabeledCloud(self.points, None, self.domain_tag, self.num_classes)


@dataclass
class Block:
    points: np.ndarray
    labels: np.ndarray | None
    source_indices: np.ndarray
    origin: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.points)


def _cell_members(points: np.ndarray, block_xy: float) -> list[tuple[tuple[int, int], np.ndarray]]:
    cells = np.floor(points[:, :2] / block_xy).astype(np.int64)
    keys, inverse = np.unique(cells, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    order = np.argsort(inverse, kind="stable")
    bounds = np.searchsorted(inverse[order], np.arange(len(keys) + 1))
    return [((int(k[0]), int(k[1])), order[bounds[i]:bounds[i + 1]]) for i, k in enumerate(keys)]


def _make_block(cloud: LabeledCloud, cell: tuple[int, int], idx: np.ndarray, block_xy: float) -> Block:
    origin = np.array([cell[0] * block_xy, cell[1] * block_xy, 0.0])
    labels = None if cloud.labels is None else cloud.labels[idx]
    return Block(cloud.points[idx] - origin, labels, idx, origin)


def sample_blocks(cloud: LabeledCloud, block_xy: float, points_per_block: int, rng_seed: int,
                  cover_all: bool = False) -> list[Block]:
    """Partition a cloud on an XY grid and draw fixed-size blocks per occupied cell.

    Under-populated cells keep every point and top up by uniform resampling with
    replacement; over-populated cells are subsampled without replacement. With
    ``cover_all`` an over-populated cell instead yields as many blocks as needed
    for every point to appear at least once (used for evaluation).
    """
    if block_xy <= 0 or points_per_block < 1:
        raise ValueError("block_xy and points_per_block must be positive")
    rng = np.random.default_rng(rng_seed)
    blocks = []
    for cell, members in _cell_members(cloud.points, block_xy):
        n = len(members)
        if n <= points_per_block:
            extra = rng.choice(members, size=points_per_block - n, replace=True)
            chunks = [np.concatenate([members, extra])]
        elif not cover_all:
            chunks = [np.sort(rng.choice(members, size=points_per_block, replace=False))]
        else:
            perm = rng.permutation(members)
            chunks = []
            for start in range(0, n, points_per_block):
                chunk = perm[start:start + points_per_block]
                if len(chunk) < points_per_block:
                    pad = rng.choice(perm[:start], size=points_per_block - len(chunk), replace=False)
                    chunk = np.concatenate([chunk, pad])
                chunks.append(chunk)
        blocks.extend(_make_block(cloud, cell, c, block_xy) for c in chunks)
    return blocks


def farthest_point_sample(points: np.ndarray, m: int, start: int = 0) -> np.ndarray:
    """Greedy maximin subsampling; ties go to the lowest index."""
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    if m > n:
        raise ValueError(f"farthest_point_sample: m={m} exceeds the {n} available points")
    if m < 1:
        raise ValueError("farthest_point_sample: m must be positive")
    picks = np.empty(m, dtype=np.int64)
    picks[0] = start
    mind = np.sqrt(((pts - pts[start]) ** 2).sum(axis=1))
    mind[start] = -1.0
    for i in range(1, m):
        nxt = int(np.argmax(mind))  # argmax returns the first maximum
        picks[i] = nxt
        d = np.sqrt(((pts - pts[nxt]) ** 2).sum(axis=1))
        np.minimum(mind, d, out=mind)
        mind[picks[: i + 1]] = -1.0
    return picks


def pairwise_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt((diff * diff).sum(axis=-1))


def knn(queries: np.ndarray, pool: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Exact k nearest pool rows per query, ascending; ties go to the lower pool index."""
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    pool = np.atleast_2d(np.asarray(pool, dtype=np.float64))
    if k > len(pool):
        raise ValueError(f"knn: k={k} exceeds pool size {len(pool)}")
    if k < 1:
        raise ValueError("knn: k must be positive")
    if queries.shape[1] != pool.shape[1]:
        raise ValueError(f"knn: query width {queries.shape[1]} != pool width {pool.shape[1]}")
    rows = max(1, 4_000_000 // (len(pool) * pool.shape[1]))
    idx = np.empty((len(queries), k), dtype=np.int64)
    out = np.empty((len(queries), k))
    for s in range(0, len(queries), rows):
        dist = pairwise_distances(queries[s:s + rows], pool)
        part = np.argsort(dist, axis=1, kind="stable")[:, :k]
        idx[s:s + rows] = part
        out[s:s + rows] = np.take_along_axis(dist, part, axis=1)
    return idx, out


# -- text cloud files --------------------------------------------------------

def write_cloud(path: str | os.PathLike, cloud: LabeledCloud, extra: np.ndarray | None = None) -> None:
    c = cloud.num_classes if cloud.num_classes is not None else (
        int(cloud.labels.max()) + 1 if cloud.labels is not None else 0)
    with open(path, "w") as fh:
        fh.write(f"#domain {cloud.domain_tag} #classes {c}\n")
        for i, p in enumerate(cloud.points):
            row = " ".join(repr(float(v)) for v in p)
            if cloud.labels is not None:
                row += f" {int(cloud.labels[i])}"
            if extra is not None:
                row += f" {float(extra[i])!r}"
            fh.write(row + "\n")


def _parse_header(line: str) -> tuple[str, int]:
    tokens = line.replace("#", " #").split()
    try:
        domain = tokens[tokens.index("#domain") + 1]
        classes = int(tokens[tokens.index("#classes") + 1])
    except (ValueError, IndexError):
        raise ValueError(f"malformed cloud header: {line.strip()!r}") from None
    return domain, classes


def read_cloud(path: str | os.PathLike) -> LabeledCloud:
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("#"):
            raise ValueError(f"{path}: missing '#domain ... #classes ...' header")
        domain, classes = _parse_header(header)
        rows = [line.split() for line in fh if line.strip()]
    widths = {len(r) for r in rows}
    if not rows:
        raise ValueError(f"{path}: no points")
    if len(widths) != 1 or widths.pop() not in (3, 4):
        raise ValueError(f"{path}: mixed labeled/unlabeled lines or bad column count")
    arr = np.array(rows, dtype=np.float64)
    labels = arr[:, 3].astype(np.int64) if arr.shape[1] == 4 else None
    return LabeledCloud(arr[:, :3], labels, domain, classes or None)


def num_centroids(n: int) -> int:
    return math.ceil(n / 64)

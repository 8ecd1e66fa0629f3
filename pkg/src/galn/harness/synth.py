"""Synthetic outdoor-like scenes and shifted target domains.

Categories: 0 ground, 1 boxes (buildings), 2 cylinders (poles), 3 blobs (vegetation).
"""
from __future__ import annotations

import math

import numpy as np

from ..geom import LabeledCloud

SHIFTS = ("none", "density_drop", "jitter", "dropout_class", "rotate")
NUM_CLASSES = 4
KEEP_FRACTION = 0.3
JITTER_SIGMA = 0.05

# share of each category in a scene's point budget
_MIX = (0.4, 0.25, 0.15, 0.2)


def _ground(rng, n, extent):
    xy = rng.uniform(0, extent, (n, 2))
    z = rng.normal(0, 0.03, n)
    return np.column_stack([xy, z])


def _boxes(rng, n, extent):
    count = int(rng.integers(2, 5))
    per = np.diff(np.linspace(0, n, count + 1).astype(int))
    out = []
    for m in per:
        w, d = rng.uniform(3, 6, 2)
        h = rng.uniform(3, 8)
        x0, y0 = rng.uniform(1, extent - 7, 2)
        # faces by area: walls y=0, y=d, x=0, x=w, then the roof
        areas = np.array([w * h, w * h, d * h, d * h, w * d])
        face = rng.choice(5, size=m, p=areas / areas.sum())
        u, v = rng.uniform(0, 1, (2, m))
        x = np.select([face == 2, face == 3], [0.0, w], u * w)
        y = np.select([face == 0, face == 1, face == 4], [0.0, d, v * d], u * d)
        z = np.where(face == 4, h, v * h)
        out.append(np.column_stack([x0 + x, y0 + y, z]))
    return np.concatenate(out)


def _cylinders(rng, n, extent):
    count = int(rng.integers(4, 9))
    per = np.diff(np.linspace(0, n, count + 1).astype(int))
    out = []
    for m in per:
        r = rng.uniform(0.15, 0.4)
        h = rng.uniform(3, 7)
        cx, cy = rng.uniform(0.5, extent - 0.5, 2)
        theta = rng.uniform(0, 2 * math.pi, m)
        z = rng.uniform(0, h, m)
        out.append(np.column_stack([cx + r * np.cos(theta), cy + r * np.sin(theta), z]))
    return np.concatenate(out)


def _blobs(rng, n, extent):
    count = int(rng.integers(3, 7))
    per = np.diff(np.linspace(0, n, count + 1).astype(int))
    out = []
    for m in per:
        c = np.array([*rng.uniform(1, extent - 1, 2), rng.uniform(1.5, 4.0)])
        s = rng.uniform(0.6, 1.2)
        p = c + rng.normal(0, s, (m, 3))
        p[:, 2] = np.maximum(p[:, 2], 0.3)
        out.append(p)
    return np.concatenate(out)


_MAKERS = (_ground, _boxes, _cylinders, _blobs)


def make_scene(rng: np.random.Generator, n_points: int = 4000, extent: float = 30.0,
               domain: str = "source") -> LabeledCloud:
    counts = np.floor(np.array(_MIX) * n_points).astype(int)
    counts[0] += n_points - counts.sum()
    pts, labels = [], []
    for c, (maker, m) in enumerate(zip(_MAKERS, counts)):
        p = maker(rng, int(m), extent)
        p[:, :2] = np.clip(p[:, :2], 0, extent - 1e-6)
        pts.append(p)
        labels.append(np.full(len(p), c))
    return LabeledCloud(np.concatenate(pts), np.concatenate(labels), domain, NUM_CLASSES)


def scanline_keep(points: np.ndarray, keep: int, rng: np.random.Generator,
                  beams: int = 16, sensor_height: float = 1.8) -> np.ndarray:
    """Indices of the ``keep`` points closest (in elevation angle) to a sparse beam pattern.

    Mimics a sensor with few scan lines at the scene center: what survives lies
    on rings and horizontal stripes rather than being thinned uniformly.
    """
    center = np.array([*(points[:, :2].min(0) + points[:, :2].max(0)) / 2, sensor_height])
    rel = points - center
    elev = np.arctan2(rel[:, 2], np.hypot(rel[:, 0], rel[:, 1]))
    lo, hi = math.radians(-25.0), math.radians(15.0)
    spacing = (hi - lo) / (beams - 1)
    off = np.abs(((elev - lo) / spacing + 0.5) % 1.0 - 0.5)
    score = off + rng.uniform(0, 1e-3, len(points))
    return np.sort(np.argsort(score, kind="stable")[:keep])


def apply_shift(cloud: LabeledCloud, shift: str, rng: np.random.Generator) -> LabeledCloud:
    pts, labels = cloud.points.copy(), cloud.labels.copy()
    if shift == "none":
        pass
    elif shift == "density_drop":
        keep = scanline_keep(pts, math.ceil(KEEP_FRACTION * len(pts)), rng)
        pts, labels = pts[keep], labels[keep]
    elif shift == "jitter":
        pts = pts + rng.normal(0, JITTER_SIGMA, pts.shape)
    elif shift == "dropout_class":
        # thin the vegetation class to a fifth, keeping it present
        drop = (labels == 3) & (rng.uniform(size=len(labels)) < 0.8)
        drop[np.flatnonzero(labels == 3)[:1]] = False
        pts, labels = pts[~drop], labels[~drop]
    elif shift == "rotate":
        angle = rng.uniform(0, 2 * math.pi)
        c = pts[:, :2].mean(axis=0)
        rot = np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])
        pts[:, :2] = (pts[:, :2] - c) @ rot.T + c
    else:
        raise ValueError(f"unknown shift {shift!r}; expected one of {SHIFTS}")
    return LabeledCloud(pts, labels, "target", cloud.num_classes)


def synth_domain_pair(n_scenes: int, shift: str = "density_drop", seed: int = 0,
                      n_points: int = 4000, extent: float = 30.0):
    """Source scenes and independently drawn, shifted target scenes (labels kept for evaluation)."""
    if n_scenes < 1:
        raise ValueError("n_scenes must be at least 1")
    if shift not in SHIFTS:
        raise ValueError(f"unknown shift {shift!r}; expected one of {SHIFTS}")
    rng = np.random.default_rng(seed)
    source = [make_scene(rng, n_points, extent, "source") for _ in range(n_scenes)]
    target = [apply_shift(make_scene(rng, n_points, extent, "target"), shift, rng)
              for _ in range(n_scenes)]
    return source, target

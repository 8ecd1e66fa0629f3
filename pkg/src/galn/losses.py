"""Training objectives and pseudo-label generation."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .bank import GraphBank
from .geom import Block
from .graphs import FeatureGraph
from .numcore import (Tensor, add, concat, l1_distance, mean_rows, relu, scale,
                      softmax_cross_entropy, sub)
from .otmatch import DEFAULT_EPS_SCALE, DEFAULT_ITERS, Match, match_graphs
from .segnet import ModelParams, predict


@dataclass
class MatcherConfig:
    eps: float | None = None
    eps_scale: float = DEFAULT_EPS_SCALE
    iters: int = DEFAULT_ITERS
    prefilter: int | None = None


@dataclass
class LossReport:
    seg: float
    loc: float
    con: float
    total: float
    matched_graph_count: int = 0
    skipped_graph_count: int = 0

    CSV_HEADER = "step,seg,loc,con,total,matched,skipped"

    def csv_row(self, step: int) -> str:
        return (f"{step},{self.seg!r},{self.loc!r},{self.con!r},{self.total!r},"
                f"{self.matched_graph_count},{self.skipped_graph_count}")


def _zero() -> Tensor:
    return Tensor(0.0)


def seg_loss(logits: Tensor, labels, mask=None) -> Tensor:
    return softmax_cross_entropy(logits, labels, mask)


def local_feature_loss(target_graphs: Sequence[FeatureGraph], bank: GraphBank,
                       matcher: MatcherConfig | None = None,
                       matches: Sequence[Match | None] | None = None) -> tuple[Tensor, int, int]:
    """Mean over matched graphs of the per-level normalized L1 gap to the assigned bank nodes.

    Returns ``(loss, matched, skipped)``. The assignment and the bank graph are
    constants; only the target node matrices carry gradient.
    """
    if matches is None:
        m = matcher or MatcherConfig()
        matches = match_graphs(target_graphs, bank, m.eps, m.iters, m.eps_scale, m.prefilter)
    terms = []
    for g, match in zip(target_graphs, matches):
        if match is None:
            continue
        per_graph = None
        for node, A, ref in zip(g.levels, match.assignments, match.graph.levels):
            k, d = node.shape
            gap = scale(l1_distance(node, Tensor(A @ ref.values)), 1.0 / (k * d))
            per_graph = gap if per_graph is None else add(per_graph, gap)
        terms.append(per_graph)
    skipped = len(target_graphs) - len(terms)
    if not terms:
        return _zero(), 0, skipped
    return scale(_sum(terms), 1.0 / len(terms)), len(terms), skipped


def _sum(terms: list[Tensor]) -> Tensor:
    out = terms[0]
    for t in terms[1:]:
        out = add(out, t)
    return out


def graph_mean_feature(g: FeatureGraph) -> Tensor:
    """Per-level node means concatenated, as a 1 x sum(d_j + 1) tensor."""
    return concat([mean_rows(t) for t in g.levels], axis=1)


def contrastive_targets(means: np.ndarray, present: np.ndarray,
                        category: int) -> tuple[np.ndarray, np.ndarray | None]:
    """Positive (matched category mean) and negative (mean of the other present categories)."""
    others = present.copy()
    others[category] = False
    neg = means[others].mean(axis=0) if others.any() else None
    return means[category], neg


def contrastive_loss(target_graphs: Sequence[FeatureGraph], matches: Sequence[Match | None],
                     bank: GraphBank, alpha: float = 0.4) -> Tensor:
    """Hinge on the L1 distance to the positive vs. the negative category mean."""
    if alpha < 0:
        raise ValueError(f"alpha must be nonnegative, got {alpha}")
    means, present = bank.category_means()
    terms = []
    count = 0
    for g, match in zip(target_graphs, matches):
        if match is None:
            continue
        count += 1
        pos, neg = contrastive_targets(means, present, match.category)
        if neg is None:
            continue
        f = graph_mean_feature(g)
        gap = sub(l1_distance(f, Tensor(pos[None])), l1_distance(f, Tensor(neg[None])))
        terms.append(relu(add(gap, Tensor(alpha))))
    if not terms:
        return _zero()
    return scale(_sum(terms), 1.0 / count)


def total_loss(seg: Tensor, loc: Tensor, con: Tensor, lambda1: float = 1.0,
               lambda2: float = 0.1) -> Tensor:
    return add(add(seg, scale(loc, lambda1)), scale(con, lambda2))


@dataclass
class PseudoLabels:
    labels: np.ndarray
    confidence: np.ndarray
    mask: np.ndarray


def generate_pseudo_labels(params: ModelParams, target_blocks: Sequence[Block],
                           keep_fraction: float = 0.8) -> list[PseudoLabels]:
    """Class-balanced confidence filtering of argmax predictions.

    For each predicted class, pooled over all blocks, the ``keep_fraction`` most
    confident points are accepted (ties go to the earlier block, then the lower
    point index).
    """
    if not 0 < keep_fraction <= 1:
        raise ValueError(f"keep_fraction must lie in (0, 1], got {keep_fraction}")
    probs = [predict(params, b) for b in target_blocks]
    out = [PseudoLabels(p.argmax(axis=1), p.max(axis=1), np.zeros(len(p), dtype=bool)) for p in probs]
    if not out:
        return out
    labels = np.concatenate([o.labels for o in out])
    conf = np.concatenate([o.confidence for o in out])
    accepted = select_confident(labels, conf, keep_fraction)
    offsets = np.cumsum([0] + [len(o.labels) for o in out])
    for i, o in enumerate(out):
        o.mask = accepted[offsets[i]:offsets[i + 1]]
    return out


def select_confident(labels: np.ndarray, confidence: np.ndarray, keep_fraction: float) -> np.ndarray:
    accepted = np.zeros(len(labels), dtype=bool)
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        keep = math.ceil(keep_fraction * len(members) - 1e-9)
        # lexsort: last key is primary
        order = members[np.lexsort((members, -confidence[members]))]
        accepted[order[:keep]] = True
    return accepted

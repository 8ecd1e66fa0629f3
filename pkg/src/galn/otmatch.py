"""Entropic optimal transport between feature graphs.

Sinkhorn runs in the log domain with uniform marginals and finishes with a
feasibility rounding step (scale down over-full rows and columns, then add a
rank-one correction), so returned plans meet both marginals to machine
precision regardless of how far the scaling iterations got.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .bank import GraphBank
from .graphs import FeatureGraph

DEFAULT_EPS_SCALE = 0.05
DEFAULT_ITERS = 100


def pairwise_sq_dist(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"pairwise_sq_dist: feature widths differ ({X.shape[1]} vs {Y.shape[1]})")
    diff = X[:, None, :] - Y[None, :, :]
    return (diff * diff).sum(axis=-1)


def _batched_sq_dist(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Squared distances between the last two axes, broadcasting over leading axes."""
    xx = (X * X).sum(-1)[..., :, None]
    yy = (Y * Y).sum(-1)[..., None, :]
    return np.maximum(xx + yy - 2.0 * (X @ np.swapaxes(Y, -1, -2)), 0.0)


def _logsumexp(x: np.ndarray, axis: int) -> np.ndarray:
    m = x.max(axis=axis, keepdims=True)
    return (m + np.log(np.exp(x - m).sum(axis=axis, keepdims=True))).squeeze(axis)


def _lse_last(x: np.ndarray) -> np.ndarray:
    """logsumexp over the last axis; consumes ``x`` as scratch space."""
    m = x.max(axis=-1)
    x -= m[..., None]
    np.exp(x, out=x)
    return m + np.log(x.sum(axis=-1))


def _round_to_marginals(P: np.ndarray, r: float, c: float) -> np.ndarray:
    rows = P.sum(-1)
    P = P * np.minimum(r / np.where(rows > 0, rows, 1.0), 1.0)[..., :, None]
    cols = P.sum(-2)
    P = P * np.minimum(c / np.where(cols > 0, cols, 1.0), 1.0)[..., None, :]
    # nonnegative in exact arithmetic; clamp rounding noise so P stays >= 0
    err_r = np.maximum(r - P.sum(-1), 0.0)
    err_c = np.maximum(c - P.sum(-2), 0.0)
    mass = err_r.sum(-1)
    safe = np.where(mass > 0, mass, 1.0)
    return P + err_r[..., :, None] * err_c[..., None, :] / safe[..., None, None]


def _check_cost(D: np.ndarray) -> None:
    if not np.all(np.isfinite(D)):
        raise ValueError("sinkhorn: cost matrix has non-finite entries")


# spread of scaled costs below which exp(-cost) cannot underflow a whole row
_KERNEL_RANGE = 500.0


def _sinkhorn_kernel(Dn: np.ndarray, iters: int) -> np.ndarray:
    a, b = Dn.shape[-2:]
    K = np.exp(-(Dn - Dn.min(axis=(-2, -1), keepdims=True)))
    KT = np.ascontiguousarray(np.swapaxes(K, -1, -2))
    v = np.ones(Dn.shape[:-2] + (b, 1))
    for _ in range(iters):
        u = (1.0 / a) / (K @ v)
        v = (1.0 / b) / (KT @ u)
    return u * K * np.swapaxes(v, -1, -2)


def _sinkhorn_log(Dn: np.ndarray, iters: int) -> np.ndarray:
    a, b = Dn.shape[-2:]
    log_r, log_c = -np.log(a), -np.log(b)
    # transposed copy so both passes reduce a contiguous axis
    DnT = np.ascontiguousarray(np.swapaxes(Dn, -1, -2))
    gs = np.zeros(Dn.shape[:-2] + (b,))  # potentials divided by eps
    for _ in range(iters):
        fs = log_r - _lse_last(gs[..., None, :] - Dn)
        gs = log_c - _lse_last(fs[..., None, :] - DnT)
    return np.exp(fs[..., :, None] + gs[..., None, :] - Dn)


def sinkhorn_batch(D: np.ndarray, eps, iters: int = DEFAULT_ITERS) -> np.ndarray:
    """Transport plans for a stack of a x b costs; ``eps`` broadcasts over the stack."""
    D = np.asarray(D, dtype=np.float64)
    _check_cost(D)
    eps = np.asarray(eps, dtype=np.float64)
    if np.any(eps <= 0) or not np.all(np.isfinite(eps)):
        raise ValueError("sinkhorn: eps must be positive and finite")
    if iters < 1:
        raise ValueError("sinkhorn: iters must be positive")
    a, b = D.shape[-2:]
    if a == 1 or b == 1:
        # a single row or column admits exactly one coupling
        return np.broadcast_to(np.full((a, b), 1.0 / (a * b)), D.shape).copy()
    e = np.broadcast_to(eps, D.shape[:-2])[..., None]
    Dn = D / e[..., None]
    if Dn.size and (Dn.max(axis=(-2, -1)) - Dn.min(axis=(-2, -1))).max() < _KERNEL_RANGE:
        P = _sinkhorn_kernel(Dn, iters)
    else:
        P = _sinkhorn_log(Dn, iters)
    return _round_to_marginals(P, 1.0 / a, 1.0 / b)


@dataclass
class LevelPlan:
    plan: np.ndarray
    cost: float


def sinkhorn(D: np.ndarray, eps: float, iters: int = DEFAULT_ITERS) -> LevelPlan:
    D = np.atleast_2d(np.asarray(D, dtype=np.float64))
    P = sinkhorn_batch(D, eps, iters)
    return LevelPlan(P, float((P * D).sum()))


def sinkhorn_trace(D: np.ndarray, eps: float, iters: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-iteration primal cost of the unrounded plan and the dual objective."""
    D = np.atleast_2d(np.asarray(D, dtype=np.float64))
    _check_cost(D)
    a, b = D.shape
    g = np.zeros(b)
    costs, duals = [], []
    for _ in range(iters):
        f = eps * (-np.log(a) - _logsumexp((g[None, :] - D) / eps, axis=1))
        g = eps * (-np.log(b) - _logsumexp((f[:, None] - D) / eps, axis=0))
        P = np.exp((f[:, None] + g[None, :] - D) / eps)
        costs.append((P * D).sum())
        duals.append(f.mean() + g.mean() - eps * P.sum())
    return np.array(costs), np.array(duals)


def adaptive_eps(D: np.ndarray, eps_scale: float = DEFAULT_EPS_SCALE) -> np.ndarray:
    """``eps_scale`` times the mean cost of each matrix in a stack (1.0 for all-zero costs)."""
    m = D.mean(axis=(-2, -1))
    return np.where(m > 0, eps_scale * m, 1.0)


@dataclass
class TransportPlan:
    plans: list[np.ndarray]
    level_costs: list[float]

    @property
    def total_cost(self) -> float:
        return float(sum(self.level_costs))


def _level_costs(target_levels: Sequence[np.ndarray], bank_levels: Sequence[np.ndarray],
                 eps, iters: int, eps_scale: float):
    """Plans and normalized costs of one or more targets against stacked candidates.

    ``target_levels[j]`` is (..., k, D) and ``bank_levels[j]`` is (G, k, D);
    returned plans are (..., G, k, k) and costs (..., G).
    """
    plans, costs = [], []
    for t, b in zip(target_levels, bank_levels):
        if t.shape[-2:] != b.shape[-2:]:
            raise ValueError(f"graph level shapes differ: {t.shape[-2:]} vs {b.shape[-2:]}")
        D = _batched_sq_dist(t[..., None, :, :], b) / t.shape[-1]
        e = adaptive_eps(D, eps_scale) if eps is None else eps
        P = sinkhorn_batch(D, e, iters)
        plans.append(P)
        costs.append((P * D).sum(axis=(-2, -1)))
    return plans, costs


def graph_transport(g1: FeatureGraph, g2: FeatureGraph, eps: float | None = None,
                    iters: int = DEFAULT_ITERS, eps_scale: float = DEFAULT_EPS_SCALE) -> TransportPlan:
    """Per-level OT between two graphs; costs use width-normalized squared distances.

    ``eps=None`` selects ``eps_scale * mean(cost)`` per level.
    """
    if len(g1.levels) != len(g2.levels):
        raise ValueError("graphs have different numbers of levels")
    plans, costs = _level_costs(g1.arrays(), [a[None] for a in g2.arrays()], eps, iters, eps_scale)
    return TransportPlan([p[0] for p in plans], [float(c[0]) for c in costs])


@dataclass
class Match:
    category: int
    bank_index: int
    assignments: list[np.ndarray]  # row-stochastic, one per level
    total_cost: float
    graph: FeatureGraph


def match_graphs(targets: Sequence[FeatureGraph], bank: GraphBank, eps: float | None = None,
                 iters: int = DEFAULT_ITERS, eps_scale: float = DEFAULT_EPS_SCALE,
                 prefilter: int | None = None) -> list[Match | None]:
    """Cheapest bank graph for every target; ``None`` for all when the bank is empty.

    ``prefilter`` restricts the scan to that many candidates closest in mean
    feature (off by default).
    """
    stack = bank.stacked()
    if stack is None or not targets:
        return [None] * len(targets)
    tgt = [np.stack([g.levels[j].values for g in targets]) for j in range(len(stack.levels))]
    cand = np.arange(len(stack.graphs))
    if prefilter is not None and prefilter < len(cand):
        means_t = np.concatenate([t.mean(axis=1) for t in tgt], axis=1)
        means_b = np.concatenate([b.mean(axis=1) for b in stack.levels], axis=1)
        order = np.argsort(_batched_sq_dist(means_t, means_b), axis=1, kind="stable")[:, :prefilter]
        return [_best_of(targets[i:i + 1], stack, np.sort(order[i]), eps, iters, eps_scale)[0]
                for i in range(len(targets))]
    return _best_of(targets, stack, cand, eps, iters, eps_scale, tgt)


def _best_of(targets, stack, cand, eps, iters, eps_scale, tgt=None):
    if tgt is None:
        tgt = [np.stack([g.levels[j].values for g in targets]) for j in range(len(stack.levels))]
    plans, costs = _level_costs(tgt, [b[cand] for b in stack.levels], eps, iters, eps_scale)
    totals = np.sum(costs, axis=0)  # T x G, summed level by level in fixed order
    best = np.argmin(totals, axis=1)  # first minimum: lowest category, then oldest
    out = []
    for i, col in enumerate(best):
        g = int(cand[col])
        out.append(Match(
            category=int(stack.categories[g]),
            bank_index=int(stack.ages[g]),
            assignments=[p[i, col] * p.shape[-2] for p in plans],
            total_cost=float(totals[i, col]),
            graph=stack.graphs[g],
        ))
    return out


def best_match(target: FeatureGraph, bank: GraphBank, eps: float | None = None,
               iters: int = DEFAULT_ITERS, eps_scale: float = DEFAULT_EPS_SCALE) -> Match | None:
    return match_graphs([target], bank, eps, iters, eps_scale)[0]

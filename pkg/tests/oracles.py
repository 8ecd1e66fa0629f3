"""Independent reference computations shared by the test modules."""
import itertools

import numpy as np

from galn.numcore import (Tape, Tensor, add, concat, gather_mean, gather_rows, l1_distance, matmul,
                          mean_rows, relu, row_norm, scale, softmax_cross_entropy, squared_distance,
                          sub, total)


def fd_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of one array (x is restored)."""
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + h
        fp = f(x)
        x[i] = old - h
        fm = f(x)
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.abs(a).max(), np.abs(b).max(), 1e-8)
    return float(np.abs(a - b).max() / scale)


def check_grads(build, arrays, probe_seed=0, h=1e-5) -> float:
    """Worst relative error between tape gradients and finite differences.

    ``build`` maps a list of Tensors to an output Tensor; a fixed random probe
    turns that output into a smooth scalar.
    """
    out_shape = build([Tensor(a) for a in arrays]).shape
    probe = np.random.default_rng(probe_seed).normal(size=out_shape)

    def scalar(vals):
        return squared_distance(build([Tensor(v) for v in vals]), Tensor(probe)).item()

    ts = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    with Tape() as tape:
        loss = squared_distance(build(ts), Tensor(probe))
    tape.backward(loss)
    worst = 0.0
    for i, a in enumerate(arrays):
        vals = [v.copy() for v in arrays]

        def f(x, i=i):
            vals[i] = x
            return scalar(vals)

        num = fd_grad(f, vals[i].copy(), h)
        worst = max(worst, rel_err(ts[i].grad, num))
    return worst


def greedy_maximin(points: np.ndarray, m: int, start: int) -> list[int]:
    """Farthest point sampling recomputed from scratch at every pick."""
    picks = [start]
    while len(picks) < m:
        best, best_d = None, -1.0
        for i in range(len(points)):
            d = min(float(np.sqrt(((points[i] - points[p]) ** 2).sum())) for p in picks)
            if d > best_d:
                best, best_d = i, d
        picks.append(best)
    return picks


def exhaustive_knn(queries: np.ndarray, pool: np.ndarray, k: int):
    idx, dist = [], []
    for q in queries:
        d = [float(np.sqrt(((q - p) ** 2).sum())) for p in pool]
        order = sorted(range(len(pool)), key=lambda j: (d[j], j))[:k]
        idx.append(order)
        dist.append([d[j] for j in order])
    return np.array(idx), np.array(dist)


def assignment_optimum(D: np.ndarray) -> float:
    """Exact uniform-marginal OT cost of a square matrix: best permutation, averaged."""
    n = D.shape[0]
    return min(sum(D[i, p[i]] for i in range(n)) / n for p in itertools.permutations(range(n)))


def away_from_zero(rng, shape, margin=0.1):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin, x)


def primitive_cases(rng):
    """(name, build, arrays) with inputs kept off every kink."""
    idx_rows = rng.integers(0, 5, size=7)
    idx_mean = rng.integers(0, 5, size=(3, 4))
    labels = rng.integers(0, 3, size=5)
    mask = np.array([True, False, True, True, False])
    return [
        ("matmul", lambda t: matmul(t[0], t[1]), [rng.normal(size=(4, 3)), rng.normal(size=(3, 2))]),
        ("add", lambda t: add(t[0], t[1]), [rng.normal(size=(4, 3)), rng.normal(size=(1, 3))]),
        ("sub", lambda t: sub(t[0], t[1]), [rng.normal(size=(4, 3)), rng.normal(size=(4, 3))]),
        ("relu", lambda t: relu(t[0]), [away_from_zero(rng, (4, 3))]),
        ("concat", lambda t: concat([t[0], t[1]], axis=1), [rng.normal(size=(3, 2)), rng.normal(size=(3, 4))]),
        ("mean_rows", lambda t: mean_rows(t[0]), [rng.normal(size=(5, 3))]),
        ("sum", lambda t: total(t[0]), [rng.normal(size=(2, 3))]),
        ("l1_distance", lambda t: l1_distance(t[0], t[1]),
         [a := rng.normal(size=(3, 3)), a + away_from_zero(rng, (3, 3))]),
        ("squared_distance", lambda t: squared_distance(t[0], t[1]), [rng.normal(size=(3, 2)), rng.normal(size=(3, 2))]),
        ("row_norm", lambda t: row_norm(t[0]), [away_from_zero(rng, (4, 3), 0.5)]),
        ("softmax_cross_entropy", lambda t: softmax_cross_entropy(t[0], labels), [rng.normal(size=(5, 3))]),
        ("softmax_cross_entropy_masked", lambda t: softmax_cross_entropy(t[0], labels, mask), [rng.normal(size=(5, 3))]),
        ("gather_rows", lambda t: gather_rows(t[0], idx_rows), [rng.normal(size=(5, 2))]),
        ("gather_mean", lambda t: gather_mean(t[0], idx_mean), [rng.normal(size=(5, 2))]),
        ("scale", lambda t: scale(t[0], -1.7), [rng.normal(size=(2, 2))]),
    ]

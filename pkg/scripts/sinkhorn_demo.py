"""Entropic OT on a small assignment problem: plan sharpness and cost gap against eps."""
import itertools

import numpy as np

from galn.otmatch import sinkhorn


def main():
    rng = np.random.default_rng(0)
    D = rng.uniform(0, 1, (5, 5))
    best = min(itertools.permutations(range(5)), key=lambda p: sum(D[i, p[i]] for i in range(5)))
    opt = sum(D[i, best[i]] for i in range(5)) / 5
    print("cost matrix:\n", np.round(D, 3))
    print(f"optimal permutation {best}, cost {opt:.4f}\n")
    print(f"{'eps':>8}{'cost':>10}{'gap %':>9}{'max row':>10}  argmax per row")
    for eps in (1.0, 0.3, 0.1, 0.03, 0.01, 0.003, 0.001):
        lp = sinkhorn(D, eps, 2000)
        A = 5 * lp.plan  # row-stochastic assignment
        gap = 100 * (lp.cost - opt) / opt
        print(f"{eps:>8g}{lp.cost:>10.4f}{gap:>9.2f}{A.max(axis=1).min():>10.3f}  {A.argmax(axis=1).tolist()}")


if __name__ == "__main__":
    main()

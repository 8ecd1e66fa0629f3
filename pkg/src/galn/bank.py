"""Per-category FIFO memory of source-domain feature graphs."""
from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass

import numpy as np

from .graphs import FeatureGraph


@dataclass(frozen=True)
class BankEntry:
    counter: int
    graph: FeatureGraph


@dataclass
class BankStack:
    """All stored graphs as dense per-level arrays, in snapshot order."""

    levels: list[np.ndarray]  # each G x k_j x (d_j + 1)
    categories: np.ndarray
    ages: np.ndarray          # position within the category, oldest first
    graphs: list[FeatureGraph]


class GraphBank:
    def __init__(self, num_classes: int, capacity: int = 16):
        if num_classes < 1 or capacity < 1:
            raise ValueError("num_classes and capacity must be positive")
        self.num_classes = num_classes
        self.capacity = capacity
        self._slots = [deque(maxlen=capacity) for _ in range(num_classes)]
        self._counter = itertools.count()
        self._layout: tuple[tuple[int, int], ...] | None = None
        self._stack: BankStack | None = None

    def __len__(self) -> int:
        return sum(len(s) for s in self._slots)

    def counts(self) -> list[int]:
        return [len(s) for s in self._slots]

    def insert(self, graph: FeatureGraph) -> None:
        c = graph.centroid_label
        if c is None:
            raise ValueError("cannot bank a graph without a centroid label")
        if not 0 <= c < self.num_classes:
            raise ValueError(f"graph label {c} outside [0, {self.num_classes})")
        layout = tuple(t.shape for t in graph.levels)
        if self._layout is None:
            self._layout = layout
        elif layout != self._layout:
            raise ValueError(f"graph level shapes {layout} differ from the bank's {self._layout}")
        # a full deque drops its leftmost (oldest) entry on append
        self._slots[c].append(BankEntry(next(self._counter), graph.detached()))
        self._stack = None

    def snapshot(self) -> tuple[tuple[BankEntry, ...], ...]:
        return tuple(tuple(s) for s in self._slots)

    def stacked(self) -> BankStack | None:
        if not len(self):
            return None
        if self._stack is None:
            graphs, cats, ages = [], [], []
            for c, slot in enumerate(self._slots):
                for age, entry in enumerate(slot):
                    graphs.append(entry.graph)
                    cats.append(c)
                    ages.append(age)
            levels = [np.stack([g.levels[j].values for g in graphs]) for j in range(len(self._layout))]
            self._stack = BankStack(levels, np.array(cats), np.array(ages), graphs)
        return self._stack

    def category_means(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-category pooled node means per level, concatenated; plus a presence mask."""
        mask = np.array([len(s) > 0 for s in self._slots])
        if self._layout is None:
            return np.zeros((self.num_classes, 0)), mask
        width = sum(shape[1] for shape in self._layout)
        means = np.zeros((self.num_classes, width))
        for c, slot in enumerate(self._slots):
            if slot:
                means[c] = np.concatenate([
                    np.concatenate([e.graph.levels[j].values for e in slot]).mean(axis=0)
                    for j in range(len(self._layout))
                ])
        return means, mask

    @classmethod
    def from_snapshot(cls, snapshot, capacity: int) -> "GraphBank":
        bank = cls(len(snapshot), capacity)
        for slot in snapshot:
            for entry in slot:
                bank.insert(entry.graph)
        return bank

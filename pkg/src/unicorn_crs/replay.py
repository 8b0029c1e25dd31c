"""Proportional prioritized replay backed by a sum tree."""

from __future__ import annotations

from typing import Any

import numpy as np


class SumTree:
    """Binary tree over ``capacity`` leaves; each internal node holds the sum of its children."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        size = 1
        while size < capacity:
            size *= 2
        self._size = size
        self.nodes = np.zeros(2 * size)

    @property
    def total(self) -> float:
        return float(self.nodes[1])

    def __getitem__(self, i: int) -> float:
        return float(self.nodes[self._size + i])

    def leaves(self) -> np.ndarray:
        return self.nodes[self._size:self._size + self.capacity]

    def update(self, i: int, value: float) -> None:
        if not 0 <= i < self.capacity:
            raise IndexError(i)
        if value < 0:
            raise ValueError("priorities must be non-negative")
        j = self._size + i
        self.nodes[j] = value
        j //= 2
        while j >= 1:
            # recompute rather than add a delta, so rounding never accumulates
            self.nodes[j] = self.nodes[2 * j] + self.nodes[2 * j + 1]
            j //= 2

    def find(self, mass: float) -> int:
        """Leaf whose cumulative-sum interval contains ``mass``."""
        j = 1
        while j < self._size:
            left = self.nodes[2 * j]
            if mass < left or self.nodes[2 * j + 1] <= 0.0:
                j = 2 * j
            else:
                mass -= left
                j = 2 * j + 1
        return min(j - self._size, self.capacity - 1)


class PrioritizedReplay:
    """Ring buffer with sampling probability proportional to ``(|delta| + eps) ** alpha``.

    New entries get the largest priority seen so far so they are replayed at
    least once before their TD error is known.
    """

    def __init__(self, capacity: int = 50_000, alpha: float = 0.6, eps: float = 1e-5):
        self.capacity = capacity
        self.alpha = alpha
        self.eps = eps
        self.tree = SumTree(capacity)
        self.data: list[Any] = [None] * capacity
        self.priorities = np.zeros(capacity)
        self._next = 0
        self.size = 0
        self.max_priority = 1.0

    def __len__(self) -> int:
        return self.size

    def add(self, entry: Any, priority: float | None = None) -> int:
        i = self._next
        self.data[i] = entry
        self.set_priority(i, self.max_priority if priority is None else priority)
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        return i

    def set_priority(self, i: int, priority: float) -> None:
        if priority <= 0:
            raise ValueError("priority must be positive")
        self.priorities[i] = priority
        self.max_priority = max(self.max_priority, priority)
        self.tree.update(i, priority ** self.alpha)

    def priority_from_error(self, td_error: float) -> float:
        return abs(td_error) + self.eps

    def update_errors(self, indices, td_errors) -> None:
        for i, d in zip(indices, td_errors):
            self.set_priority(int(i), self.priority_from_error(float(d)))

    def probabilities(self) -> np.ndarray:
        leaves = self.tree.leaves()[: self.size]
        return leaves / leaves.sum()

    def sample(self, n: int, rng: np.random.Generator, beta: float = 0.4) -> tuple[np.ndarray, list[Any], np.ndarray]:
        """Stratified proportional sample of ``n`` indices.

        Returns (indices, entries, importance weights normalised by their max).
        """
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        total = self.tree.total
        bounds = np.linspace(0.0, total, n + 1)
        masses = rng.uniform(bounds[:-1], bounds[1:])
        idx = np.array([self.tree.find(m) for m in masses], dtype=np.int64)
        probs = np.array([self.tree[i] for i in idx]) / total
        weights = (self.size * probs) ** (-beta)
        weights /= weights.max()
        return idx, [self.data[i] for i in idx], weights

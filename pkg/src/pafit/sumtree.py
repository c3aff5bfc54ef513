"""Binary sum tree for dynamic weighted sampling.

Leaves hold nonnegative weights; internal nodes hold subtree sums.  Point
updates and prefix search are O(log n).  The array layout is the usual
heap one: root at index 1, children of ``i`` at ``2i`` and ``2i + 1``,
leaves at ``[cap, 2 cap)``.  The kernels are plain numba functions so the
graph simulator and the urn engine share one hot path.

Prefix-search ties resolve toward the lower leaf index, and a subtree of
zero weight is never entered.
"""
from __future__ import annotations

import numpy as np
from numba import njit

REBUILD_EVERY = 1 << 20


@njit(cache=True)
def tree_set(tree, cap, leaf, value):
    i = leaf + cap
    delta = value - tree[i]
    while i >= 1:
        tree[i] += delta
        i >>= 1


@njit(cache=True)
def tree_add(tree, cap, leaf, delta):
    i = leaf + cap
    while i >= 1:
        tree[i] += delta
        i >>= 1


@njit(cache=True)
def tree_find(tree, cap, u):
    """Leaf ``i`` with ``prefix(i) <= u < prefix(i + 1)``; ``u`` in ``[0, total)``."""
    i = 1
    while i < cap:
        left = 2 * i
        if u < tree[left] or tree[left + 1] <= 0.0:
            i = left
        else:
            u -= tree[left]
            i = left + 1
    return i - cap


@njit(cache=True)
def tree_rebuild(tree, cap):
    for i in range(cap - 1, 0, -1):
        tree[i] = tree[2 * i] + tree[2 * i + 1]


def capacity_for(n):
    cap = 1
    while cap < max(n, 1):
        cap <<= 1
    return cap


class SumTree:
    """Growable sum tree over ``size`` leaves."""

    def __init__(self, capacity=16):
        self.cap = capacity_for(capacity)
        self.tree = np.zeros(2 * self.cap)
        self.size = 0
        self.updates = 0

    @classmethod
    def from_weights(cls, weights):
        w = np.asarray(weights, dtype=float)
        t = cls(len(w))
        t.tree[t.cap:t.cap + len(w)] = w
        t.size = len(w)
        tree_rebuild(t.tree, t.cap)
        return t

    def _grow(self, need):
        cap = capacity_for(need)
        leaves = self.tree[self.cap:self.cap + self.size].copy()
        self.cap = cap
        self.tree = np.zeros(2 * cap)
        self.tree[cap:cap + leaves.size] = leaves
        tree_rebuild(self.tree, cap)

    def append(self, weight):
        if self.size >= self.cap:
            self._grow(self.size + 1)
        self.size += 1
        self.set(self.size - 1, weight)
        return self.size - 1

    def set(self, leaf, weight):
        if weight < 0:
            raise ValueError("weights must be nonnegative")
        tree_set(self.tree, self.cap, leaf, float(weight))
        self._tick()

    def add(self, leaf, delta):
        tree_add(self.tree, self.cap, leaf, float(delta))
        self._tick()

    def _tick(self):
        self.updates += 1
        if self.updates % REBUILD_EVERY == 0:
            self.rebuild()

    def rebuild(self):
        tree_rebuild(self.tree, self.cap)

    def get(self, leaf):
        return float(self.tree[self.cap + leaf])

    @property
    def total(self):
        return float(self.tree[1])

    def leaves(self):
        return self.tree[self.cap:self.cap + self.size]

    def find(self, u):
        """Leaf for a point ``u`` in ``[0, total)``."""
        return int(tree_find(self.tree, self.cap, float(u)))

    def sample(self, rng):
        return self.find(rng.random() * self.total)

    def audit(self):
        """Relative gap between the stored root and a fresh sum of the leaves."""
        exact = float(np.sum(self.leaves()))
        if exact == 0:
            return abs(self.total)
        return abs(self.total - exact) / exact

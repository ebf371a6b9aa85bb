"""Isolation forest over window vectors: the unsupervised warm-up scorer.

Scores follow the classic construction: s(x) = 2^(-E[h(x)] / c(psi)) where
h is the leaf-adjusted path length and c(m) the average unsuccessful-search
path length of a binary search tree of m points. Higher scores are more
anomalous; a point of average depth scores exactly 0.5.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

_EULER_GAMMA = 0.5772156649015329


def _harmonic(k: int) -> float:
    """H(k), exact up to k=1000, ln(k) + gamma above."""
    if k <= 0:
        return 0.0
    if k <= 1000:
        return float(np.sum(1.0 / np.arange(1, k + 1)))
    return math.log(k) + _EULER_GAMMA


def average_path_length(m: int) -> float:
    """c(m): expected path length of an unsuccessful BST search among m points."""
    if m <= 1:
        return 0.0
    if m == 2:
        return 1.0
    return 2.0 * _harmonic(m - 1) - 2.0 * (m - 1) / m


@dataclass
class _Leaf:
    size: int


@dataclass
class _Split:
    dim: int
    value: float
    left: "_Split | _Leaf"
    right: "_Split | _Leaf"


@dataclass
class IsolationTree:
    root: "_Split | _Leaf"
    height_limit: int

    def path_lengths(self, X: np.ndarray) -> np.ndarray:
        """Leaf-adjusted path length for each row of X."""
        out = np.empty(len(X))
        self._descend(self.root, X, np.arange(len(X)), 0, out)
        return out

    def _descend(self, node, X, idx, depth, out):
        if isinstance(node, _Leaf):
            out[idx] = depth + average_path_length(node.size)
            return
        mask = X[idx, node.dim] < node.value
        if mask.any():
            self._descend(node.left, X, idx[mask], depth + 1, out)
        if (~mask).any():
            self._descend(node.right, X, idx[~mask], depth + 1, out)

    def max_depth(self) -> int:
        def depth(node):
            if isinstance(node, _Leaf):
                return 0
            return 1 + max(depth(node.left), depth(node.right))

        return depth(self.root)


@dataclass
class IsolationForest:
    trees: list[IsolationTree]
    subsample_size: int
    num_trees: int
    c_psi: float
    dim: int


def _build(X: np.ndarray, idx: np.ndarray, depth: int, limit: int, rng) -> "_Split | _Leaf":
    if depth >= limit or len(idx) <= 1:
        return _Leaf(size=len(idx))
    sub = X[idx]
    lo = sub.min(axis=0)
    hi = sub.max(axis=0)
    splittable = np.flatnonzero(hi > lo)
    if len(splittable) == 0:
        return _Leaf(size=len(idx))
    dim = int(rng.choice(splittable))
    value = float(rng.uniform(lo[dim], hi[dim]))
    mask = sub[:, dim] < value
    if not mask.any() or mask.all():
        return _Leaf(size=len(idx))
    return _Split(
        dim=dim,
        value=value,
        left=_build(X, idx[mask], depth + 1, limit, rng),
        right=_build(X, idx[~mask], depth + 1, limit, rng),
    )


def iforest_fit(windows, num_trees: int = 100, subsample_size: int = 256, seed: int = 0) -> IsolationForest:
    """Fit an isolation forest treating each window as one point.

    Each tree grows on a uniform random subsample of ``subsample_size``
    windows with height limit ceil(log2(subsample_size)). If fewer windows
    than the subsample size are given, the size is clamped with a warning.
    """
    X = np.stack([np.asarray(w.values if hasattr(w, "values") else w, dtype=float) for w in windows])
    n = len(X)
    if num_trees < 1:
        raise ValueError("num_trees must be >= 1")
    if subsample_size < 2:
        raise ValueError("subsample_size must be >= 2")
    if n < 2:
        raise ValueError("need at least 2 windows to fit")
    psi = subsample_size
    if n < psi:
        warnings.warn(
            f"subsample_size {psi} exceeds the {n} available windows; clamping to {n}",
            stacklevel=2,
        )
        psi = n
    limit = int(math.ceil(math.log2(psi)))
    rng = np.random.default_rng(seed)
    trees = []
    for _ in range(num_trees):
        idx = rng.choice(n, size=psi, replace=False)
        trees.append(IsolationTree(root=_build(X, idx, 0, limit, rng), height_limit=limit))
    return IsolationForest(
        trees=trees,
        subsample_size=psi,
        num_trees=num_trees,
        c_psi=average_path_length(psi),
        dim=X.shape[1],
    )


def iforest_score_batch(forest: IsolationForest, X: np.ndarray) -> np.ndarray:
    """Anomaly score in (0,1) for each row of X."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != forest.dim:
        raise ValueError(f"expected windows of dimension {forest.dim}, got shape {X.shape}")
    # normalize each tree's depth by c(psi) before averaging so that a point
    # of exactly average depth scores exactly 0.5
    mean_ratio = np.zeros(len(X))
    for tree in forest.trees:
        mean_ratio += tree.path_lengths(X) / forest.c_psi
    mean_ratio /= len(forest.trees)
    return np.power(2.0, -mean_ratio)


def iforest_score(forest: IsolationForest, window) -> float:
    """Anomaly score of a single window."""
    vals = np.asarray(window.values if hasattr(window, "values") else window, dtype=float)
    return float(iforest_score_batch(forest, vals[None, :])[0])


def warmup_select(scores, n_w: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pick three pairwise-disjoint index sets of size n_w from anomaly scores.

    ``top`` holds the largest scores, ``bottom`` the smallest among the rest,
    ``boundary`` those closest to 0.5 among the remainder. Ties break by
    ascending index so the selection is deterministic.
    """
    scores = np.asarray(scores, dtype=float)
    n = len(scores)
    if n_w < 1:
        raise ValueError("n_w must be >= 1")
    if n < 3 * n_w:
        raise ValueError(f"need at least {3 * n_w} scores, got {n}")

    idx = np.arange(n)
    top = idx[np.lexsort((idx, -scores))][:n_w]

    remaining = np.setdiff1d(idx, top, assume_unique=True)
    bottom = remaining[np.lexsort((remaining, scores[remaining]))][:n_w]

    remaining = np.setdiff1d(remaining, bottom, assume_unique=True)
    closeness = np.abs(scores[remaining] - 0.5)
    boundary = remaining[np.lexsort((remaining, closeness))][:n_w]

    return np.sort(top), np.sort(bottom), np.sort(boundary)

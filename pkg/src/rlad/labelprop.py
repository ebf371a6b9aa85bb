"""Transductive label propagation over a fully connected RBF-affinity graph.

Human labels are clamped one-hot; the class distribution diffuses over the
graph (Y <- T_bar Y, row-normalize, clamp) until it converges. Rows whose
converged distribution has low entropy receive machine pseudo-labels, which
are free: they never count against the human-label budget.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class LabelDistribution:
    """Converged class probabilities: first ``n_labeled`` rows are clamped one-hot."""

    y: np.ndarray
    n_labeled: int
    n_iter: int
    converged: bool
    max_row_sum_dev: float


def pairwise_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances between rows of a and rows of b."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise ValueError("non-finite window vectors yield non-finite distances")
    aa = (a * a).sum(axis=1)
    bb = (b * b).sum(axis=1)
    d2 = aa[:, None] + bb[None, :] - 2.0 * (a @ b.T)
    return np.maximum(d2, 0.0)


def rbf_affinity(X: np.ndarray, sigma: float) -> np.ndarray:
    """w_ij = exp(-d_ij^2 / sigma^2); symmetric with unit diagonal."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    d2 = pairwise_sq_dists(X, X)
    if not np.isfinite(d2).all():
        raise ValueError("non-finite pairwise distances")
    np.fill_diagonal(d2, 0.0)
    w = np.exp(-d2 / (sigma * sigma))
    return 0.5 * (w + w.T)


def transition_matrices(w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Column-normalize the affinities into T, then row-normalize into T_bar."""
    t = w / w.sum(axis=0, keepdims=True)
    t_bar = t / t.sum(axis=1, keepdims=True)
    return t, t_bar


def median_sigma(X: np.ndarray, fallback: np.ndarray | None = None) -> float:
    """Median pairwise distance heuristic; falls back to the wider set, then 1.0."""
    X = np.asarray(X, dtype=float)
    if len(X) >= 2:
        d2 = pairwise_sq_dists(X, X)
        med = float(np.median(np.sqrt(d2[np.triu_indices(len(X), k=1)])))
        if med > 0:
            return med
    if fallback is not None and len(fallback) >= 2:
        d2 = pairwise_sq_dists(fallback, fallback)
        med = float(np.median(np.sqrt(d2[np.triu_indices(len(fallback), k=1)])))
        if med > 0:
            return med
    return 1.0


def lp_fit(
    labeled_x: np.ndarray,
    labeled_y,
    unlabeled_x: np.ndarray,
    sigma: float | None = None,
    tol: float = 1e-6,
    max_iter: int = 1000,
) -> LabelDistribution:
    """Propagate binary labels from labeled to unlabeled window vectors.

    ``sigma`` defaults to the median pairwise distance of the labeled set.
    Iteration stops when the max elementwise change drops below ``tol``.
    """
    labeled_x = np.atleast_2d(np.asarray(labeled_x, dtype=float))
    unlabeled_x = np.asarray(unlabeled_x, dtype=float)
    if unlabeled_x.size == 0:
        unlabeled_x = np.empty((0, labeled_x.shape[1]))
    unlabeled_x = np.atleast_2d(unlabeled_x)
    labeled_y = np.asarray(labeled_y, dtype=int)
    n_l = len(labeled_x)
    n_u = len(unlabeled_x)
    if n_l == 0:
        raise ValueError("label propagation needs at least one labeled example")
    if len(labeled_y) != n_l:
        raise ValueError("labeled_x and labeled_y disagree in length")
    if not np.isin(labeled_y, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")

    one_hot = np.zeros((n_l, 2))
    one_hot[np.arange(n_l), labeled_y] = 1.0

    if n_u == 0:
        return LabelDistribution(one_hot, n_l, 0, True, 0.0)

    if sigma is None:
        sigma = median_sigma(labeled_x, fallback=np.vstack([labeled_x, unlabeled_x]))

    X = np.vstack([labeled_x, unlabeled_x])
    w = rbf_affinity(X, sigma)
    _, t_bar = transition_matrices(w)

    y = np.full((n_l + n_u, 2), 0.5)
    y[:n_l] = one_hot
    max_dev = 0.0
    n_iter = 0
    converged = False
    for n_iter in range(1, max_iter + 1):
        y_new = t_bar @ y
        y_new /= y_new.sum(axis=1, keepdims=True)
        y_new[:n_l] = one_hot
        max_dev = max(max_dev, float(np.abs(y_new.sum(axis=1) - 1.0).max()))
        delta = float(np.abs(y_new - y).max())
        y = y_new
        if delta < tol:
            converged = True
            break
    return LabelDistribution(y, n_l, n_iter, converged, max_dev)


def lp_entropy(row) -> float:
    """Natural-log entropy of a probability pair, with 0 * log 0 = 0."""
    p = np.asarray(row, dtype=float)
    if p.min() < 0 or abs(p.sum() - 1.0) > 1e-6:
        raise ValueError("row must be a probability distribution")
    return float(_row_entropies(p[None, :])[0])


def _row_entropies(y: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(y > 0, y * np.log(y), 0.0)
    return -terms.sum(axis=1)


def lp_pseudo_labels(dist: LabelDistribution, entropy_max: float) -> list[tuple[int, int]]:
    """Pseudo-label the unlabeled rows whose entropy is at most ``entropy_max``.

    Returns (index-into-the-unlabeled-set, argmax class) pairs. These labels
    are machine-made and must not be counted as human labels.
    """
    rows = dist.y[dist.n_labeled :]
    if len(rows) == 0:
        return []
    ent = _row_entropies(rows)
    picked = np.flatnonzero(ent <= entropy_max)
    return [(int(i), int(np.argmax(rows[i]))) for i in picked]


def nearest_candidates(labeled_x: np.ndarray, unlabeled_x: np.ndarray, cap: int) -> np.ndarray:
    """Indices of the unlabeled rows nearest to any labeled row, at most ``cap``.

    Keeps the dense propagation graph tractable on long series.
    """
    unlabeled_x = np.atleast_2d(np.asarray(unlabeled_x, dtype=float))
    n_u = len(unlabeled_x)
    if n_u <= cap:
        return np.arange(n_u)
    d2 = pairwise_sq_dists(unlabeled_x, np.atleast_2d(labeled_x))
    nearest = d2.min(axis=1)
    order = np.lexsort((np.arange(n_u), nearest))
    return np.sort(order[:cap])

"""Query selection over unlabeled windows, oracle abstractions and label
bookkeeping.

Margin sampling queries the windows where the agent is least decided,
i.e. smallest |q0 - q1|. Human labels are the scarce resource: the budget
counts warm-up seeds plus answered queries, never pseudo-labels.
"""

from __future__ import annotations

import time
import uuid
import warnings
from dataclasses import dataclass, field

import numpy as np

from .neural import QNetParams, forward_batch
from .timeseries import LABEL_UNKNOWN, SOURCE_HUMAN, SOURCE_NONE, SOURCE_PSEUDO

STRATEGIES = ("random", "least_confidence", "margin", "entropy")


class QueryError(RuntimeError):
    """A query to the oracle could not be completed (e.g. timeout)."""


@dataclass(frozen=True)
class QueryItem:
    """One window offered for labeling, with display context."""

    index: int
    margin: float
    window: np.ndarray
    context: np.ndarray
    context_start: int
    end_index: int
    episode: int


@dataclass(frozen=True)
class QueryBatch:
    """An immutable batch of query items, sorted by ascending margin."""

    items: tuple[QueryItem, ...]
    created_at: float
    batch_id: str

    def __post_init__(self):
        margins = [it.margin for it in self.items]
        if margins != sorted(margins):
            raise ValueError("query items must be sorted by ascending margin")
        indices = [it.index for it in self.items]
        if len(set(indices)) != len(indices):
            raise ValueError("query items must have unique indices")

    @classmethod
    def build(cls, items) -> "QueryBatch":
        return cls(items=tuple(items), created_at=time.time(), batch_id=uuid.uuid4().hex[:12])

    def indices(self) -> list[int]:
        return [it.index for it in self.items]

    def __len__(self) -> int:
        return len(self.items)


@dataclass
class LabelBudget:
    """Counts human labels (warm-up + queries) against an optional cap."""

    human_labels_used: int = 0
    pseudo_labels_assigned: int = 0
    budget_cap: int | None = None

    def remaining(self) -> int | None:
        if self.budget_cap is None:
            return None
        return max(0, self.budget_cap - self.human_labels_used)


class LabelStore:
    """Working per-window label state for one training run.

    Human labels are final: a pseudo-label never overwrites one, and a second
    human label for the same window is an error. Pseudo-labels may be
    replaced by later propagation rounds.
    """

    def __init__(self, size: int):
        self.labels = np.full(size, LABEL_UNKNOWN, dtype=np.int64)
        self.sources = np.array([SOURCE_NONE] * size, dtype=object)
        self._ever_pseudo: set[int] = set()

    def set_human(self, index: int, label: int) -> None:
        if label not in (0, 1):
            raise ValueError("human label must be 0 or 1")
        if self.sources[index] == SOURCE_HUMAN:
            raise ValueError(f"window {index} already carries a human label")
        self.labels[index] = label
        self.sources[index] = SOURCE_HUMAN

    def set_pseudo(self, index: int, label: int) -> None:
        if label not in (0, 1):
            raise ValueError("pseudo label must be 0 or 1")
        if self.sources[index] == SOURCE_HUMAN:
            return  # human labels are final
        self.labels[index] = label
        self.sources[index] = SOURCE_PSEUDO
        self._ever_pseudo.add(int(index))

    def clear_pseudo(self) -> None:
        """Drop current pseudo-labels ahead of a fresh propagation round."""
        mask = self.sources == SOURCE_PSEUDO
        self.labels[mask] = LABEL_UNKNOWN
        self.sources[mask] = SOURCE_NONE

    def indices(self, source: str) -> np.ndarray:
        return np.flatnonzero(self.sources == source)

    def human_count(self) -> int:
        return int((self.sources == SOURCE_HUMAN).sum())

    def pseudo_count(self) -> int:
        return int((self.sources == SOURCE_PSEUDO).sum())

    def ever_pseudo_count(self) -> int:
        return len(self._ever_pseudo)


class Oracle:
    """Label source for queried windows."""

    kind = "abstract"

    def prepare(self, ground_truth: np.ndarray) -> None:
        """Called once by the trainer with the per-window ground-truth labels.

        The scripted oracle answers from these; a human oracle ignores them.
        """

    def label_batch(self, batch: QueryBatch) -> list[tuple[int, int]]:
        raise NotImplementedError


class ScriptedOracle(Oracle):
    """Infallible oracle answering synchronously from ground truth."""

    kind = "scripted"

    def __init__(self, ground_truth=None):
        self._truth = None if ground_truth is None else np.asarray(ground_truth, dtype=int)

    def prepare(self, ground_truth: np.ndarray) -> None:
        if self._truth is None:
            self._truth = np.asarray(ground_truth, dtype=int)

    def label_batch(self, batch: QueryBatch) -> list[tuple[int, int]]:
        if self._truth is None:
            raise QueryError("scripted oracle has no ground truth bound")
        answers = []
        for index in batch.indices():
            label = int(self._truth[index])
            if label not in (0, 1):
                raise QueryError(f"no ground-truth label for window {index}")
            answers.append((index, label))
        return answers


class HumanOracle(Oracle):
    """Blocking oracle that publishes batches to a label exchange.

    The exchange (see the service module) must offer ``publish_batch(batch)``
    and ``wait_for_labels(timeout) -> dict[index, label]``; this keeps the
    trainer decoupled from the HTTP layer.
    """

    kind = "human"

    def __init__(self, exchange, timeout: float | None = None):
        self.exchange = exchange
        self.timeout = timeout

    def label_batch(self, batch: QueryBatch) -> list[tuple[int, int]]:
        self.exchange.publish_batch(batch)
        got = self.exchange.wait_for_labels(self.timeout)
        return [(index, int(got[index])) for index in batch.indices()]


def margin_rank(params: QNetParams, unlabeled) -> list[tuple[int, float]]:
    """Rank windows by ascending |q0 - q1|, ties broken by index."""
    if len(unlabeled) == 0:
        raise ValueError("no unlabeled windows to rank")
    X = np.stack([np.asarray(w.values if hasattr(w, "values") else w, dtype=float) for w in unlabeled])
    q, _ = forward_batch(params, X, need_cache=False)
    margins = np.abs(q[:, 0] - q[:, 1])
    order = np.lexsort((np.arange(len(margins)), margins))
    return [(int(i), float(margins[i])) for i in order]


def _softmax_pairs(q: np.ndarray) -> np.ndarray:
    shifted = q - q.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def alt_strategy_rank(
    params: QNetParams,
    unlabeled,
    strategy: str,
    rng: np.random.Generator | None = None,
) -> list[tuple[int, float]]:
    """Alternative query orderings: random, least_confidence, margin, entropy.

    Uncertainty strategies map the q-values to probabilities with a two-way
    softmax. ``least_confidence`` ranks by 1 - max p descending, ``entropy``
    by -sum p log p descending; ``random`` is a seeded shuffle and ``margin``
    delegates to margin_rank.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    if strategy == "margin":
        return margin_rank(params, unlabeled)
    if len(unlabeled) == 0:
        raise ValueError("no unlabeled windows to rank")
    n = len(unlabeled)
    if strategy == "random":
        if rng is None:
            raise ValueError("random strategy needs an rng")
        draws = rng.random(n)
        order = np.lexsort((np.arange(n), draws))
        return [(int(i), float(draws[i])) for i in order]

    X = np.stack([np.asarray(w.values if hasattr(w, "values") else w, dtype=float) for w in unlabeled])
    q, _ = forward_batch(params, X, need_cache=False)
    p = _softmax_pairs(q)
    if strategy == "least_confidence":
        score = 1.0 - p.max(axis=1)
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(p > 0, p * np.log(p), 0.0)
        score = -terms.sum(axis=1)
    order = np.lexsort((np.arange(n), -score))
    return [(int(i), float(score[i])) for i in order]


def query_oracle(oracle: Oracle, batch: QueryBatch, budget: LabelBudget) -> list[tuple[int, int]]:
    """Send a batch to the oracle, respecting the human-label budget cap.

    When the cap would be exceeded the batch is truncated to its
    lowest-margin items (the head of the sorted batch) with a warning.
    Returned labels are counted against the budget.
    """
    if len(batch) == 0:
        return []
    allowed = budget.remaining()
    if allowed is not None and allowed < len(batch):
        warnings.warn(
            f"label budget allows only {allowed} of {len(batch)} queries; truncating",
            stacklevel=2,
        )
        if allowed == 0:
            return []
        batch = QueryBatch(items=batch.items[:allowed], created_at=batch.created_at, batch_id=batch.batch_id)
    answers = oracle.label_batch(batch)
    budget.human_labels_used += len(answers)
    return answers

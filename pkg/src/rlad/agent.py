"""DQN agent: replay memory, reward, epsilon-greedy policy and the training
step that walks a stream of labeled windows.

Action 1 predicts anomaly, action 0 predicts normal. The reward is
(+r1, +r2, -r1, -r2) for true positives, true negatives, false negatives and
false positives respectively.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .neural import (
    OptimizerState,
    QNetParams,
    adam_step,
    clip_grad_norm,
    forward_batch,
    qnet_loss_grad,
    target_sync,
)
from .timeseries import WindowState


@dataclass(frozen=True)
class Transition:
    """One (state, action, reward, next state) step; next_state None is terminal."""

    state: WindowState
    action: int
    reward: float
    next_state: WindowState | None

    @property
    def terminal(self) -> bool:
        return self.next_state is None


@dataclass
class AgentConfig:
    gamma: float = 0.8
    r1: float = 5.0
    r2: float = 1.0
    batch_size: int = 32
    sync_every: int = 100
    learning_rate: float = 1e-3
    max_grad_norm: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.r1 <= 0 or self.r2 <= 0:
            raise ValueError("reward constants must be positive")


@dataclass
class EpsilonSchedule:
    """Linearly annealed exploration rate: eps(t) = max(minimum, start - t * decay)."""

    start: float = 1.0
    decay: float = 1.0 / 500_000
    minimum: float = 0.01
    t: int = 0

    def value(self) -> float:
        return max(self.minimum, self.start - self.t * self.decay)

    def advance(self) -> None:
        self.t += 1


def reward(action: int, true_label: int, r1: float, r2: float) -> float:
    """(+r1, +r2, -r1, -r2) for TP, TN, FN, FP."""
    if action not in (0, 1) or true_label not in (0, 1):
        raise ValueError("action and true_label must be 0 or 1")
    if true_label == 1:
        return r1 if action == 1 else -r1
    return -r2 if action == 1 else r2


def select_action(params: QNetParams, state, epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy: random with probability epsilon, else argmax(q0, q1).

    Ties break toward 0 (predict normal).
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(0, 2))
    vals = np.asarray(state.values if hasattr(state, "values") else state, dtype=float)
    q, _ = forward_batch(params, vals[None, :], need_cache=False)
    return 1 if q[0, 1] > q[0, 0] else 0


class ReplayMemory:
    """Fixed-capacity FIFO ring of transitions with uniform sampling."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._buffer: list[Transition] = []
        self._cursor = 0

    def push(self, transition: Transition) -> None:
        if len(self._buffer) < self.capacity:
            self._buffer.append(transition)
        else:
            self._buffer[self._cursor] = transition
            self._cursor = (self._cursor + 1) % self.capacity

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Transition]:
        """Uniform without replacement, falling back to with replacement when
        the memory holds fewer transitions than the batch size."""
        n = len(self._buffer)
        if n == 0:
            raise ValueError("cannot sample from an empty replay memory")
        replace_draw = n < batch_size
        idx = rng.choice(n, size=batch_size, replace=replace_draw)
        return [self._buffer[int(i)] for i in idx]

    def __len__(self) -> int:
        return len(self._buffer)

    def items(self) -> list[Transition]:
        """Transitions in insertion order, oldest first."""
        return self._buffer[self._cursor :] + self._buffer[: self._cursor]


def compute_target(cfg: AgentConfig, target_params: QNetParams, transition: Transition) -> float:
    """Bootstrap target r + gamma * max Q_hat(s'), or plain r when terminal."""
    if transition.terminal:
        return float(transition.reward)
    q, _ = forward_batch(target_params, transition.next_state.values[None, :], need_cache=False)
    return float(transition.reward + cfg.gamma * q.max())


def compute_targets(cfg: AgentConfig, target_params: QNetParams, transitions) -> np.ndarray:
    """Vectorized compute_target over a batch."""
    targets = np.array([t.reward for t in transitions], dtype=float)
    live = [k for k, t in enumerate(transitions) if not t.terminal]
    if live:
        X = np.stack([transitions[k].next_state.values for k in live])
        q, _ = forward_batch(target_params, X, need_cache=False)
        targets[live] += cfg.gamma * q.max(axis=1)
    return targets


def seed_replay(memory: ReplayMemory, windows, labels, cfg: AgentConfig) -> None:
    """Fill the memory from labeled seed windows using the correct action.

    Each seed becomes a terminal transition whose action equals its true
    label, so the stored reward is always positive.
    """
    for window, label in zip(windows, labels):
        memory.push(
            Transition(
                state=window,
                action=int(label),
                reward=reward(int(label), int(label), cfg.r1, cfg.r2),
                next_state=None,
            )
        )


@dataclass
class EpochResult:
    eval_params: QNetParams
    target_params: QNetParams
    opt_state: OptimizerState
    steps: int
    mean_loss: float
    syncs: int


def dqn_train_epoch(
    eval_params: QNetParams,
    target_params: QNetParams,
    opt_state: OptimizerState,
    memory: ReplayMemory,
    labeled_stream,
    schedule: EpsilonSchedule,
    cfg: AgentConfig,
    rng: np.random.Generator,
) -> EpochResult:
    """One pass over a stream of (window, label) pairs.

    Per step: act epsilon-greedily, observe the label-derived reward, store
    the transition (next state = the following stream window, terminal at the
    end), sample a minibatch, regress toward bootstrap targets and take one
    optimizer step. The target network is re-synced every ``cfg.sync_every``
    schedule steps. The memory and schedule are updated in place; parameters
    and optimizer state are returned as new values.
    """
    stream = list(labeled_stream)
    if not stream:
        warnings.warn("empty labeled stream; nothing to train on", stacklevel=2)
        return EpochResult(eval_params, target_params, opt_state, 0, 0.0, 0)

    losses = []
    syncs = 0
    for pos, (window, label) in enumerate(stream):
        action = select_action(eval_params, window, schedule.value(), rng)
        r = reward(action, int(label), cfg.r1, cfg.r2)
        next_state = stream[pos + 1][0] if pos + 1 < len(stream) else None
        memory.push(Transition(window, action, r, next_state))

        batch = memory.sample(cfg.batch_size, rng)
        targets = compute_targets(cfg, target_params, batch)
        loss, grads = qnet_loss_grad(
            eval_params, [(t.state.values, t.action, tv) for t, tv in zip(batch, targets)]
        )
        if cfg.max_grad_norm is not None:
            grads = clip_grad_norm(grads, cfg.max_grad_norm)
        eval_params, opt_state = adam_step(eval_params, grads, opt_state, cfg.learning_rate)
        losses.append(loss)

        schedule.advance()
        if schedule.t % cfg.sync_every == 0:
            target_params = target_sync(eval_params)
            syncs += 1

    return EpochResult(
        eval_params=eval_params,
        target_params=target_params,
        opt_state=opt_state,
        steps=len(stream),
        mean_loss=float(np.mean(losses)),
        syncs=syncs,
    )


def greedy_actions(params: QNetParams, X: np.ndarray) -> np.ndarray:
    """Vectorized epsilon=0 policy over stacked windows; ties predict 0."""
    q, _ = forward_batch(params, X, need_cache=False)
    return (q[:, 1] > q[:, 0]).astype(int)

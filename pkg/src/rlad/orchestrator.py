"""End-to-end training runs: preprocessing, warm-up, label propagation,
DQN training and active-learning queries wired into one reproducible loop.

A run is a deterministic function of (series, config, seed) under a scripted
oracle. Only the training split is ever labeled, propagated to or trained
on; the held-out split is touched exclusively by the per-episode evaluation.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import labelprop
from .active import (
    LabelBudget,
    LabelStore,
    Oracle,
    QueryBatch,
    QueryError,
    QueryItem,
    margin_rank,
    query_oracle,
)
from .agent import (
    AgentConfig,
    EpsilonSchedule,
    ReplayMemory,
    dqn_train_epoch,
    greedy_actions,
    seed_replay,
)
from .iforest import iforest_fit, iforest_score_batch, warmup_select
from .metrics import confusion, metrics_dict, prf1
from .neural import (
    OptimizerState,
    QNetParams,
    adam_init,
    load_checkpoint,
    qnet_init,
    save_checkpoint,
    target_sync,
)
from .timeseries import (
    ScalerParams,
    TimeSeries,
    apply_scaler,
    scale_minmax,
    segment,
    split_train_test,
    stack_windows,
)

log = logging.getLogger(__name__)

CONTEXT_SPAN = 200  # raw points shown around a queried window


@dataclass
class RLADConfig:
    """All knobs of a training run, with reproducible JSON round-tripping."""

    window_size: int = 25
    replay_capacity: int = 1000
    epsilon_decay: float = 1.0 / 500_000
    epsilon_min: float = 0.01
    r1: float = 5.0
    r2: float = 1.0
    gamma: float = 0.8
    warmup_per_set: int = 5
    queries_per_episode: int = 5
    episodes: int = 1000
    split_ratio: float = 0.8
    hidden_size: int = 64
    batch_size: int = 32
    sync_every: int = 100
    learning_rate: float = 1e-3
    lp_sigma: float | None = None
    pseudo_entropy_max: float = 0.2
    lp_tol: float = 1e-6
    lp_max_iter: int = 1000
    lp_pool_cap: int = 5000
    budget_cap: int | None = None
    max_steps_per_episode: int | None = 256
    max_grad_norm: float | None = None
    iforest_trees: int = 100
    iforest_subsample: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.window_size < 1:
            raise ValueError("window_size must be >= 1")
        if not 0.0 < self.split_ratio < 1.0:
            raise ValueError("split_ratio must be in (0, 1)")
        if not 1 <= self.queries_per_episode <= 10:
            raise ValueError("queries_per_episode must lie in [1, 10]")
        if self.warmup_per_set < 1:
            raise ValueError("warmup_per_set must be >= 1")
        if self.episodes < 0:
            raise ValueError("episodes must be >= 0")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.r1 <= 0 or self.r2 <= 0:
            raise ValueError("reward constants must be positive")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RLADConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)

    def digest(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    def agent_config(self) -> AgentConfig:
        return AgentConfig(
            gamma=self.gamma,
            r1=self.r1,
            r2=self.r2,
            batch_size=self.batch_size,
            sync_every=self.sync_every,
            learning_rate=self.learning_rate,
            max_grad_norm=self.max_grad_norm,
        )


@dataclass
class EpisodeRecord:
    episode: int
    epsilon: float
    human_labels_used: int
    pseudo_labels_assigned: int
    queries_answered: int
    human_labeled_windows: int
    loss_mean: float
    precision: float
    recall: float
    f1: float

    FIELDS = (
        "episode", "epsilon", "human_labels_used", "pseudo_labels_assigned",
        "queries_answered", "human_labeled_windows", "loss_mean",
        "precision", "recall", "f1",
    )


@dataclass
class TrainHistory:
    rows: list[EpisodeRecord] = field(default_factory=list)

    def append(self, row: EpisodeRecord) -> None:
        self.rows.append(row)

    def to_csv(self, path) -> None:
        lines = [",".join(EpisodeRecord.FIELDS)]
        for row in self.rows:
            lines.append(",".join(repr(getattr(row, name)) for name in EpisodeRecord.FIELDS))
        Path(path).write_text("\n".join(lines) + "\n")

    def __len__(self) -> int:
        return len(self.rows)


@dataclass
class RLADModel:
    """A trained greedy policy plus everything needed to score new data."""

    params: QNetParams
    scaler: ScalerParams
    window_size: int
    config_digest: str

    def save(self, run_dir) -> None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(run_dir / "model.npz", self.params, None, step=0, window_size=self.window_size)
        meta = {
            "scaler_min": self.scaler.min,
            "scaler_max": self.scaler.max,
            "window_size": self.window_size,
            "hidden_size": self.params.hidden_size,
            "config_digest": self.config_digest,
        }
        (run_dir / "model.json").write_text(json.dumps(meta, indent=2) + "\n")

    @classmethod
    def load(cls, run_dir) -> "RLADModel":
        run_dir = Path(run_dir)
        meta = json.loads((run_dir / "model.json").read_text())
        params, _, _, window_size = load_checkpoint(run_dir / "model.npz")
        if window_size != meta["window_size"]:
            raise ValueError("model.json and model.npz disagree on the window size")
        return cls(
            params=params,
            scaler=ScalerParams(meta["scaler_min"], meta["scaler_max"]),
            window_size=window_size,
            config_digest=meta["config_digest"],
        )


class _Run:
    """Mutable state of one training run."""

    def __init__(self, series: TimeSeries, config: RLADConfig, oracle: Oracle,
                 status_cb=None, run_dir=None):
        self.config = config
        self.oracle = oracle
        self.status_cb = status_cb
        self.run_dir = Path(run_dir) if run_dir is not None else None

        omega = config.window_size
        train_raw, test_raw = split_train_test(series, config.split_ratio)
        if len(train_raw) < omega or len(test_raw) < omega:
            raise ValueError(
                f"both splits need at least {omega} points; "
                f"got {len(train_raw)} train and {len(test_raw)} test"
            )
        self.train_raw = train_raw
        train_scaled, self.scaler = scale_minmax(train_raw)
        test_scaled = apply_scaler(test_raw, self.scaler, clamp=True)

        self.train_windows = segment(train_scaled, omega)
        self.x_train = stack_windows(self.train_windows)
        self.truth_train = np.array([w.label for w in self.train_windows])
        test_windows = segment(test_scaled, omega)
        self.x_test = stack_windows(test_windows)
        self.y_test = np.array([w.label for w in test_windows])

        self.store = LabelStore(len(self.train_windows))
        self.budget = LabelBudget(budget_cap=config.budget_cap)
        self.history = TrainHistory()

        # independent deterministic streams per stochastic component
        seeds = np.random.SeedSequence(config.seed).spawn(4)
        self.iforest_seed = int(seeds[0].generate_state(1)[0])
        self.qnet_seed = int(seeds[1].generate_state(1)[0])
        self.agent_rng = np.random.default_rng(seeds[2])
        self.stream_rng = np.random.default_rng(seeds[3])

        self.params = qnet_init(config.hidden_size, seed=self.qnet_seed)
        self.target = target_sync(self.params)
        self.opt_state = adam_init(self.params)
        self.memory = ReplayMemory(config.replay_capacity)
        self.schedule = EpsilonSchedule(decay=config.epsilon_decay, minimum=config.epsilon_min)
        self.agent_cfg = config.agent_config()
        self.warmup_labeled = 0
        self.queries_total = 0

        oracle.prepare(self.truth_train)

    # -- status ----------------------------------------------------------

    def publish(self, state: str, episode: int, metrics: dict | None = None) -> None:
        if self.status_cb is None:
            return
        self.status_cb(
            {
                "state": state,
                "episode": episode,
                "epsilon": self.schedule.value(),
                "human_labels_used": self.budget.human_labels_used,
                "pseudo_labels_assigned": self.budget.pseudo_labels_assigned,
                "metrics": metrics,
            }
        )

    # -- warm-up ---------------------------------------------------------

    def warm_up(self) -> None:
        cfg = self.config
        subsample = min(cfg.iforest_subsample, len(self.train_windows))
        forest = iforest_fit(
            self.train_windows,
            num_trees=cfg.iforest_trees,
            subsample_size=subsample,
            seed=self.iforest_seed,
        )
        scores = iforest_score_batch(forest, self.x_train)
        top, bottom, boundary = warmup_select(scores, cfg.warmup_per_set)
        seed_indices = [int(i) for i in np.concatenate([top, bottom, boundary])]

        # the oracle labels the seed set in query-sized chunks (margin 0:
        # these are forced queries, not ranked ones)
        for chunk_start in range(0, len(seed_indices), cfg.queries_per_episode):
            chunk = sorted(seed_indices[chunk_start : chunk_start + cfg.queries_per_episode])
            batch = QueryBatch.build([self._query_item(i, 0.0, episode=0) for i in chunk])
            for index, label in query_oracle(self.oracle, batch, self.budget):
                self.store.set_human(index, label)
        self.warmup_labeled = self.store.human_count()

        labeled_idx = self.store.indices("human")
        seed_replay(
            self.memory,
            [self.train_windows[i] for i in labeled_idx],
            self.store.labels[labeled_idx],
            self.agent_cfg,
        )
        self.propagate()

    # -- label propagation -----------------------------------------------

    def propagate(self) -> None:
        cfg = self.config
        labeled_idx = self.store.indices("human")
        if len(labeled_idx) == 0:
            return
        candidate_idx = np.flatnonzero(self.store.sources != "human")
        if len(candidate_idx) == 0:
            return
        labeled_x = self.x_train[labeled_idx]
        pool_local = labelprop.nearest_candidates(
            labeled_x, self.x_train[candidate_idx], cap=cfg.lp_pool_cap
        )
        pool_idx = candidate_idx[pool_local]
        dist = labelprop.lp_fit(
            labeled_x,
            self.store.labels[labeled_idx],
            self.x_train[pool_idx],
            sigma=cfg.lp_sigma,
            tol=cfg.lp_tol,
            max_iter=cfg.lp_max_iter,
        )
        self.store.clear_pseudo()
        for local, label in labelprop.lp_pseudo_labels(dist, cfg.pseudo_entropy_max):
            self.store.set_pseudo(int(pool_idx[local]), label)
        self.budget.pseudo_labels_assigned = self.store.ever_pseudo_count()

    # -- per-episode pieces ------------------------------------------------

    def _query_item(self, index: int, margin: float, episode: int) -> QueryItem:
        window = self.train_windows[index]
        end = window.end_index
        omega = self.config.window_size
        pad = max(0, (CONTEXT_SPAN - omega) // 2)
        start = max(0, end - omega + 1 - pad)
        stop = min(len(self.train_raw), end + 1 + pad)
        return QueryItem(
            index=index,
            margin=float(margin),
            window=window.values,
            context=self.train_raw.values[start:stop],
            context_start=start,
            end_index=end,
            episode=episode,
        )

    def build_stream(self) -> list:
        """The episode's training stream: labeled windows in time order.

        When capped, scarce items (all human labels, every anomaly-labeled
        window) are kept and the remainder is filled by evenly thinning the
        pseudo-normals, so the stream only changes when the label store does
        and bootstrap targets stay stable across episodes.
        """
        labels = self.store.labels
        human_idx = self.store.indices("human")
        pseudo_idx = self.store.indices("pseudo")
        cap = self.config.max_steps_per_episode
        total = len(human_idx) + len(pseudo_idx)
        if cap is None or total <= cap:
            chosen = np.concatenate([human_idx, pseudo_idx])
        else:
            keep = list(human_idx) + [int(i) for i in pseudo_idx if labels[i] == 1]
            rest = [int(i) for i in pseudo_idx if labels[i] == 0]
            room = max(0, cap - len(keep))
            if room and rest:
                picks = np.unique(np.linspace(0, len(rest) - 1, num=min(room, len(rest)), dtype=int))
                keep.extend(rest[int(k)] for k in picks)
            chosen = np.array(keep[:cap] if len(keep) > cap else keep, dtype=int)
        chosen = np.sort(chosen)
        return [(self.train_windows[int(i)], int(labels[int(i)])) for i in chosen]

    def run_queries(self, episode: int) -> int:
        cfg = self.config
        remaining = self.budget.remaining()
        if remaining == 0:
            log.info("label budget exhausted; episode %d trains without new queries", episode)
            return 0
        unlabeled_idx = self.store.indices("none")
        if len(unlabeled_idx) == 0:
            return 0
        ranked = margin_rank(self.params, [self.train_windows[int(i)] for i in unlabeled_idx])
        picked = ranked[: cfg.queries_per_episode]
        items = [
            self._query_item(int(unlabeled_idx[local]), margin, episode)
            for local, margin in picked
        ]
        batch = QueryBatch.build(items)
        answers = query_oracle(self.oracle, batch, self.budget)
        for index, label in answers:
            self.store.set_human(index, label)
        return len(answers)

    def evaluate(self) -> dict:
        mask = self.y_test >= 0
        if not mask.any():
            return {"precision": 0.0, "recall": 0.0, "f1": 0.0}
        preds = greedy_actions(self.params, self.x_test[mask])
        precision, recall, f1 = prf1(confusion(preds, self.y_test[mask]))
        return {"precision": precision, "recall": recall, "f1": f1}

    def audit_budget(self) -> None:
        expected = self.warmup_labeled + self.queries_total
        used = self.budget.human_labels_used
        stored = self.store.human_count()
        if not (used == expected == stored):
            raise RuntimeError(
                f"label accounting broken: budget says {used}, "
                f"audit expects {expected}, store holds {stored}"
            )

    def checkpoint(self) -> None:
        if self.run_dir is None:
            return
        self.run_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(
            self.run_dir / "checkpoint.npz",
            self.params,
            self.opt_state,
            step=self.schedule.t,
            window_size=self.config.window_size,
        )

    # -- main loop ---------------------------------------------------------

    def train(self) -> tuple[RLADModel, TrainHistory]:
        cfg = self.config
        if self.run_dir is not None:
            self.run_dir.mkdir(parents=True, exist_ok=True)
            (self.run_dir / "config.json").write_text(
                json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"
            )
        self.publish("training", episode=0)
        self.warm_up()
        self.audit_budget()

        try:
            for episode in range(1, cfg.episodes + 1):
                self.publish("training", episode=episode)
                stream = self.build_stream()
                result = dqn_train_epoch(
                    self.params, self.target, self.opt_state, self.memory,
                    stream, self.schedule, self.agent_cfg, self.agent_rng,
                )
                self.params = result.eval_params
                self.target = result.target_params
                self.opt_state = result.opt_state

                answered = self.run_queries(episode)
                self.queries_total += answered
                if answered:
                    self.propagate()

                metrics = self.evaluate()
                self.audit_budget()
                self.history.append(
                    EpisodeRecord(
                        episode=episode,
                        epsilon=self.schedule.value(),
                        human_labels_used=self.budget.human_labels_used,
                        pseudo_labels_assigned=self.budget.pseudo_labels_assigned,
                        queries_answered=answered,
                        human_labeled_windows=self.store.human_count(),
                        loss_mean=result.mean_loss,
                        precision=metrics["precision"],
                        recall=metrics["recall"],
                        f1=metrics["f1"],
                    )
                )
                self.publish("training", episode=episode, metrics=metrics)
                self.checkpoint()
        except QueryError:
            self.checkpoint()
            self.write_artifacts()
            raise

        model = RLADModel(
            params=self.params,
            scaler=self.scaler,
            window_size=cfg.window_size,
            config_digest=cfg.digest(),
        )
        self.checkpoint()
        self.write_artifacts(model)
        final = self.history.rows[-1] if len(self.history) else None
        self.publish(
            "done",
            episode=final.episode if final else 0,
            metrics={
                "precision": final.precision, "recall": final.recall, "f1": final.f1,
            } if final else None,
        )
        return model, self.history

    def write_artifacts(self, model: RLADModel | None = None) -> None:
        if self.run_dir is None:
            return
        self.history.to_csv(self.run_dir / "history.csv")
        if model is not None:
            model.save(self.run_dir)
        if len(self.history):
            last = self.history.rows[-1]
            mask = self.y_test >= 0
            preds = greedy_actions(self.params, self.x_test[mask]) if mask.any() else []
            payload = (
                metrics_dict(confusion(preds, self.y_test[mask]))
                if mask.any()
                else {"precision": 0.0, "recall": 0.0, "f1": 0.0}
            )
            payload["episode"] = last.episode
            payload["human_labels_used"] = last.human_labels_used
            (self.run_dir / "metrics.json").write_text(json.dumps(payload, indent=2) + "\n")


def rlad_train(
    series: TimeSeries,
    config: RLADConfig,
    oracle: Oracle,
    status_cb=None,
    run_dir=None,
) -> tuple[RLADModel, TrainHistory]:
    """Train a detector on one series; see RLADConfig for all knobs.

    Writes config.json, checkpoints, history.csv and metrics.json into
    ``run_dir`` when given. Raises QueryError (checkpoint preserved) when the
    oracle fails.
    """
    run = _Run(series, config, oracle, status_cb=status_cb, run_dir=run_dir)
    return run.train()


def rlad_predict(model: RLADModel, series: TimeSeries) -> np.ndarray:
    """Greedy 0/1 prediction per window of a (raw, unscaled) series."""
    if len(series) < model.window_size:
        raise ValueError(
            f"series of length {len(series)} is shorter than the model window "
            f"{model.window_size}"
        )
    scaled = apply_scaler(series, model.scaler, clamp=True)
    windows = segment(scaled, model.window_size)
    return greedy_actions(model.params, stack_windows(windows))

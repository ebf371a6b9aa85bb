import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from rlad.agent import (
    AgentConfig,
    EpsilonSchedule,
    ReplayMemory,
    Transition,
    compute_target,
    compute_targets,
    dqn_train_epoch,
    greedy_actions,
    reward,
    seed_replay,
    select_action,
)
from rlad.neural import PARAM_FIELDS, adam_init, qnet_init, target_sync
from rlad.timeseries import WindowState


def fixed_q_params(q0, q1, hidden=2):
    """Zero-weight network that outputs (q0, q1) for every window."""
    p = qnet_init(hidden, seed=0)
    for name in PARAM_FIELDS:
        getattr(p, name)[:] = 0.0
    p.b_out[:] = (q0, q1)
    return p


def make_window(values, end_index=0, label=-1, source="none"):
    return WindowState(np.asarray(values, dtype=float), end_index, label, source)


def labeled_stream(rng, n, omega=6, label=0):
    return [
        (make_window(rng.random(omega), end_index=k, label=label, source="human"), label)
        for k in range(n)
    ]


class TestReward:
    def test_truth_table_with_default_constants(self):
        assert reward(1, 1, 5, 1) == 5
        assert reward(0, 0, 5, 1) == 1
        assert reward(0, 1, 5, 1) == -5
        assert reward(1, 0, 5, 1) == -1

    @given(st.floats(0.01, 100), st.floats(0.01, 100))
    @settings(max_examples=50, deadline=None)
    def test_truth_table_for_arbitrary_positive_constants(self, r1, r2):
        assert reward(1, 1, r1, r2) == r1
        assert reward(0, 0, r1, r2) == r2
        assert reward(0, 1, r1, r2) == -r1
        assert reward(1, 0, r1, r2) == -r2

    def test_rejects_non_binary_inputs(self):
        with pytest.raises(ValueError):
            reward(2, 0, 5, 1)


class TestSelectAction:
    def test_pure_exploitation_takes_argmax(self):
        p = fixed_q_params(0.2, 0.9)
        w = make_window(np.full(4, 0.5))
        assert select_action(p, w, 0.0, np.random.default_rng(0)) == 1

    def test_tie_breaks_toward_normal(self):
        p = fixed_q_params(0.4, 0.4)
        w = make_window(np.full(4, 0.5))
        assert select_action(p, w, 0.0, np.random.default_rng(0)) == 0

    def test_full_exploration_is_roughly_uniform(self):
        p = fixed_q_params(0.0, 10.0)
        w = make_window(np.full(4, 0.5))
        rng = np.random.default_rng(123)
        ones = sum(select_action(p, w, 1.0, rng) for _ in range(10_000))
        assert 0.47 <= ones / 10_000 <= 0.53

    def test_zero_epsilon_is_deterministic(self):
        p = qnet_init(4, seed=9)
        w = make_window(np.random.default_rng(4).random(5))
        picks = {select_action(p, w, 0.0, np.random.default_rng(i)) for i in range(5)}
        assert len(picks) == 1


class TestEpsilonSchedule:
    def test_starts_at_one_and_decays_linearly(self):
        s = EpsilonSchedule(decay=1.0 / 500_000)
        assert s.value() == 1.0
        for _ in range(1000):
            s.advance()
        assert s.value() == pytest.approx(1.0 - 1000 / 500_000)

    def test_monotone_and_floored(self):
        s = EpsilonSchedule(start=1.0, decay=0.3, minimum=0.05)
        seen = []
        for _ in range(10):
            seen.append(s.value())
            s.advance()
        assert all(a >= b for a, b in zip(seen, seen[1:]))
        assert min(seen) >= 0.05
        assert s.value() == 0.05


class TestReplayMemory:
    def tagged(self, tag):
        return Transition(make_window([0.5], end_index=tag), 0, float(tag), None)

    def test_grows_until_capacity_then_evicts_oldest(self):
        mem = ReplayMemory(1000)
        for tag in range(1, 1002):
            mem.push(self.tagged(tag))
        assert len(mem) == 1000
        rewards = [t.reward for t in mem.items()]
        assert rewards[0] == 2.0
        assert rewards[-1] == 1001.0

    def test_single_push(self):
        mem = ReplayMemory(10)
        mem.push(self.tagged(1))
        assert len(mem) == 1

    def test_retains_insertion_order_under_capacity(self):
        mem = ReplayMemory(10)
        for tag in range(1, 8):
            mem.push(self.tagged(tag))
        assert [t.reward for t in mem.items()] == [float(x) for x in range(1, 8)]

    @given(st.integers(1, 30), st.integers(0, 40))
    @settings(max_examples=40, deadline=None)
    def test_fifo_law(self, capacity, overflow):
        mem = ReplayMemory(capacity)
        total = capacity + overflow
        for tag in range(1, total + 1):
            mem.push(self.tagged(tag))
        expect = [float(x) for x in range(overflow + 1, total + 1)]
        assert [t.reward for t in mem.items()] == expect

    def test_sample_without_replacement_when_large(self):
        mem = ReplayMemory(2000)
        for tag in range(1000):
            mem.push(self.tagged(tag))
        batch = mem.sample(32, np.random.default_rng(0))
        assert len(batch) == 32
        assert len({t.reward for t in batch}) == 32

    def test_sample_with_replacement_when_small(self):
        mem = ReplayMemory(10)
        for tag in range(3):
            mem.push(self.tagged(tag))
        batch = mem.sample(32, np.random.default_rng(0))
        assert len(batch) == 32
        assert {t.reward for t in batch} <= {0.0, 1.0, 2.0}

    def test_empty_sample_rejected(self):
        with pytest.raises(ValueError):
            ReplayMemory(5).sample(1, np.random.default_rng(0))

    def test_sampling_uniformity_chi_squared(self):
        mem = ReplayMemory(10)
        for tag in range(10):
            mem.push(self.tagged(tag))
        draws = mem.sample(100_000, np.random.default_rng(7))
        counts = np.bincount([int(t.reward) for t in draws], minlength=10)
        assert stats.chisquare(counts).pvalue > 0.01


class TestComputeTarget:
    def test_terminal_returns_reward(self):
        cfg = AgentConfig(gamma=0.8)
        t = Transition(make_window([0.1]), 1, 5.0, None)
        assert compute_target(cfg, fixed_q_params(9.0, 9.0), t) == 5.0

    def test_bootstrap_with_max_q(self):
        cfg = AgentConfig(gamma=0.8)
        target_net = fixed_q_params(0.5, 2.0)
        t = Transition(make_window([0.1]), 0, 1.0, make_window([0.2]))
        assert compute_target(cfg, target_net, t) == pytest.approx(2.6)

    def test_myopic_limit(self):
        cfg = AgentConfig(gamma=0.0)
        target_net = fixed_q_params(3.0, 4.0)
        t = Transition(make_window([0.1]), 0, -1.0, make_window([0.2]))
        assert compute_target(cfg, target_net, t) == -1.0

    def test_batch_targets_match_scalar_path(self):
        cfg = AgentConfig(gamma=0.9)
        rng = np.random.default_rng(3)
        net = qnet_init(4, seed=3)
        transitions = []
        for k in range(12):
            nxt = None if k % 3 == 0 else make_window(rng.random(5), end_index=k)
            transitions.append(Transition(make_window(rng.random(5)), k % 2, float(rng.normal()), nxt))
        batch = compute_targets(cfg, net, transitions)
        for k, t in enumerate(transitions):
            assert batch[k] == pytest.approx(compute_target(cfg, net, t), abs=1e-12)


class TestSeedReplay:
    def test_seeds_are_terminal_with_positive_reward(self):
        cfg = AgentConfig(r1=5, r2=1)
        mem = ReplayMemory(100)
        wins = [make_window([0.2], end_index=k, label=k % 2, source="human") for k in range(6)]
        seed_replay(mem, wins, [k % 2 for k in range(6)], cfg)
        assert len(mem) == 6
        for t in mem.items():
            assert t.terminal
            assert t.reward > 0
            assert t.action == t.state.label


class TestTrainEpoch:
    def base(self, hidden=4, capacity=64):
        params = qnet_init(hidden, seed=0)
        return params, target_sync(params), adam_init(params), ReplayMemory(capacity)

    def test_single_window_stream(self):
        params, target, opt, mem = self.base()
        rng = np.random.default_rng(0)
        stream = labeled_stream(rng, 1)
        res = dqn_train_epoch(params, target, opt, mem, stream, EpsilonSchedule(), AgentConfig(), rng)
        assert res.steps == 1
        assert len(mem) == 1
        assert mem.items()[0].terminal
        assert res.opt_state.step == 1

    def test_sync_count(self):
        params, target, opt, mem = self.base()
        rng = np.random.default_rng(1)
        stream = labeled_stream(rng, 250)
        cfg = AgentConfig(sync_every=100)
        res = dqn_train_epoch(params, target, opt, mem, stream, EpsilonSchedule(), cfg, rng)
        assert res.syncs == 2

    def test_empty_stream_warns_and_is_noop(self):
        params, target, opt, mem = self.base()
        rng = np.random.default_rng(2)
        with pytest.warns(UserWarning, match="empty"):
            res = dqn_train_epoch(params, target, opt, mem, [], EpsilonSchedule(), AgentConfig(), rng)
        assert res.steps == 0
        assert res.eval_params is params

    def test_next_state_is_stream_successor(self):
        params, target, opt, mem = self.base(capacity=10)
        rng = np.random.default_rng(3)
        stream = labeled_stream(rng, 3)
        dqn_train_epoch(params, target, opt, mem, stream, EpsilonSchedule(), AgentConfig(), rng)
        stored = mem.items()
        assert stored[0].next_state is stream[1][0]
        assert stored[1].next_state is stream[2][0]
        assert stored[2].terminal

    def test_target_network_stale_between_syncs(self):
        params, target, opt, mem = self.base()
        rng = np.random.default_rng(4)
        cfg = AgentConfig(sync_every=10_000)
        probe = Transition(make_window(np.full(6, 0.3)), 0, 1.0, make_window(np.full(6, 0.7)))
        before = compute_target(cfg, target, probe)
        res = dqn_train_epoch(params, target, opt, mem, labeled_stream(rng, 40), EpsilonSchedule(), cfg, rng)
        assert res.target_params is target
        assert compute_target(cfg, res.target_params, probe) == before
        # and the eval network did change
        assert not np.array_equal(res.eval_params.w_out, params.w_out)

    def test_learns_to_predict_all_normal(self):
        # every label is 0: after 2000 steps the greedy policy says 0 nearly everywhere
        params, target, opt, mem = self.base(hidden=8, capacity=256)
        rng = np.random.default_rng(5)
        stream = labeled_stream(rng, 100, omega=6, label=0)
        schedule = EpsilonSchedule(decay=1.0 / 4000)
        cfg = AgentConfig()
        while schedule.t < 2000:
            res = dqn_train_epoch(params, target, opt, mem, stream, schedule, cfg, rng)
            params, target, opt = res.eval_params, res.target_params, res.opt_state
        X = np.stack([w.values for w, _ in stream])
        preds = greedy_actions(params, X)
        assert (preds == 0).mean() >= 0.95

    def test_greedy_actions_match_select_action(self):
        params = qnet_init(5, seed=8)
        rng = np.random.default_rng(9)
        X = rng.random((40, 7))
        vec = greedy_actions(params, X)
        rng2 = np.random.default_rng(0)
        for k in range(40):
            w = make_window(X[k])
            assert vec[k] == select_action(params, w, 0.0, rng2)

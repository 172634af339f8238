"""Agents: action selection, replay, the update rule, and training loops."""

import copy

import numpy as np
import pytest

from quantfit.agents import (
    AGENT_KINDS,
    Agent,
    AgentConfig,
    ReplayBuffer,
    TrainingDivergedError,
    epsilon_greedy,
    evaluate_policy,
    train_agent,
)
from quantfit.envs import Transition, named_mdp, single_loop, two_armed_bandit


def _small_config(**overrides):
    base = dict(kind="learned", n_fractions=4, hidden_dim=16, n_basis=8)
    base.update(overrides)
    return AgentConfig(**base)


def _filled_agent(mdp, config, seed=0, warmup=64):
    """Agent plus a replay buffer holding `warmup` env transitions."""
    rng = np.random.default_rng(seed)
    agent = Agent(config, mdp.state_dim, mdp.n_actions, rng)
    buffer = ReplayBuffer(config.replay_capacity)
    state = mdp.start_state
    for _ in range(warmup):
        action = int(rng.integers(mdp.n_actions))
        t = mdp.step(state, action, rng)
        buffer.push(t)
        state = mdp.start_state if t.terminal else t.next_state
    return agent, buffer, rng


class TestEpsilonGreedy:
    def test_greedy_picks_argmax(self):
        assert epsilon_greedy(np.array([1.0, 3.0, 2.0]), 0.0, np.random.default_rng(0)) == 1

    def test_ties_break_to_lowest_index(self):
        assert epsilon_greedy(np.array([2.0, 2.0]), 0.0, np.random.default_rng(0)) == 0

    def test_full_exploration_is_uniform(self):
        rng = np.random.default_rng(123)
        n = 10_000
        counts = np.bincount(
            [epsilon_greedy(np.array([9.0, 0.0, 0.0]), 1.0, rng) for _ in range(n)],
            minlength=3,
        )
        sigma = np.sqrt((1 / 3) * (2 / 3) / n)
        assert np.all(np.abs(counts / n - 1 / 3) < 3 * sigma)

    def test_empty_action_set_rejected(self):
        with pytest.raises(ValueError):
            epsilon_greedy(np.array([]), 0.5, np.random.default_rng(0))

    def test_deterministic_under_seed(self):
        q = np.array([0.0, 1.0])
        a = [epsilon_greedy(q, 0.5, np.random.default_rng(7)) for _ in range(20)]
        b = [epsilon_greedy(q, 0.5, np.random.default_rng(7)) for _ in range(20)]
        assert a == b


class TestReplayBuffer:
    def _t(self, k):
        return Transition(0, 0, float(k), 0, False)

    def test_empty_sample_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            ReplayBuffer(4).sample(1, np.random.default_rng(0))

    def test_capacity_evicts_oldest(self):
        buf = ReplayBuffer(2)
        for k in range(3):
            buf.push(self._t(k))
        assert len(buf) == 2
        rewards = {t.reward for t in buf.sample(200, np.random.default_rng(0))}
        assert rewards <= {1.0, 2.0} and 0.0 not in rewards

    def test_sampling_with_replacement(self):
        buf = ReplayBuffer(8)
        buf.push(self._t(0))
        assert len(buf.sample(5, np.random.default_rng(0))) == 5

    def test_deterministic_under_seed(self):
        buf = ReplayBuffer(16)
        for k in range(10):
            buf.push(self._t(k))
        a = buf.sample(6, np.random.default_rng(3))
        b = buf.sample(6, np.random.default_rng(3))
        assert a == b


class TestAgentConfig:
    def test_kinds(self):
        assert set(AGENT_KINDS) == {"learned", "fixed", "sampled"}
        for kind in AGENT_KINDS:
            assert AgentConfig(kind=kind).kind == kind
        with pytest.raises(ValueError, match="kind"):
            AgentConfig(kind="dqn")

    def test_single_fraction_allowed(self):
        assert AgentConfig(n_fractions=1).n_fractions == 1

    @pytest.mark.parametrize(
        "bad",
        [
            dict(n_fractions=0),
            dict(epsilon_train=1.5),
            dict(epsilon_eval=-0.1),
            dict(kappa=0.0),
            dict(target_sync_period=0),
        ],
    )
    def test_invalid_fields_rejected(self, bad):
        with pytest.raises(ValueError):
            AgentConfig(**bad)


class TestUpdateRule:
    def test_empty_batch_rejected(self):
        mdp = single_loop()
        agent, _, rng = _filled_agent(mdp, _small_config())
        with pytest.raises(ValueError, match="non-empty"):
            agent.update([], mdp, rng)

    def test_zero_reward_zero_head_is_a_fixed_point(self):
        # all quantiles 0, targets 0: loss 0, zero gradients, nothing moves
        mdp = named_mdp("zero_reward")
        rng = np.random.default_rng(4)
        agent = Agent(_small_config(), mdp.state_dim, mdp.n_actions, rng, zero_value_head=True)
        before = {k: v.copy() for k, v in agent.net.parameters().items()}
        before.update({k: v.copy() for k, v in agent.proposer_params().items()})
        batch = [Transition(0, 0, 0.0, 0, False)] * 8
        for _ in range(5):
            diag = agent.update(batch, mdp, rng)
            assert diag["loss"] == 0.0
        after = dict(agent.net.parameters())
        after.update(agent.proposer_params())
        for key, val in before.items():
            assert np.array_equal(val, after[key]), key

    def test_diagnostics_keys_and_monitor(self):
        mdp = single_loop()
        agent, buffer, rng = _filled_agent(mdp, _small_config())
        diag = agent.update(buffer.sample(16, rng), mdp, rng)
        assert set(diag) == {
            "update",
            "loss",
            "mean_abs_fraction_grad",
            "monotonicity_violation_rate",
        }
        # non-monotone quantile curves are recorded, never fatal
        assert 0.0 <= diag["monotonicity_violation_rate"] <= 1.0
        assert diag["loss"] >= 0.0

    def test_fixed_kind_reports_no_fraction_gradient(self):
        mdp = single_loop()
        agent, buffer, rng = _filled_agent(mdp, _small_config(kind="fixed"))
        diag = agent.update(buffer.sample(16, rng), mdp, rng)
        assert diag["mean_abs_fraction_grad"] == 0.0

    def test_non_finite_loss_raises_with_diagnostics(self):
        mdp = single_loop()
        agent, buffer, rng = _filled_agent(mdp, _small_config())
        agent.net.head_bias[:] = np.nan
        with pytest.raises(TrainingDivergedError) as err:
            agent.update(buffer.sample(8, rng), mdp, rng)
        assert "update" in err.value.diagnostics

    def test_target_sync_period(self):
        mdp = single_loop()
        cfg = _small_config(target_sync_period=3)
        agent, buffer, rng = _filled_agent(mdp, cfg)
        stale = agent.target_net.head_weight.copy()
        for k in range(3):
            agent.update(buffer.sample(8, rng), mdp, rng)
            synced = np.array_equal(agent.target_net.head_weight, agent.net.head_weight)
            assert synced == (k == 2)
        assert not np.array_equal(agent.target_net.head_weight, stale)


class TestReduction:
    def test_learned_with_zero_fraction_lr_equals_fixed(self):
        # zero-initialized proposer never moves, so the learned kind must
        # retrace the fixed kind bit for bit
        mdp = single_loop()
        runs = {}
        for kind, lr in (("learned", 0.0), ("fixed", 1e-2)):
            cfg = _small_config(kind=kind, fraction_lr=lr)
            agent, diags = train_agent(mdp, cfg, seed=11, num_updates=150)
            runs[kind] = (agent, diags)
        agent_l, diags_l = runs["learned"]
        agent_f, diags_f = runs["fixed"]
        for dl, df in zip(diags_l, diags_f):
            assert dl["loss"] == df["loss"]
            assert dl["monotonicity_violation_rate"] == df["monotonicity_violation_rate"]
        for key, val in agent_f.net.parameters().items():
            assert np.array_equal(val, agent_l.net.parameters()[key]), key
        assert np.array_equal(agent_l.proposer_weight, np.zeros_like(agent_l.proposer_weight))

    def test_identical_seeds_give_identical_streams(self):
        mdp = named_mdp("bandit")
        cfg = _small_config(kind="learned", n_fractions=2, fraction_lr=1e-2)
        _, diags_a = train_agent(mdp, cfg, seed=5, num_updates=120)
        _, diags_b = train_agent(mdp, cfg, seed=5, num_updates=120)
        assert diags_a == diags_b

    def test_different_seeds_differ(self):
        mdp = named_mdp("bandit")
        cfg = _small_config()
        _, diags_a = train_agent(mdp, cfg, seed=1, num_updates=60)
        _, diags_b = train_agent(mdp, cfg, seed=2, num_updates=60)
        assert diags_a != diags_b


class TestSampledKind:
    def test_action_values_consume_rng(self):
        # fractions are re-drawn per call: same generator state, same values
        mdp = single_loop()
        agent, _, _ = _filled_agent(mdp, _small_config(kind="sampled"))
        x = mdp.features[0]
        a = agent.action_values(x, np.random.default_rng(8))
        b = agent.action_values(x, np.random.default_rng(8))
        assert np.array_equal(a, b)
        rng = np.random.default_rng(8)
        first, second = agent.action_values(x, rng), agent.action_values(x, rng)
        assert not np.array_equal(first, second)

    def test_learned_and_fixed_ignore_rng_state(self):
        mdp = single_loop()
        for kind in ("learned", "fixed"):
            agent, _, _ = _filled_agent(mdp, _small_config(kind=kind))
            rng = np.random.default_rng(8)
            a = agent.action_values(mdp.features[0], rng)
            b = agent.action_values(mdp.features[0], rng)
            assert np.array_equal(a, b)


class TestFractions:
    def test_fixed_kind_uses_uniform_grid(self):
        mdp = single_loop()
        agent, _, _ = _filled_agent(mdp, _small_config(kind="fixed", n_fractions=4))
        bounds, mids = agent.proposed_fractions(mdp.features[0], 0)
        assert np.allclose(bounds, np.linspace(0, 1, 5), atol=1e-15)
        assert np.allclose(mids, (np.arange(4) + 0.5) / 4, atol=1e-15)

    def test_learned_kind_starts_uniform(self):
        mdp = single_loop()
        agent, _, _ = _filled_agent(mdp, _small_config(kind="learned", n_fractions=4))
        bounds, _ = agent.proposed_fractions(mdp.features[0], 0)
        assert np.allclose(bounds, np.linspace(0, 1, 5), atol=1e-15)


class TestEvaluatePolicy:
    def test_zero_reward_returns_zero(self):
        mdp = named_mdp("zero_reward")
        mean, err = evaluate_policy(
            mdp, lambda s, rng: 0, episodes=5, rng=np.random.default_rng(0), horizon=20
        )
        assert mean == 0.0 and err == 0.0

    def test_deterministic_chain_forward_policy(self):
        mdp = named_mdp("chain_deterministic")
        mean, err = evaluate_policy(
            mdp, lambda s, rng: 0, episodes=4, rng=np.random.default_rng(0)
        )
        assert mean == 1.0 and err == 0.0

    def test_rejects_zero_episodes(self):
        with pytest.raises(ValueError, match="episodes"):
            evaluate_policy(single_loop(), lambda s, rng: 0, 0, np.random.default_rng(0))

    def test_deterministic_under_seed(self):
        mdp = named_mdp("chain")
        out_a = evaluate_policy(mdp, lambda s, rng: 0, 8, np.random.default_rng(2))
        out_b = evaluate_policy(mdp, lambda s, rng: 0, 8, np.random.default_rng(2))
        assert out_a == out_b


class TestTraining:
    def test_diag_every_thins_the_stream(self):
        mdp = single_loop()
        agent, diags = train_agent(mdp, _small_config(), seed=0, num_updates=50, diag_every=10)
        assert agent.update_count == 50
        assert [d["update"] for d in diags] == [10, 20, 30, 40, 50]

    def test_single_fraction_fixed_kind_loss_decreases(self):
        # N=1 median regression: no point prediction asserted, only progress
        mdp = named_mdp("bandit")
        cfg = _small_config(kind="fixed", n_fractions=1)
        _, diags = train_agent(mdp, cfg, seed=3, num_updates=600)
        losses = np.array([d["loss"] for d in diags])
        assert losses[-150:].mean() < losses[:150].mean()

    @pytest.mark.parametrize("kind", AGENT_KINDS)
    def test_short_run_all_kinds(self, kind):
        mdp = named_mdp("chain")
        cfg = _small_config(kind=kind, n_fractions=4)
        agent, diags = train_agent(mdp, cfg, seed=1, num_updates=80)
        assert np.isfinite([d["loss"] for d in diags]).all()
        q = agent.action_values(mdp.features[0], np.random.default_rng(0))
        assert q.shape == (2,) and np.all(np.isfinite(q))

    def test_greedy_agent_prefers_the_better_arm(self):
        # certain 1 vs uniform{0,4}: the second arm is worth double in mean
        mdp = two_armed_bandit(4.0)
        cfg = _small_config(kind="learned", n_fractions=4)
        agent, _ = train_agent(mdp, cfg, seed=2, num_updates=2500)
        rng = np.random.default_rng(0)
        assert int(np.argmax(agent.action_values(mdp.features[0], rng))) == 1
        mean, err = evaluate_policy(mdp, agent.policy(0.0, mdp), 400, rng)
        assert abs(mean - 2.0) < 0.35
        assert err > 0.0  # stochastic arm, nonzero spread

    def test_quantile_curve_shape(self):
        mdp = single_loop()
        agent, _, _ = _filled_agent(mdp, _small_config())
        taus = np.array([0.1, 0.5, 0.9])
        curve = agent.quantile_curve(mdp.features[0], 0, taus)
        assert curve.shape == (3,) and np.all(np.isfinite(curve))

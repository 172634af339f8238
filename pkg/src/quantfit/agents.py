"""Distributional agents over the shared quantile-network backbone.

Three kinds, differing only in where quantile fractions come from:

- "learned": a per-action proposer head on the state encoding emits logits,
  trained by the analytic W1 fraction gradient through the cumulative
  softmax (the value network supplies the quantile function).
- "fixed": equally spaced fractions, never updated.
- "sampled": fractions drawn i.i.d. uniform and sorted, re-drawn per use,
  independently on the current and target sides.

The proposer gradient deliberately stops at the state encoding: it updates
only the proposer head, never the encoder weights.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .envs import HORIZON_CAP, ToyMDP, Transition
from .fractions import batched_fraction_grid, batched_logit_gradient, batched_segment_widths
from .valuenet import QuantileValueNet

AGENT_KINDS = ("learned", "fixed", "sampled")


class TrainingDivergedError(RuntimeError):
    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


# ---------------------------------------------------------------------------
# Parameter-dict optimizers


@dataclass
class AdamState:
    """Adam over a named parameter dict; updates arrays in place."""

    step_size: float = 5e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    first: dict = field(default_factory=dict)
    second: dict = field(default_factory=dict)
    iteration: int = 0

    def apply(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.iteration += 1
        b1c = 1.0 - self.beta1**self.iteration
        b2c = 1.0 - self.beta2**self.iteration
        for name, p in params.items():
            g = grads[name]
            m = self.first.setdefault(name, np.zeros_like(p))
            v = self.second.setdefault(name, np.zeros_like(p))
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            p -= self.step_size * (m / b1c) / (np.sqrt(v / b2c) + self.epsilon)


@dataclass
class RMSPropState:
    """Plain RMSProp over a named parameter dict; updates arrays in place."""

    step_size: float = 1e-2
    decay: float = 0.95
    epsilon: float = 1e-8
    mean_square: dict = field(default_factory=dict)

    def apply(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for name, p in params.items():
            g = grads[name]
            s = self.mean_square.setdefault(name, np.zeros_like(p))
            s += (1.0 - self.decay) * (g * g - s)
            p -= self.step_size * g / (np.sqrt(s) + self.epsilon)


# ---------------------------------------------------------------------------
# Replay


class ReplayBuffer:
    """Uniform ring buffer; sampling is deterministic under a fixed generator."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self._items: deque[Transition] = deque(maxlen=capacity)

    def push(self, t: Transition) -> None:
        self._items.append(t)

    def __len__(self) -> int:
        return len(self._items)

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Transition]:
        if not self._items:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, len(self._items), size=batch_size)
        return [self._items[int(i)] for i in idx]


# ---------------------------------------------------------------------------
# Configuration


@dataclass
class AgentConfig:
    kind: str = "learned"
    n_fractions: int = 8
    kappa: float = 1.0
    discount: float | None = None  # default: the environment's
    epsilon_train: float = 0.1
    epsilon_eval: float = 0.01
    value_lr: float = 5e-3
    fraction_lr: float = 1e-2
    target_sync_period: int = 100
    entropy_coeff: float = 0.0
    hidden_dim: int = 32
    n_basis: int = 32
    replay_capacity: int = 10_000
    batch_size: int = 32

    def __post_init__(self):
        if self.kind not in AGENT_KINDS:
            raise ValueError(f"kind must be one of {AGENT_KINDS}")
        if self.n_fractions < 1:
            raise ValueError("n_fractions must be >= 1")
        if not 0.0 <= self.epsilon_train <= 1.0 or not 0.0 <= self.epsilon_eval <= 1.0:
            raise ValueError("epsilon values must lie in [0, 1]")
        if self.kappa <= 0.0:
            raise ValueError("kappa must be positive")
        if self.target_sync_period < 1:
            raise ValueError("target_sync_period must be >= 1")


# ---------------------------------------------------------------------------
# Action selection


def epsilon_greedy(action_values: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    """Greedy with ties to the lowest index; explores with probability ε."""
    q = np.asarray(action_values, dtype=float)
    if q.size == 0:
        raise ValueError("need at least one action")
    if rng.random() < epsilon:
        return int(rng.integers(q.size))
    return int(np.argmax(q))


# ---------------------------------------------------------------------------
# Agent


class Agent:
    def __init__(
        self,
        config: AgentConfig,
        state_dim: int,
        action_count: int,
        rng: np.random.Generator,
        zero_value_head: bool = False,
    ):
        self.config = config
        self.net = QuantileValueNet.initialize(
            state_dim, action_count, config.hidden_dim, config.n_basis, rng
        )
        if zero_value_head:
            self.net.head_weight[:] = 0.0
            self.net.head_bias[:] = 0.0
        self.target_net = self.net.clone()
        n = config.n_fractions
        # zero-initialized proposer: every action starts with uniform fractions
        self.proposer_weight = np.zeros((config.hidden_dim, action_count, n))
        self.proposer_bias = np.zeros((action_count, n))
        self.value_opt = AdamState(step_size=config.value_lr)
        self.fraction_opt = RMSPropState(step_size=config.fraction_lr)
        self.update_count = 0

    @property
    def action_count(self) -> int:
        return self.net.action_count

    def proposer_params(self) -> dict[str, np.ndarray]:
        return {"proposer.weight": self.proposer_weight, "proposer.bias": self.proposer_bias}

    def _encode(self, states: np.ndarray) -> np.ndarray:
        # online-net state features; the proposer reads these without
        # contributing gradients to them
        pre = states @ self.net.encoder_weight + self.net.encoder_bias
        return np.maximum(pre, 0.0)

    def _propose_logits(self, encoded: np.ndarray) -> np.ndarray:
        return np.einsum("bd,dan->ban", encoded, self.proposer_weight) + self.proposer_bias

    def _current_fractions(self, states: np.ndarray, actions: np.ndarray, rng):
        """Per-sample (widths, boundaries, midpoints) for the acted-on action.

        The fixed kind shares the learned kind's arithmetic on all-zero
        logits, so a zero-initialized proposer with fraction_lr 0 reproduces
        fixed-kind behavior bit for bit.
        """
        b = states.shape[0]
        n = self.config.n_fractions
        if self.config.kind == "sampled":
            draws = np.sort(rng.random((b, n)), axis=1)
            return np.full((b, n), 1.0 / n), None, draws, None
        if self.config.kind == "learned":
            encoded = self._encode(states)
            logits = self._propose_logits(encoded)[np.arange(b), actions]
        else:
            encoded = None
            logits = np.zeros((b, n))
        widths = batched_segment_widths(logits)
        bounds, mids = batched_fraction_grid(logits)
        return widths, bounds, mids, encoded

    def _next_action_quantiles(self, next_states: np.ndarray, mids_current: np.ndarray, rng):
        """Greedy action at x' per the target net, and its target quantiles."""
        b = next_states.shape[0]
        n = self.config.n_fractions
        a_count = self.action_count
        if self.config.kind == "sampled":
            draws = np.sort(rng.random((b, n)), axis=1)  # independent of the current side
            out, _ = self.target_net.forward_batch(next_states, draws)
            values = np.mean(out, axis=1)
            best = np.argmax(values, axis=1)
            return best, out[np.arange(b), :, best]
        if self.config.kind == "learned":
            logits = self._propose_logits(self._encode(next_states))  # (B, A, N)
        else:
            logits = np.zeros((b, a_count, n))
        flat = logits.reshape(b * a_count, n)
        widths = batched_segment_widths(flat).reshape(b, a_count, n)
        _, mids = batched_fraction_grid(flat)
        mids = mids.reshape(b, a_count, n)
        values = np.empty((b, a_count))
        for a in range(a_count):
            out, _ = self.target_net.forward_batch(next_states, mids[:, a, :])
            values[:, a] = np.sum(widths[:, a, :] * out[:, :, a], axis=1)
        best = np.argmax(values, axis=1)
        # shared fractions: evaluate the target at the current-side midpoints
        out, _ = self.target_net.forward_batch(next_states, mids_current)
        return best, out[np.arange(b), :, best]

    def update(self, batch: list[Transition], mdp: ToyMDP, rng: np.random.Generator) -> dict:
        """One gradient step on the value network (and proposer, if learned)."""
        if not batch:
            raise ValueError("batch must be non-empty")
        cfg = self.config
        n = cfg.n_fractions
        b = len(batch)
        gamma = cfg.discount if cfg.discount is not None else mdp.discount

        states = mdp.features[[t.state for t in batch]]
        actions = np.array([t.action for t in batch])
        rewards = np.array([t.reward for t in batch])
        next_states = mdp.features[[t.next_state for t in batch]]
        terminal = np.array([t.terminal for t in batch])

        widths, bounds, mids, encoded = self._current_fractions(states, actions, rng)
        out_cur, record = self.net.forward_batch(states, mids)
        current = out_cur[np.arange(b), :, actions]  # (B, N)

        _, target_q = self._next_action_quantiles(next_states, mids, rng)
        targets = rewards[:, None] + np.where(terminal[:, None], 0.0, gamma) * target_q

        delta = targets[:, :, None] - current[:, None, :]  # (B, target i, current j)
        kappa = cfg.kappa
        abs_d = np.abs(delta)
        huber = np.where(abs_d <= kappa, 0.5 * delta * delta, kappa * (abs_d - 0.5 * kappa))
        weight = np.abs(mids[:, None, :] - (delta < 0.0))
        loss = float(np.sum(weight * huber) / (n * b))

        mean_abs_fraction_grad = 0.0
        proposer_grads = None
        if cfg.kind == "learned":
            # dW1/dtau_i from the network's own quantile curve, per sample
            interior = bounds[:, 1:-1]  # (B, N-1)
            eval_taus = np.concatenate((interior, mids), axis=1)
            out_all, _ = self.net.forward_batch(states, eval_taus)
            curve = out_all[np.arange(b), :, actions]
            f_int, f_mid = curve[:, : n - 1], curve[:, n - 1 :]
            tau_grad = 2.0 * f_int - f_mid[:, 1:] - f_mid[:, :-1]
            mean_abs_fraction_grad = float(np.mean(np.abs(tau_grad))) if n > 1 else 0.0
            gz = batched_logit_gradient(widths, tau_grad, cfg.entropy_coeff)
            gw = np.zeros_like(self.proposer_weight)
            gb = np.zeros_like(self.proposer_bias)
            np.add.at(gb, actions, gz)
            for a in range(self.action_count):
                mask = actions == a
                if np.any(mask):
                    gw[:, a, :] = encoded[mask].T @ gz[mask]
            proposer_grads = {"proposer.weight": gw / b, "proposer.bias": gb / b}

        # dL/dcurrent_j = -sum_i dρ/dδ_ij, folded with the batch mean
        dhuber = np.clip(delta, -kappa, kappa)
        dldd = weight * dhuber / (kappa * n * b)
        upstream = np.zeros_like(out_cur)
        upstream[np.arange(b), :, actions] = -dldd.sum(axis=1)
        grads = self.net.backward(record, upstream)

        if not np.isfinite(loss):
            raise TrainingDivergedError(
                "loss is not finite", {"loss": loss, "update": self.update_count}
            )

        self.value_opt.apply(self.net.parameters(), grads)
        if proposer_grads is not None:
            self.fraction_opt.apply(self.proposer_params(), proposer_grads)

        self.update_count += 1
        if self.update_count % cfg.target_sync_period == 0:
            self.target_net = self.net.clone()

        violations = float(np.mean(np.diff(np.asarray(current), axis=1) < 0.0)) if n > 1 else 0.0
        return {
            "update": self.update_count,
            "loss": loss,
            "mean_abs_fraction_grad": mean_abs_fraction_grad,
            "monotonicity_violation_rate": violations,
        }

    def action_values(self, state_features: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Online-net Q per action at one state."""
        x = np.asarray(state_features, dtype=float)[np.newaxis, :]
        n = self.config.n_fractions
        a_count = self.action_count
        if self.config.kind == "sampled":
            draws = np.sort(rng.random((1, n)), axis=1)
            out, _ = self.net.forward_batch(x, draws)
            return np.mean(out[0], axis=0)
        if self.config.kind == "learned":
            logits = self._propose_logits(self._encode(x))[0]  # (A, N)
        else:
            logits = np.zeros((a_count, n))
        widths = batched_segment_widths(logits)
        _, mids = batched_fraction_grid(logits)
        out, _ = self.net.forward_batch(np.repeat(x, a_count, axis=0), mids)
        theta = out[np.arange(a_count), :, np.arange(a_count)]
        return np.sum(widths * theta, axis=1)

    def quantile_curve(self, state_features: np.ndarray, action: int, taus: np.ndarray) -> np.ndarray:
        """Online-net quantile values for one state-action at given fractions."""
        x = np.asarray(state_features, dtype=float)[np.newaxis, :]
        out, _ = self.net.forward_batch(x, np.asarray(taus, dtype=float)[np.newaxis, :])
        return out[0, :, action]

    def proposed_fractions(self, state_features: np.ndarray, action: int):
        """Interior fractions and midpoints the agent would use at this state."""
        x = np.asarray(state_features, dtype=float)[np.newaxis, :]
        n = self.config.n_fractions
        if self.config.kind == "learned":
            encoded = self._encode(x)
            logits = self._propose_logits(encoded)[0, action][np.newaxis, :]
        else:
            logits = np.zeros((1, n))
        bounds, mids = batched_fraction_grid(logits)
        return bounds[0], mids[0]

    def policy(self, epsilon: float, mdp: ToyMDP):
        def act(state_index: int, rng: np.random.Generator) -> int:
            q = self.action_values(mdp.features[state_index], rng)
            return epsilon_greedy(q, epsilon, rng)

        return act


# ---------------------------------------------------------------------------
# Training and evaluation loops


def train_agent(
    mdp: ToyMDP,
    config: AgentConfig,
    seed: int,
    num_updates: int,
    diag_every: int = 1,
    zero_value_head: bool = False,
    probe_every: int = 0,
    probe=None,
) -> tuple[Agent, list[dict]]:
    """Interleaved acting and learning; fully deterministic under the seed.

    ``probe(agent, diag)`` fires every ``probe_every`` updates. Probes must
    bring their own generators: anything drawn from the training ``rng``
    would shift the stream and break seed reproducibility.
    """
    rng = np.random.default_rng(seed)
    agent = Agent(config, mdp.state_dim, mdp.n_actions, rng, zero_value_head=zero_value_head)
    buffer = ReplayBuffer(config.replay_capacity)
    diagnostics: list[dict] = []

    state = mdp.start_state
    steps_in_episode = 0
    while agent.update_count < num_updates:
        q = agent.action_values(mdp.features[state], rng)
        action = epsilon_greedy(q, config.epsilon_train, rng)
        transition = mdp.step(state, action, rng)
        buffer.push(transition)
        steps_in_episode += 1
        if transition.terminal or steps_in_episode >= HORIZON_CAP:
            state = mdp.start_state
            steps_in_episode = 0
        else:
            state = transition.next_state

        if len(buffer) >= config.batch_size:
            batch = buffer.sample(config.batch_size, rng)
            diag = agent.update(batch, mdp, rng)
            if diag["update"] % diag_every == 0:
                diagnostics.append(diag)
            if probe_every and probe is not None and diag["update"] % probe_every == 0:
                probe(agent, diag)
    return agent, diagnostics


def evaluate_policy(
    mdp: ToyMDP,
    action_fn,
    episodes: int,
    rng: np.random.Generator,
    horizon: int = HORIZON_CAP,
) -> tuple[float, float]:
    """Mean undiscounted episode return and its standard error."""
    if episodes < 1:
        raise ValueError("episodes must be positive")
    returns = np.empty(episodes)
    for k in range(episodes):
        state = mdp.start_state
        total = 0.0
        for _ in range(horizon):
            action = int(action_fn(state, rng))
            t = mdp.step(state, action, rng)
            total += t.reward
            if t.terminal:
                break
            state = t.next_state
        returns[k] = total
    stderr = float(returns.std(ddof=1) / np.sqrt(episodes)) if episodes > 1 else 0.0
    return float(returns.mean()), stderr

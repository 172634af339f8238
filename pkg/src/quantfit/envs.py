"""Small MDPs with enumerable or Monte-Carlo-checkable return distributions.

States are encoded as feature vectors (one-hot by default). Rewards are
finite-support distributions over values, which covers deterministic rewards
as the single-outcome case. Episodes are capped at HORIZON_CAP steps so every
rollout terminates even on self-loop environments.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .distributions import EmpiricalQF

HORIZON_CAP = 200


@dataclass(frozen=True)
class Transition:
    state: int
    action: int
    reward: float
    next_state: int
    terminal: bool

    def __post_init__(self):
        if not np.isfinite(self.reward):
            raise ValueError("reward must be finite")


@dataclass
class ToyMDP:
    """Finite MDP: transition tensor (S, A, S), reward distributions (S, A, M)."""

    transitions: np.ndarray
    reward_values: np.ndarray
    reward_probs: np.ndarray
    terminal: np.ndarray
    discount: float
    start_state: int = 0
    features: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        self.transitions = np.asarray(self.transitions, dtype=float)
        self.reward_values = np.asarray(self.reward_values, dtype=float)
        self.reward_probs = np.asarray(self.reward_probs, dtype=float)
        self.terminal = np.asarray(self.terminal, dtype=bool)
        s, a, s2 = self.transitions.shape
        if s != s2:
            raise ValueError("transition tensor must be (states, actions, states)")
        if self.reward_values.shape != self.reward_probs.shape or self.reward_values.shape[:2] != (s, a):
            raise ValueError("reward tables must be (states, actions, outcomes)")
        if self.terminal.shape != (s,):
            raise ValueError("terminal flags must have one entry per state")
        if not 0.0 < self.discount < 1.0:
            raise ValueError("discount must lie in (0, 1)")
        if not 0 <= self.start_state < s:
            raise ValueError("start_state out of range")
        rows = self.transitions.reshape(-1, s).sum(axis=1)
        if np.max(np.abs(rows - 1.0)) > 1e-12:
            raise ValueError("every transition row must sum to 1 within 1e-12")
        if np.any(self.transitions < 0.0):
            raise ValueError("transition probabilities must be non-negative")
        prows = self.reward_probs.reshape(s * a, -1).sum(axis=1)
        if np.max(np.abs(prows - 1.0)) > 1e-12 or np.any(self.reward_probs < 0.0):
            raise ValueError("reward outcome probabilities must form distributions")
        if not np.all(np.isfinite(self.reward_values)):
            raise ValueError("reward values must be finite")
        if self.features is None:
            self.features = np.eye(s)
        else:
            self.features = np.asarray(self.features, dtype=float)
            if self.features.shape[0] != s or not np.all(np.isfinite(self.features)):
                raise ValueError("features must be a finite (states, dim) matrix")

    @property
    def n_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[1]

    @property
    def state_dim(self) -> int:
        return self.features.shape[1]

    def sample_reward(self, state: int, action: int, rng: np.random.Generator) -> float:
        p = self.reward_probs[state, action]
        idx = int(np.searchsorted(np.cumsum(p), rng.random(), side="right"))
        return float(self.reward_values[state, action, min(idx, p.size - 1)])

    def sample_next(self, state: int, action: int, rng: np.random.Generator) -> int:
        p = self.transitions[state, action]
        idx = int(np.searchsorted(np.cumsum(p), rng.random(), side="right"))
        return int(min(idx, p.size - 1))

    def step(self, state: int, action: int, rng: np.random.Generator) -> Transition:
        if self.terminal[state]:
            raise ValueError("cannot step from a terminal state")
        if not 0 <= action < self.n_actions:
            raise ValueError("action out of range")
        r = self.sample_reward(state, action, rng)
        nxt = self.sample_next(state, action, rng)
        return Transition(state, action, r, nxt, bool(self.terminal[nxt]))


def _deterministic_reward(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    v = np.asarray(values, dtype=float)[..., np.newaxis]
    return v, np.ones_like(v)


def bellman_target(
    reward: float, discount: float, terminal: bool, next_quantiles: np.ndarray
) -> np.ndarray:
    """Distributional Bellman push: r + γ·next quantiles, or all-r at episode end."""
    q = np.asarray(next_quantiles, dtype=float)
    if terminal:
        return np.full_like(q, reward)
    return reward + discount * q


def true_return_distribution(
    mdp: ToyMDP,
    policy,
    state: int,
    action: int,
    n_draws: int,
    rng: np.random.Generator,
    horizon: int = HORIZON_CAP,
) -> EmpiricalQF:
    """Monte-Carlo discounted returns from (state, action), then following policy."""
    if n_draws < 1:
        raise ValueError("n_draws must be positive")
    returns = np.empty(n_draws)
    for k in range(n_draws):
        total = 0.0
        scale = 1.0
        x, a = state, action
        for _ in range(horizon):
            t = mdp.step(x, a, rng)
            total += scale * t.reward
            scale *= mdp.discount
            if t.terminal:
                break
            x = t.next_state
            a = int(policy(x, rng))
        returns[k] = total
    return EmpiricalQF(returns)


# ---------------------------------------------------------------------------
# Named environments


def single_loop(reward: float = 1.0, discount: float = 0.5) -> ToyMDP:
    """One non-terminal state looping to itself; the cap ends episodes."""
    rv, rp = _deterministic_reward(np.array([[reward]]))
    return ToyMDP(
        transitions=np.ones((1, 1, 1)),
        reward_values=rv,
        reward_probs=rp,
        terminal=np.array([False]),
        discount=discount,
        name="single_loop",
    )


def bandit() -> ToyMDP:
    """One decision, one arm paying 0 or 2 with equal probability."""
    t = np.zeros((2, 1, 2))
    t[0, 0, 1] = 1.0
    t[1, 0, 1] = 1.0
    rv = np.zeros((2, 1, 2))
    rp = np.zeros((2, 1, 2))
    rv[0, 0] = (0.0, 2.0)
    rp[0, 0] = (0.5, 0.5)
    rp[1, 0] = (1.0, 0.0)
    return ToyMDP(t, rv, rp, np.array([False, True]), 0.9, name="bandit")


def two_armed_bandit(high: float = 2.0) -> ToyMDP:
    """Arm 0 pays 1 with certainty; arm 1 pays 0 or ``high`` with equal odds."""
    t = np.zeros((2, 2, 2))
    t[:, :, 1] = 1.0
    rv = np.zeros((2, 2, 2))
    rp = np.zeros((2, 2, 2))
    rv[0, 0] = (1.0, 1.0)
    rp[0, 0] = (1.0, 0.0)
    rv[0, 1] = (0.0, high)
    rp[0, 1] = (0.5, 0.5)
    rp[1] = (1.0, 0.0)
    return ToyMDP(t, rv, rp, np.array([False, True]), 0.9, name="two_armed_bandit")


def chain(n_states: int = 5, stochastic_terminal: bool = True) -> ToyMDP:
    """Walk right to collect the terminal reward; action 1 steps back.

    The last transition pays either a coin flip over {0, 2} or a certain 1.
    """
    s = n_states + 1  # plus the terminal sink
    t = np.zeros((s, 2, s))
    for i in range(n_states):
        t[i, 0, i + 1] = 1.0
        t[i, 1, max(i - 1, 0)] = 1.0
    t[n_states, :, n_states] = 1.0
    rv = np.zeros((s, 2, 2))
    rp = np.zeros((s, 2, 2))
    rp[..., 0] = 1.0
    if stochastic_terminal:
        rv[n_states - 1, 0] = (0.0, 2.0)
        rp[n_states - 1, 0] = (0.5, 0.5)
    else:
        rv[n_states - 1, 0] = (1.0, 1.0)
        rp[n_states - 1, 0] = (1.0, 0.0)
    terminal = np.zeros(s, dtype=bool)
    terminal[n_states] = True
    return ToyMDP(t, rv, rp, terminal, 0.9, name="chain")


def windy_gridworld(wind_prob: float = 0.3, step_penalty: float = -0.01) -> ToyMDP:
    """4x4 grid, start at (0,0), terminal reward 1 at (3,3), sideways wind.

    Actions move up/down/left/right deterministically, but in the middle
    columns the wind additionally pushes one row up with probability
    ``wind_prob``. Every move costs ``step_penalty``.
    """
    size = 4
    s = size * size

    def at(row, col):
        return row * size + col

    moves = ((1, 0), (-1, 0), (0, -1), (0, 1))
    t = np.zeros((s, 4, s))
    goal = at(size - 1, size - 1)
    for r in range(size):
        for c in range(size):
            x = at(r, c)
            for a, (dr, dc) in enumerate(moves):
                nr = min(max(r + dr, 0), size - 1)
                nc = min(max(c + dc, 0), size - 1)
                if nc in (1, 2) and wind_prob > 0.0:
                    wr = min(nr + 1, size - 1)
                    t[x, a, at(wr, nc)] += wind_prob
                    t[x, a, at(nr, nc)] += 1.0 - wind_prob
                else:
                    t[x, a, at(nr, nc)] = 1.0
    rv = np.zeros((s, 4, 2))
    rp = np.zeros((s, 4, 2))
    rp[..., 0] = 1.0
    for r in range(size):
        for c in range(size):
            x = at(r, c)
            for a, (dr, dc) in enumerate(moves):
                nr = min(max(r + dr, 0), size - 1)
                nc = min(max(c + dc, 0), size - 1)
                # the goal column carries no wind, so goal entry is always the
                # commanded move and a state-action reward captures it exactly
                landing_goal = at(nr, nc) == goal
                rv[x, a] = (step_penalty + (1.0 if landing_goal else 0.0), 0.0)
    terminal = np.zeros(s, dtype=bool)
    terminal[goal] = True
    return ToyMDP(t, rv, rp, terminal, 0.95, name="windy_gridworld")


_REGISTRY = {
    "single_loop": lambda: single_loop(),
    "zero_reward": lambda: single_loop(reward=0.0),
    "bandit": bandit,
    "two_armed_bandit": lambda: two_armed_bandit(2.0),
    "two_armed_bandit_high": lambda: two_armed_bandit(4.0),
    "chain": lambda: chain(5, stochastic_terminal=True),
    "chain_deterministic": lambda: chain(5, stochastic_terminal=False),
    "windy_gridworld": lambda: windy_gridworld(),
}


def named_mdp(name: str) -> ToyMDP:
    try:
        factory = _REGISTRY[name]
    except KeyError:
        known = ", ".join(sorted(_REGISTRY))
        raise ValueError(f"unknown environment {name!r}; known: {known}") from None
    return factory()


# ---------------------------------------------------------------------------
# Declarative environment files


def mdp_to_dict(mdp: ToyMDP) -> dict:
    rewards = []
    for x in range(mdp.n_states):
        row = []
        for a in range(mdp.n_actions):
            outcomes = [
                {"value": float(v), "prob": float(p)}
                for v, p in zip(mdp.reward_values[x, a], mdp.reward_probs[x, a])
                if p > 0.0
            ]
            row.append(outcomes)
        rewards.append(row)
    return {
        "name": mdp.name,
        "discount": mdp.discount,
        "start_state": mdp.start_state,
        "terminal": mdp.terminal.tolist(),
        "transitions": mdp.transitions.tolist(),
        "rewards": rewards,
        "features": mdp.features.tolist(),
    }


def mdp_from_dict(spec: dict) -> ToyMDP:
    required = {"discount", "terminal", "transitions", "rewards"}
    missing = required - set(spec)
    if missing:
        raise ValueError(f"environment spec missing keys: {sorted(missing)}")
    rewards = spec["rewards"]
    max_outcomes = max(
        max(len(cell) for cell in row) if row else 1 for row in rewards
    )
    s = len(rewards)
    a = len(rewards[0]) if s else 0
    rv = np.zeros((s, a, max_outcomes))
    rp = np.zeros((s, a, max_outcomes))
    rp[..., 0] = 1.0
    for x, row in enumerate(rewards):
        for act, outcomes in enumerate(row):
            if not outcomes:
                continue
            rp[x, act] = 0.0
            for k, item in enumerate(outcomes):
                rv[x, act, k] = item["value"]
                rp[x, act, k] = item["prob"]
    return ToyMDP(
        transitions=np.array(spec["transitions"], dtype=float),
        reward_values=rv,
        reward_probs=rp,
        terminal=np.array(spec["terminal"], dtype=bool),
        discount=float(spec["discount"]),
        start_state=int(spec.get("start_state", 0)),
        features=np.array(spec["features"], dtype=float) if "features" in spec else None,
        name=str(spec.get("name", "")),
    )


def load_mdp(path: str) -> ToyMDP:
    with open(path, encoding="utf-8") as fh:
        return mdp_from_dict(json.load(fh))


def save_mdp(path: str, mdp: ToyMDP) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(mdp_to_dict(mdp), fh, indent=2)

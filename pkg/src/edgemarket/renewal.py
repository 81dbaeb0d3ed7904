"""Reputation-driven contract renewal: a small double-Q learner decides after
each transaction whether the standing long-term contracts should be renewed.

The action-value approximator is a two-hidden-layer tanh network with explicit
backpropagation — the state is tiny, so no learning framework is pulled in.
Action 0 renews (re-runs futures negotiation on the extended demand history),
action 1 continues under the current contracts.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

ACTION_RENEW = 0
ACTION_CONTINUE = 1


@dataclass(frozen=True)
class RLConfig:
    discount: float = 0.95
    soft_update: float = 0.01
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_steps: int = 500
    renew_penalty: float = -10.0       # reward of choosing to renew
    w4: float = 1.0                    # fulfilled-task weight in reputation
    w5: float = 1.0                    # defaulted-task weight in reputation
    w6: float = 1.0                    # utility weight in the continue reward
    w7: float = 0.1                    # reputation weight in the continue reward
    replay_capacity: int = 10_000
    minibatch: int = 32
    learning_rate: float = 1e-3
    horizon: int = 100                 # practical transactions per episode
    hidden: int = 64
    episodes: int = 12

    def __post_init__(self):
        if not 0 <= self.discount <= 1:
            raise ValueError("discount must lie in [0, 1]")
        if not 0 < self.soft_update <= 1:
            raise ValueError("soft_update must lie in (0, 1]")
        if self.renew_penalty >= 0:
            raise ValueError("renew_penalty must be negative")
        if min(self.w4, self.w5, self.w6, self.w7) < 0:
            raise ValueError("reward weights must be >= 0")


def reputation_value(fulfilled: int, defaulted: int, w4: float, w5: float) -> float:
    """Market reputation of one transaction: weighted served minus defaulted."""
    if fulfilled < 0 or defaulted < 0:
        raise ValueError("task counts must be >= 0")
    return w4 * fulfilled - w5 * defaulted


def reward(action: int, total_utility: float, reputation: float, cfg: RLConfig) -> float:
    if action == ACTION_RENEW:
        return cfg.renew_penalty
    if action == ACTION_CONTINUE:
        return cfg.w6 * total_utility + cfg.w7 * reputation
    raise ValueError(f"unknown action {action}")


# ---------------------------------------------------------------------------
# Value network
# ---------------------------------------------------------------------------

class QNetwork:
    """input -> tanh(hidden) -> tanh(hidden) -> 2 action values."""

    def __init__(self, input_dim: int, hidden: int, rng: np.random.Generator):
        def glorot(fan_in, fan_out):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-bound, bound, size=(fan_in, fan_out))

        self.params = {
            "w1": glorot(input_dim, hidden), "b1": np.zeros(hidden),
            "w2": glorot(hidden, hidden), "b2": np.zeros(hidden),
            "w3": glorot(hidden, 2), "b3": np.zeros(2),
        }

    def copy(self) -> "QNetwork":
        clone = object.__new__(QNetwork)
        clone.params = {k: v.copy() for k, v in self.params.items()}
        return clone

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        p = self.params
        h1 = np.tanh(x @ p["w1"] + p["b1"])
        h2 = np.tanh(h1 @ p["w2"] + p["b2"])
        return h2 @ p["w3"] + p["b3"]

    def loss_and_gradients(self, x: np.ndarray, actions: np.ndarray,
                           targets: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
        """Mean squared TD error over the batch and its parameter gradients."""
        x = np.atleast_2d(x)
        b = x.shape[0]
        p = self.params
        z1 = x @ p["w1"] + p["b1"]
        h1 = np.tanh(z1)
        z2 = h1 @ p["w2"] + p["b2"]
        h2 = np.tanh(z2)
        q = h2 @ p["w3"] + p["b3"]

        picked = q[np.arange(b), actions]
        err = picked - targets
        loss = float(np.mean(err ** 2))

        dq = np.zeros_like(q)
        dq[np.arange(b), actions] = 2.0 * err / b
        grads = {
            "w3": h2.T @ dq, "b3": dq.sum(axis=0),
        }
        dh2 = (dq @ p["w3"].T) * (1.0 - h2 ** 2)
        grads["w2"] = h1.T @ dh2
        grads["b2"] = dh2.sum(axis=0)
        dh1 = (dh2 @ p["w2"].T) * (1.0 - h1 ** 2)
        grads["w1"] = x.T @ dh1
        grads["b1"] = dh1.sum(axis=0)
        return loss, grads

    def apply_gradients(self, grads: dict[str, np.ndarray], lr: float) -> None:
        for k, g in grads.items():
            if not np.isfinite(g).all():
                raise FloatingPointError(f"nonfinite gradient in {k}")
            self.params[k] -= lr * g


class ReplayBuffer:
    """FIFO transition store."""

    def __init__(self, capacity: int):
        self.buf: deque = deque(maxlen=capacity)

    def push(self, state, action, rew, next_state, terminal) -> None:
        self.buf.append((np.asarray(state, dtype=float), int(action), float(rew),
                         np.asarray(next_state, dtype=float), bool(terminal)))

    def sample(self, k: int, rng: np.random.Generator):
        idx = rng.integers(0, len(self.buf), size=min(k, len(self.buf)))
        batch = [self.buf[i] for i in idx]
        states = np.stack([b[0] for b in batch])
        actions = np.array([b[1] for b in batch])
        rewards = np.array([b[2] for b in batch])
        nexts = np.stack([b[3] for b in batch])
        terms = np.array([b[4] for b in batch])
        return states, actions, rewards, nexts, terms

    def __len__(self) -> int:
        return len(self.buf)


# ---------------------------------------------------------------------------
# Agent
# ---------------------------------------------------------------------------

@dataclass
class RenewalAgent:
    cfg: RLConfig
    input_dim: int
    seed: int = 0
    step_count: int = 0
    epsilon: float = field(init=False)

    def __post_init__(self):
        self.rng = np.random.default_rng(self.seed)
        self.online = QNetwork(self.input_dim, self.cfg.hidden, self.rng)
        self.target = self.online.copy()
        self.replay = ReplayBuffer(self.cfg.replay_capacity)
        self.epsilon = self.cfg.epsilon_start

    def act(self, state: np.ndarray, explore: bool = True) -> int:
        """Epsilon-greedy action; epsilon decays after every exploring call."""
        if explore:
            u = self.rng.random()
            eps = self.epsilon
            self._decay_epsilon()
            if u < eps:
                return int(self.rng.integers(0, 2))
        q = self.online.forward(state)[0]
        return int(np.argmax(q))

    def _decay_epsilon(self) -> None:
        self.step_count += 1
        cfg = self.cfg
        frac = min(1.0, self.step_count / max(1, cfg.epsilon_decay_steps))
        # exponential interpolation of the schedule
        self.epsilon = cfg.epsilon_start * (cfg.epsilon_end / cfg.epsilon_start) ** frac

    def td_targets(self, rewards: np.ndarray, next_states: np.ndarray,
                   terminals: np.ndarray) -> np.ndarray:
        """Double-Q target: the online net picks the next action, the target
        net evaluates it; terminal transitions return the reward alone."""
        q_online = self.online.forward(next_states)
        q_target = self.target.forward(next_states)
        picked = q_target[np.arange(len(rewards)), np.argmax(q_online, axis=1)]
        return rewards + self.cfg.discount * picked * (~terminals)

    def learn_step(self) -> float | None:
        if len(self.replay) == 0:
            return None
        states, actions, rewards, nexts, terms = self.replay.sample(
            self.cfg.minibatch, self.rng)
        targets = self.td_targets(rewards, nexts, terms)
        loss, grads = self.online.loss_and_gradients(states, actions, targets)
        self.online.apply_gradients(grads, self.cfg.learning_rate)
        self.soft_update()
        return loss

    def soft_update(self) -> None:
        mu = self.cfg.soft_update
        for k in self.online.params:
            self.target.params[k] = (mu * self.online.params[k]
                                     + (1 - mu) * self.target.params[k])

    # -- snapshot io ---------------------------------------------------------

    def save(self, path) -> None:
        arrays = {f"online_{k}": v for k, v in self.online.params.items()}
        arrays.update({f"target_{k}": v for k, v in self.target.params.items()})
        arrays["meta"] = np.array([self.input_dim, self.cfg.hidden,
                                   self.step_count, self.epsilon])
        np.savez(path, **arrays)

    @staticmethod
    def load(path, cfg: RLConfig) -> "RenewalAgent":
        data = np.load(path)
        meta = data["meta"]
        agent = RenewalAgent(cfg, input_dim=int(meta[0]))
        agent.step_count = int(meta[2])
        agent.epsilon = float(meta[3])
        for k in agent.online.params:
            agent.online.params[k] = data[f"online_{k}"]
            agent.target.params[k] = data[f"target_{k}"]
        return agent


def td_target(rew: float, next_state: np.ndarray, online: QNetwork, target: QNetwork,
              discount: float, terminal: bool = False) -> float:
    """Single-transition double-Q target (the batched form lives on the agent)."""
    if terminal:
        return rew
    a_star = int(np.argmax(online.forward(next_state)[0]))
    return rew + discount * float(target.forward(next_state)[0, a_star])


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

def run_training(session_factory, cfg: RLConfig, seed: int,
                 episodes: int | None = None) -> tuple[RenewalAgent, list[float]]:
    """Train the renewal agent against a market session.

    `session_factory(episode_seed)` must return an object with:
      reset() -> observation, step(action) -> (observation, reward_inputs, done).
    reward_inputs carries (total_utility, reputation) for continue steps.
    Returns the trained agent and the per-episode total-reward trace.
    """
    episodes = cfg.episodes if episodes is None else episodes
    probe = session_factory(seed)
    obs = probe.reset()
    agent = RenewalAgent(cfg, input_dim=len(obs), seed=seed)
    trace: list[float] = []
    for ep in range(episodes):
        session = probe if ep == 0 else session_factory(seed + ep)
        state = obs if ep == 0 else session.reset()
        done = False
        total = 0.0
        while not done:
            action = agent.act(state, explore=True)
            next_state, (utility, rep), done = session.step(action)
            r = reward(action, utility, rep, cfg)
            agent.replay.push(state, action, r, next_state, done)
            agent.learn_step()
            state = next_state
            total += r
        trace.append(total)
    return agent, trace

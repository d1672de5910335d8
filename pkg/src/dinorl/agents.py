"""DQN, Double DQN and Expected SARSA learners over a shared Q-network."""

from __future__ import annotations

import enum
from dataclasses import dataclass, fields

import numpy as np

from .env import Action
from .errors import ConfigError
from .nn import AdamState, NetArch, QNetwork, clone_weights, train_step
from .prng import SplitMix64
from .raster import unpack_observation
from .replay import ReplayBuffer


class AgentKind(str, enum.Enum):
    DQN = "dqn"
    DDQN = "ddqn"
    ESARSA = "esarsa"


class Expectation(str, enum.Enum):
    EPS_GREEDY = "EPS_GREEDY"
    UNIFORM = "UNIFORM"


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.99
    lr: float = 1e-4
    batch_size: int = 16
    replay_capacity: int = 50_000
    observe_steps: int = 1000
    explore_until: int = 100_000
    eps_initial: float = 0.1
    eps_final: float = 0.0001
    target_sync_period: int = 1000
    esarsa_expectation: Expectation = Expectation.EPS_GREEDY
    conv1_filters: int = 32
    conv2_filters: int = 64
    conv3_filters: int = 64
    dense_units: int = 512

    def validate(self) -> "TrainConfig":
        if not 0 < self.gamma <= 1:
            raise ConfigError(f"gamma must satisfy 0 < gamma <= 1, got {self.gamma}")
        if not 0 <= self.eps_final <= self.eps_initial <= 1:
            raise ConfigError("need 0 <= eps_final <= eps_initial <= 1")
        if not self.observe_steps < self.explore_until:
            raise ConfigError("observe_steps must be < explore_until")
        for name in ("lr", "batch_size", "replay_capacity", "target_sync_period",
                     "conv1_filters", "conv2_filters", "conv3_filters", "dense_units"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.observe_steps < 0:
            raise ConfigError("observe_steps must be >= 0")
        Expectation(self.esarsa_expectation)
        return self

    def arch(self) -> NetArch:
        return NetArch.pyramid((self.conv1_filters, self.conv2_filters, self.conv3_filters),
                               self.dense_units)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            lines.append(f"{f.name}={value.value if isinstance(value, enum.Enum) else repr(value)}\n")
        return "".join(lines)


def epsilon_at(t: int, cfg: TrainConfig) -> float:
    if t < cfg.observe_steps:
        return 1.0
    if t >= cfg.explore_until:
        return cfg.eps_final
    frac = (t - cfg.observe_steps) / (cfg.explore_until - cfg.observe_steps)
    return cfg.eps_initial + (cfg.eps_final - cfg.eps_initial) * frac


def greedy(q) -> int:
    """Argmax over the two actions; ties go to NOOP."""
    return int(q[1] > q[0])


def select_action(q, eps: float, prng: SplitMix64) -> Action:
    if prng.uniform() < eps:
        return Action(prng.below(2))
    return Action(greedy(q))


def dqn_target(r: float, terminal: bool, q_next, gamma: float) -> float:
    if terminal:
        return r
    return r + gamma * max(q_next[0], q_next[1])


def _policy_expectation(q_next, other_prob: float) -> float:
    # sum_a pi(a) q(a) with two actions, written so that other_prob == 0 gives
    # exactly max(q) and the result never leaves [min(q), max(q)]
    best = greedy(q_next)
    q_best, q_other = q_next[best], q_next[1 - best]
    return q_best - other_prob * (q_best - q_other)


def esarsa_target(r: float, terminal: bool, q_next, eps: float, gamma: float,
                  mode: Expectation = Expectation.EPS_GREEDY) -> float:
    """Expected SARSA target under an epsilon-greedy (or uniform) next-state policy."""
    if terminal:
        return r
    other_prob = 0.5 if Expectation(mode) is Expectation.UNIFORM else eps / 2
    return r + gamma * _policy_expectation(q_next, other_prob)


def ddqn_target(r: float, terminal: bool, q_next_online, q_next_target, gamma: float) -> float:
    """Online net picks the next action, target net scores it."""
    if terminal:
        return r
    return r + gamma * q_next_target[greedy(q_next_online)]


def as_obs_batch(items) -> np.ndarray:
    arr = np.stack(items)
    if arr.dtype == np.uint8:
        return unpack_observation(arr)
    return arr.astype(np.float32, copy=False)


class Agent:
    """Online network plus optimizer state; DDQN also keeps a target copy."""

    def __init__(self, kind: AgentKind | str, cfg: TrainConfig, seed: int = 0,
                 arch: NetArch | None = None):
        self.kind = AgentKind(kind)
        self.cfg = cfg
        self.online = QNetwork(arch or cfg.arch(), seed=seed)
        self.adam = AdamState.for_network(self.online)
        self.target = clone_weights(self.online) if self.kind is AgentKind.DDQN else None

    @property
    def train_steps(self) -> int:
        return self.adam.k

    def q_values(self, obs: np.ndarray) -> np.ndarray:
        """Q-values for one observation (shape (80, 80, 4))."""
        return self.online.forward(obs[None])[0]

    def targets(self, batch, eps: float) -> np.ndarray:
        next_obs = as_obs_batch([t.next_obs for t in batch])
        gamma = self.cfg.gamma
        q_next = self.online.forward(next_obs).astype(np.float64)
        if self.kind is AgentKind.DQN:
            ys = [dqn_target(t.reward, t.terminal, q, gamma) for t, q in zip(batch, q_next)]
        elif self.kind is AgentKind.DDQN:
            q_tgt = self.target.forward(next_obs).astype(np.float64)
            ys = [ddqn_target(t.reward, t.terminal, q, qt, gamma)
                  for t, q, qt in zip(batch, q_next, q_tgt)]
        else:
            mode = self.cfg.esarsa_expectation
            ys = [esarsa_target(t.reward, t.terminal, q, eps, gamma, mode) for t, q in zip(batch, q_next)]
        return np.array(ys, dtype=np.float64)

    def train_batch(self, buf: ReplayBuffer, prng: SplitMix64, eps: float = 0.0) -> float:
        """Sample a minibatch, build targets and take one gradient step. Returns the loss."""
        batch = buf.sample(self.cfg.batch_size, prng)
        ys = self.targets(batch, eps)
        obs = as_obs_batch([t.obs for t in batch])
        actions = [int(t.action) for t in batch]
        loss = train_step(self.online, self.adam, obs, ys, actions, self.cfg.lr)
        if self.target is not None and self.train_steps % self.cfg.target_sync_period == 0:
            self.target = clone_weights(self.online)
        return loss


def agent_train_batch(agent: Agent, buf: ReplayBuffer, cfg: TrainConfig, prng: SplitMix64,
                      eps: float = 0.0) -> float:
    return agent.train_batch(buf, prng, eps)

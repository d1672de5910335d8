"""Training loop, greedy evaluation, run summaries and checkpoints."""

from __future__ import annotations

import io
import os
import struct
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .agents import Agent, AgentKind, TrainConfig, epsilon_at, greedy, select_action
from .config import parse_config_text
from .env import Action, EnvConfig, new_env, step
from .errors import FormatError, UnsupportedVersionError
from .nn import AdamState, QNetwork, clone_weights, weights_from_bytes, weights_to_bytes
from .prng import SplitMix64
from .raster import init_stack, pack_observation, push_frame, render_frame
from .replay import ReplayBuffer, Transition

METRICS_HEADER = "t,episode,epsilon,loss,score,event\n"
EPOCH_LENGTH = 10


@dataclass(frozen=True)
class EpisodeRecord:
    index: int
    score: int
    length: int
    end_t: int


@dataclass(frozen=True)
class EpochRow:
    index: int
    mean_score: float
    count: int
    partial: bool


@dataclass
class MetricsLog:
    steps: list[tuple] = field(default_factory=list)  # (t, episode, epsilon, loss|None, score, event)
    episodes: list[EpisodeRecord] = field(default_factory=list)

    @property
    def scores(self) -> list[int]:
        return [e.score for e in self.episodes]

    @staticmethod
    def format_row(row) -> str:
        t, episode, eps, loss, score, event = row
        return f"{t},{episode},{eps!r},{'' if loss is None else repr(loss)},{score},{event}\n"

    def to_csv(self) -> str:
        return METRICS_HEADER + "".join(self.format_row(r) for r in self.steps)

    @classmethod
    def from_csv(cls, text: str) -> "MetricsLog":
        """Rebuild a log (including episode records) from a metrics file."""
        log = cls()
        lines = text.splitlines()
        if not lines or lines[0] + "\n" != METRICS_HEADER:
            raise ValueError("not a metrics file: bad header")
        start_t = None
        for line in lines[1:]:
            t, episode, eps, loss, score, event = line.split(",")
            row = (int(t), int(episode), float(eps), float(loss) if loss else None, int(score), event)
            log.steps.append(row)
            if start_t is None:
                start_t = row[0]
            if event == "death":
                log.episodes.append(EpisodeRecord(row[1], row[4], row[0] + 1 - start_t, row[0] + 1))
                start_t = None
        return log


def epoch_averages(episode_scores: Iterable[float], size: int = EPOCH_LENGTH) -> list[EpochRow]:
    scores = list(episode_scores)
    rows = []
    for k in range(0, len(scores), size):
        window = scores[k:k + size]
        rows.append(EpochRow(k // size, sum(window) / len(window), len(window), len(window) < size))
    return rows


def epochs_csv(rows: list[EpochRow]) -> str:
    out = ["epoch,mean_score,episodes,partial\n"]
    out += [f"{r.index},{r.mean_score!r},{r.count},{int(r.partial)}\n" for r in rows]
    return "".join(out)


def normalized_epochs(log: MetricsLog, total_timesteps: int | None = None,
                      size: int = EPOCH_LENGTH) -> list[tuple[float, float]]:
    """Epoch means keyed by training progress in [0, 1] instead of epoch index.

    Progress is the end timestep of the epoch's last episode over the run length, which
    puts runs with different episode counts on one axis.
    """
    total = total_timesteps or (log.steps[-1][0] + 1 if log.steps else 0)
    rows = epoch_averages(log.scores, size)
    return [(log.episodes[r.index * size + r.count - 1].end_t / total, r.mean_score) for r in rows]


# --------------------------------------------------------------------------- summaries

@dataclass(frozen=True)
class SummaryRow:
    run: str
    timestep: int | None
    max_score: float | None
    episodes: int
    avg_episode_length: float | None

    @property
    def score_per_timestep(self) -> float | None:
        if self.max_score is None or not self.timestep:
            return None
        return self.max_score / self.timestep


SUMMARY_HEADER = "run,timestep,max_score,episodes,avg_episode_length,score_per_timestep\n"


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.6g}" if not value.is_integer() else str(int(value))
    return str(value)


def summarize(log: MetricsLog, name: str = "run") -> SummaryRow:
    if not log.episodes:
        return SummaryRow(name, None, None, 0, None)
    best = max(log.episodes, key=lambda e: e.score)  # first episode reaching the max
    lengths = [e.length for e in log.episodes]
    return SummaryRow(name, best.end_t, best.score, len(lengths), sum(lengths) / len(lengths))


def compare_runs(logs: list[MetricsLog], names: list[str] | None = None) -> list[SummaryRow]:
    names = names or [f"run{i}" for i in range(len(logs))]
    return [summarize(log, name) for log, name in zip(logs, names)]


def render_summary(rows: list[SummaryRow]) -> str:
    out = [SUMMARY_HEADER]
    for r in rows:
        cells = [r.run, r.timestep, r.max_score, r.episodes, r.avg_episode_length, r.score_per_timestep]
        out.append(",".join(_fmt(c) for c in cells) + "\n")
    return "".join(out)


def parse_summary(text: str) -> list[SummaryRow]:
    lines = text.splitlines()
    if not lines or lines[0] + "\n" != SUMMARY_HEADER:
        raise ValueError("not a summary file: bad header")
    rows = []
    for line in lines[1:]:
        run, ts, best, eps, avg, _ = line.split(",")
        rows.append(SummaryRow(run, int(ts) if ts else None, float(best) if best else None,
                               int(eps), float(avg) if avg else None))
    return rows


def render_table(rows: list[SummaryRow]) -> str:
    """Human-readable table: one row per run, Table-1 style columns."""
    head = ("Run", "Timestep", "Max Score", "No. of Episodes", "Average length of episode")
    body = [(r.run, _fmt(r.timestep), _fmt(r.max_score), _fmt(r.episodes),
             "" if r.avg_episode_length is None else f"{r.avg_episode_length:.2f}") for r in rows]
    widths = [max(len(str(c)) for c in col) for col in zip(head, *body)]
    lines = ["  ".join(str(c).ljust(w) for c, w in zip(line, widths)).rstrip() for line in [head, *body]]
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------- checkpoints

CKPT_MAGIC = b"DINOC1"
CKPT_VERSION = 1


@dataclass
class Checkpoint:
    kind: AgentKind
    cfg: TrainConfig
    env_config: EnvConfig
    online: QNetwork
    target: QNetwork | None
    adam: AdamState
    t: int
    episodes: int
    env_prng: int
    agent_prng: int

    def to_bytes(self) -> bytes:
        echo = (f"agent={self.kind.value}\n" + self.cfg.to_text() + self.env_config.to_text()).encode("utf-8")
        out = io.BytesIO()
        out.write(CKPT_MAGIC)
        out.write(bytes([CKPT_VERSION]))
        out.write(struct.pack("<I", len(echo)))
        out.write(echo)
        out.write(struct.pack("<5Q", self.t, self.episodes, self.adam.k, self.env_prng, self.agent_prng))
        out.write(bytes([self.target is not None]))
        for net in (self.online, self.target):
            if net is not None:
                blob = weights_to_bytes(net)
                out.write(struct.pack("<I", len(blob)))
                out.write(blob)
        for arr in (*self.adam.m, *self.adam.v):
            out.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        return out.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        pos = 0

        def take(n: int) -> bytes:
            nonlocal pos
            if pos + n > len(data):
                raise FormatError(f"truncated checkpoint: needed {n} bytes", len(data))
            chunk = data[pos:pos + n]
            pos += n
            return chunk

        if data[:len(CKPT_MAGIC)] != CKPT_MAGIC:
            raise FormatError("bad magic, expected b'DINOC1'", 0)
        take(len(CKPT_MAGIC))
        version_at = pos
        (version,) = take(1)
        if version != CKPT_VERSION:
            raise UnsupportedVersionError(f"unsupported checkpoint version {version}", version_at)
        (n_echo,) = struct.unpack("<I", take(4))
        echo_at = pos
        try:
            cfg, env_config, extra = parse_config_text(take(n_echo).decode("utf-8"), extra_keys=("agent",))
            kind = AgentKind(extra["agent"])
        except (ValueError, KeyError) as exc:
            raise FormatError(f"bad config echo: {exc}", echo_at) from exc
        t, episodes, adam_k, env_prng, agent_prng = struct.unpack("<5Q", take(40))
        has_target = take(1)[0]
        arch = cfg.arch()
        nets = []
        for _ in range(1 + bool(has_target)):
            (n_blob,) = struct.unpack("<I", take(4))
            blob_at = pos
            blob = take(n_blob)
            try:
                net, end = weights_from_bytes(blob, arch)
            except FormatError as exc:
                raise FormatError(str(exc), blob_at + exc.offset) from exc
            if end != len(blob):
                raise FormatError("trailing bytes in weight blob", blob_at + end)
            nets.append(net)
        params = nets[0].parameters()
        moments = []
        for p in (*params, *params):
            raw = take(4 * p.size)
            moments.append(np.frombuffer(raw, dtype="<f4").reshape(p.shape).astype(np.float32))
        if pos != len(data):
            raise FormatError("trailing bytes after checkpoint", pos)
        adam = AdamState(moments[:len(params)], moments[len(params):], adam_k)
        return cls(kind, cfg, env_config, nets[0], nets[1] if has_target else None, adam,
                   t, episodes, env_prng, agent_prng)


def checkpoint_save(path, ckpt: Checkpoint) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(ckpt.to_bytes())
    os.replace(tmp, path)


def checkpoint_load(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return Checkpoint.from_bytes(fh.read())


# --------------------------------------------------------------------------- training

def derive_seeds(seed: int) -> tuple[int, int, int]:
    """(network init seed, episode-seed stream state, agent stream state) for a run seed."""
    master = SplitMix64(seed)
    return master.next(), master.next(), master.next()


class Trainer:
    """Sequential observe / explore / train loop for one agent.

    Episodes start from a fresh game seeded by the episode-seed stream; the agent stream
    drives exploration and minibatch sampling. Metrics can be streamed to ``metrics_path``.
    """

    def __init__(self, kind: AgentKind | str, seed: int, cfg: TrainConfig | None = None,
                 env_config: EnvConfig | None = None, resume: Checkpoint | None = None):
        if resume is not None:
            self.kind, self.cfg, self.env_config = resume.kind, resume.cfg, resume.env_config
            self.agent = Agent(self.kind, self.cfg)
            self.agent.online = clone_weights(resume.online)
            self.agent.target = clone_weights(resume.target) if resume.target is not None else None
            self.agent.adam = AdamState([m.copy() for m in resume.adam.m],
                                        [v.copy() for v in resume.adam.v], resume.adam.k)
            self.t = resume.t
            self.episode = resume.episodes
            self.env_stream = SplitMix64(resume.env_prng)
            self.prng = SplitMix64(resume.agent_prng)
        else:
            self.kind = AgentKind(kind)
            self.cfg = (cfg or TrainConfig()).validate()
            self.env_config = (env_config or EnvConfig()).validate()
            net_seed, env_state, agent_state = derive_seeds(seed)
            self.agent = Agent(self.kind, self.cfg, seed=net_seed)
            self.t = 0
            self.episode = 0
            self.env_stream = SplitMix64(env_state)
            self.prng = SplitMix64(agent_state)
        # the replay memory always starts empty, so training waits for a full observe phase
        self.train_start = self.t + self.cfg.observe_steps
        self.buffer = ReplayBuffer(self.cfg.replay_capacity)
        self.log = MetricsLog()
        self._episode_start_t = self.t
        self._new_episode()

    def _new_episode(self) -> None:
        self.state = new_env(self.env_stream.next(), self.env_config)
        self.obs = init_stack(render_frame(self.state, self.env_config))
        self.q = self.agent.q_values(self.obs)
        self._episode_start_t = self.t

    def epsilon(self, t: int) -> float:
        return 1.0 if t < self.train_start else epsilon_at(t, self.cfg)

    def checkpoint(self) -> Checkpoint:
        """Snapshot of the learner and RNG streams. The running episode is not stored;
        a resumed trainer starts the next episode with an empty replay memory."""
        adam = self.agent.adam
        return Checkpoint(self.kind, self.cfg, self.env_config, clone_weights(self.agent.online),
                          clone_weights(self.agent.target) if self.agent.target is not None else None,
                          AdamState([m.copy() for m in adam.m], [v.copy() for v in adam.v], adam.k),
                          self.t, self.episode, self.env_stream.state, self.prng.state)

    def step(self) -> tuple:
        eps = self.epsilon(self.t)
        if self.t == self._episode_start_t:
            action = Action.NOOP
        else:
            action = select_action(self.q, eps, self.prng)
        self.state, res = step(self.state, action, self.env_config)
        next_obs = push_frame(self.obs, render_frame(self.state, self.env_config))
        q_next = self.agent.q_values(next_obs)
        self.buffer.push(Transition(pack_observation(self.obs), int(action), res.reward,
                                    pack_observation(next_obs), res.terminal, greedy(q_next)))
        loss = None
        if self.t >= self.train_start:
            loss = self.agent.train_batch(self.buffer, self.prng, eps)
        row = (self.t, self.episode, eps, loss, res.score, "death" if res.terminal else "step")
        self.log.steps.append(row)
        self.t += 1
        if res.terminal:
            self.log.episodes.append(EpisodeRecord(self.episode, res.score,
                                                   self.t - self._episode_start_t, self.t))
            self.episode += 1
            self._new_episode()
        else:
            self.obs, self.q = next_obs, q_next
        return row

    def run(self, max_timesteps: int, metrics_path=None, checkpoint_path=None,
            checkpoint_every: int = 0, progress: Callable[[int], None] | None = None) -> MetricsLog:
        """Advance until global timestep ``max_timesteps``.

        The metrics file is written row by row and flushed at each episode end; on an
        exception the file is flushed and closed before re-raising.
        """
        fh = None
        if metrics_path is not None:
            fh = open(metrics_path, "w", encoding="utf-8", newline="")
            fh.write(METRICS_HEADER)
        try:
            while self.t < max_timesteps:
                row = self.step()
                if fh is not None:
                    fh.write(MetricsLog.format_row(row))
                    if row[5] == "death":
                        fh.flush()
                if checkpoint_path and checkpoint_every and self.t % checkpoint_every == 0:
                    checkpoint_save(checkpoint_path, self.checkpoint())
                if progress is not None:
                    progress(self.t)
        finally:
            if fh is not None:
                fh.close()
        return self.log

    def partial_length(self) -> int:
        return self.t - self._episode_start_t


def run_training(kind: AgentKind | str, seed: int, cfg: TrainConfig | None = None,
                 max_timesteps: int = 10_000, env_config: EnvConfig | None = None,
                 metrics_path=None) -> MetricsLog:
    cfg = (cfg or TrainConfig()).validate()
    if max_timesteps <= cfg.observe_steps:
        raise ValueError("max_timesteps must exceed observe_steps")
    trainer = Trainer(kind, seed, cfg, env_config)
    return trainer.run(max_timesteps, metrics_path=metrics_path)


# --------------------------------------------------------------------------- evaluation

def episode_seeds(seed: int, episodes: int) -> list[int]:
    stream = SplitMix64(derive_seeds(seed)[1])
    return [stream.next() for _ in range(episodes)]


def play_episode(policy: Callable, game_seed: int, env_config: EnvConfig | None = None,
                 max_ticks: int = 10_000, on_frame: Callable | None = None) -> int:
    """Run one episode with ``policy(obs, tick) -> Action``; returns the final score."""
    env_config = env_config or EnvConfig()
    state = new_env(game_seed, env_config)
    frame = render_frame(state, env_config)
    obs = init_stack(frame)
    if on_frame is not None:
        on_frame(frame)
    while state.alive and state.tick < max_ticks:
        action = Action.NOOP if state.tick == 0 else policy(obs, state.tick)
        state, _ = step(state, action, env_config)
        frame = render_frame(state, env_config)
        obs = push_frame(obs, frame)
        if on_frame is not None:
            on_frame(frame)
    return state.score


def evaluate_greedy(weights: QNetwork, seed: int, episodes: int = 1,
                    env_config: EnvConfig | None = None, max_ticks: int = 10_000) -> list[int]:
    """Scores of the greedy (epsilon 0) policy; no learning, no replay."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")

    def policy(obs, _tick):
        return Action(greedy(weights.forward(obs[None])[0]))

    return [play_episode(policy, s, env_config, max_ticks) for s in episode_seeds(seed, episodes)]


def evaluate_random(seed: int, episodes: int = 1, p_jump: float = 0.5,
                    env_config: EnvConfig | None = None, max_ticks: int = 10_000) -> list[int]:
    """Scores of a coin-flip policy on the same games :func:`evaluate_greedy` plays."""
    coin = SplitMix64(derive_seeds(seed)[2])

    def policy(_obs, _tick):
        return Action.JUMP if coin.uniform() < p_jump else Action.NOOP

    return [play_episode(policy, s, env_config, max_ticks) for s in episode_seeds(seed, episodes)]

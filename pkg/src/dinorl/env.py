"""Headless, deterministic Dino Run simulation.

Coordinates are in native canvas pixels. ``x`` grows to the right, heights are measured
upwards from the ground line. Obstacles scroll left at the current speed; the dinosaur
stays at a fixed ``x`` and can only jump or do nothing.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, fields, replace

from .errors import ConfigError, UsageError
from .prng import prng_next


class Action(enum.IntEnum):
    NOOP = 0
    JUMP = 1


class ObstacleKind(enum.IntEnum):
    SMALL_CACTUS = 0
    LARGE_CACTUS = 1
    BIRD_LOW = 2
    BIRD_HIGH = 3


# (w, h, y_bottom) per kind
OBSTACLE_GEOMETRY = {
    ObstacleKind.SMALL_CACTUS: (15, 30, 0),
    ObstacleKind.LARGE_CACTUS: (25, 35, 0),
    ObstacleKind.BIRD_LOW: (20, 15, 20),
    ObstacleKind.BIRD_HIGH: (20, 15, 70),
}

# Obstacles a grounded dinosaur cannot survive.
JUMP_MANDATORY = (ObstacleKind.SMALL_CACTUS, ObstacleKind.LARGE_CACTUS, ObstacleKind.BIRD_LOW)


@dataclass(frozen=True)
class EnvConfig:
    canvas_width: int = 600
    canvas_height: int = 150
    dino_x: int = 50
    dino_w: int = 20
    dino_h: int = 40
    jump_v0: float = 10
    gravity: float = 1
    base_speed: float = 6
    speed_step: float = 0.5
    speed_interval: int = 100
    speed_cap: float = 13
    gap_min_base: int = 60
    gap_per_speed: float = 10
    gap_max_extra: int = 200
    reward_alive: float = 0.1
    reward_death: float = -1.0

    def validate(self) -> "EnvConfig":
        positive = ("canvas_width", "canvas_height", "dino_x", "dino_w", "dino_h", "jump_v0",
                    "gravity", "base_speed", "speed_step", "speed_interval", "speed_cap",
                    "gap_min_base", "gap_per_speed", "gap_max_extra")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)!r}")
        if not self.dino_x + self.dino_w < self.canvas_width:
            raise ConfigError("dino_x + dino_w must be < canvas_width")
        if not self.base_speed <= self.speed_cap:
            raise ConfigError(f"base_speed ({self.base_speed}) must be <= speed_cap ({self.speed_cap})")
        tallest = max(OBSTACLE_GEOMETRY[k][1] + OBSTACLE_GEOMETRY[k][2] for k in JUMP_MANDATORY)
        if not self.jump_v0 * (self.jump_v0 + 1) / 2 > tallest:
            raise ConfigError(f"jump apex jump_v0*(jump_v0+1)/2 must exceed {tallest}")
        return self

    def to_text(self) -> str:
        # floats are written canonically so that text -> config -> text is stable
        return "".join(f"{f.name}={float(getattr(self, f.name)) if f.type == 'float' else getattr(self, f.name)!r}\n"
                       for f in fields(self))


@dataclass(frozen=True)
class Obstacle:
    kind: ObstacleKind
    x: float
    w: int
    h: int
    y_bottom: int

    @classmethod
    def make(cls, kind: ObstacleKind, x: float) -> "Obstacle":
        w, h, y = OBSTACLE_GEOMETRY[ObstacleKind(kind)]
        return cls(ObstacleKind(kind), x, w, h, y)


@dataclass(frozen=True)
class GameState:
    dino_y: float = 0
    dino_vy: float = 0
    airborne: bool = False
    obstacles: tuple[Obstacle, ...] = ()
    speed: float = 6
    score: int = 0
    tick: int = 0
    prng: int = 0
    alive: bool = True
    # random part of the gap before the next spawn, drawn right after each spawn
    gap_extra: int = 0


@dataclass(frozen=True)
class StepResult:
    reward: float
    terminal: bool
    score: int


def aabb_overlap(a, b) -> bool:
    """Open-interval overlap of two ``(x, y_bottom, w, h)`` rectangles.

    Rectangles that only share an edge do not overlap.
    """
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    return ax < bx + bw and bx < ax + aw and ay < by + bh and by < ay + ah


def speed_for_score(score: int, config: EnvConfig) -> float:
    return min(config.speed_cap, config.base_speed + (score // config.speed_interval) * config.speed_step)


def spawn_gap(state: GameState, config: EnvConfig) -> float:
    return config.gap_min_base + config.gap_per_speed * state.speed + state.gap_extra


def new_env(seed: int, config: EnvConfig | None = None) -> GameState:
    config = (config or EnvConfig()).validate()
    value, prng = prng_next(seed)
    return GameState(speed=config.base_speed, prng=prng, gap_extra=value % config.gap_max_extra)


def dino_box(state: GameState, config: EnvConfig):
    return (config.dino_x, state.dino_y, config.dino_w, config.dino_h)


def step(state: GameState, action: Action, config: EnvConfig | None = None) -> tuple[GameState, StepResult]:
    if config is None:
        config = EnvConfig()
    if not state.alive:
        raise UsageError("step() called on a terminated game; call new_env() first")

    y, vy, airborne = state.dino_y, state.dino_vy, state.airborne
    if action == Action.JUMP and not airborne:
        vy = config.jump_v0
        airborne = True
    if airborne:
        y = max(0, y + vy)
        vy = vy - config.gravity
        if y == 0:
            airborne = False
            vy = 0

    speed = state.speed
    obstacles = [replace(o, x=o.x - speed) for o in state.obstacles]
    obstacles = [o for o in obstacles if o.x + o.w >= 0]

    prng, gap_extra = state.prng, state.gap_extra
    gap = config.gap_min_base + config.gap_per_speed * speed + gap_extra
    if not obstacles or obstacles[-1].x + obstacles[-1].w < config.canvas_width - gap:
        value, prng = prng_next(prng)
        obstacles.append(Obstacle.make(ObstacleKind(value % 4), float(config.canvas_width)))
        value, prng = prng_next(prng)
        gap_extra = value % config.gap_max_extra

    box = (config.dino_x, y, config.dino_w, config.dino_h)
    hit = any(aabb_overlap(box, (o.x, o.y_bottom, o.w, o.h)) for o in obstacles)
    score = state.score if hit else state.score + 1
    new_state = GameState(
        dino_y=y, dino_vy=vy, airborne=airborne, obstacles=tuple(obstacles),
        speed=speed if hit else speed_for_score(score, config),
        score=score, tick=state.tick + 1, prng=prng, alive=not hit, gap_extra=gap_extra,
    )
    reward = config.reward_death if hit else config.reward_alive
    return new_state, StepResult(reward, hit, score)


def scripted_action(state: GameState, jump_lead_ticks: float, config: EnvConfig) -> Action:
    """Jump when the nearest unpassed jump-mandatory obstacle is within ``lead`` ticks."""
    front = config.dino_x + config.dino_w
    ahead = [o for o in state.obstacles if o.kind in JUMP_MANDATORY and o.x + o.w > config.dino_x]
    if not ahead:
        return Action.NOOP
    nearest = min(ahead, key=lambda o: o.x)
    if nearest.x - front <= jump_lead_ticks * state.speed:
        return Action.JUMP
    return Action.NOOP


def scripted_clear(seed: int, jump_lead_ticks: float, max_ticks: int = 10_000,
                   config: EnvConfig | None = None) -> int:
    """Survival length of the hand-written jump-timing policy (capped at ``max_ticks``)."""
    config = config or EnvConfig()
    state = new_env(seed, config)
    while state.alive and state.tick < max_ticks:
        state, _ = step(state, scripted_action(state, jump_lead_ticks, config), config)
    return state.score


def random_policy_survival(seed: int, p_jump: float = 0.5, max_ticks: int = 10_000,
                           config: EnvConfig | None = None) -> int:
    """Survival length of a coin-flip policy; the coin uses its own stream derived from ``seed``."""
    config = config or EnvConfig()
    state = new_env(seed, config)
    coin = prng_next(seed ^ 0x5DEECE66D)[0]
    while state.alive and state.tick < max_ticks:
        u, coin = prng_next(coin)
        action = Action.JUMP if u / 2.0**64 < p_jump else Action.NOOP
        state, _ = step(state, action, config)
    return state.score

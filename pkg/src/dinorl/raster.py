"""Rendering of game states into the 80x80 grayscale frames fed to the Q-network."""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from .env import EnvConfig, GameState

FRAME_SIZE = 80
STACK_DEPTH = 4

SKY = 0.0
GROUND = 0.3
DINO = 0.6
OBSTACLE = 1.0

# palette codes used by the compact replay encoding
PALETTE = np.array([SKY, GROUND, DINO, OBSTACLE], dtype=np.float32)


@lru_cache(maxsize=8)
def sample_maps(canvas_width: int, canvas_height: int, size: int = FRAME_SIZE):
    """Native column per destination column, and native height per destination row.

    Destination pixel centres are mapped into native space and the nearest native pixel
    (the one whose unit cell contains the centre) is sampled. Row 0 is the top of the
    canvas, so native row ``r`` covers heights ``[H-1-r, H-r)`` above the ground.
    """
    i = np.arange(size)
    cols = np.floor((i + 0.5) * canvas_width / size).astype(np.int64)
    rows = np.floor((i + 0.5) * canvas_height / size).astype(np.int64)
    heights = canvas_height - 1 - rows
    cols.setflags(write=False)
    heights.setflags(write=False)
    return cols, heights


def _fill(frame, cols, heights, x, y_bottom, w, h, value):
    x0 = math.floor(x)
    y0 = math.floor(y_bottom)
    cmask = (cols >= x0) & (cols < x0 + w)
    rmask = (heights >= y0) & (heights < y0 + h)
    frame[np.ix_(rmask, cmask)] = value


def render_frame(state: GameState, config: EnvConfig | None = None, draw_dino: bool = True) -> np.ndarray:
    """Render ``state`` as an 80x80 float32 frame with values in [0, 1].

    Draw order: sky, ground line, obstacles, dinosaur. ``draw_dino=False`` is a test hook.
    """
    config = config or EnvConfig()
    cols, heights = sample_maps(config.canvas_width, config.canvas_height)
    frame = np.zeros((FRAME_SIZE, FRAME_SIZE), dtype=np.float32)
    frame[heights == 0, :] = GROUND
    for o in state.obstacles:
        _fill(frame, cols, heights, o.x, o.y_bottom, o.w, o.h, OBSTACLE)
    if draw_dino:
        _fill(frame, cols, heights, config.dino_x, state.dino_y, config.dino_w, config.dino_h, DINO)
    return frame


def init_stack(frame: np.ndarray) -> np.ndarray:
    """Observation made of four copies of ``frame``; shape (80, 80, 4), oldest first."""
    return np.repeat(np.asarray(frame, dtype=np.float32)[:, :, None], STACK_DEPTH, axis=2)


def push_frame(obs: np.ndarray, frame: np.ndarray) -> np.ndarray:
    """Drop the oldest frame and append ``frame`` as the newest. ``obs`` is left untouched."""
    out = np.empty_like(obs)
    out[:, :, :-1] = obs[:, :, 1:]
    out[:, :, -1] = frame
    return out


def pack_observation(obs: np.ndarray) -> np.ndarray:
    """Lossless 1-byte-per-pixel encoding of a rendered observation.

    Each of the four stacked frames contributes a 2-bit palette code. Raises ``ValueError``
    for intensities outside the palette.
    """
    codes = np.searchsorted(PALETTE, obs)
    codes = np.minimum(codes, len(PALETTE) - 1)
    if not np.array_equal(PALETTE[codes], obs):
        raise ValueError("observation contains intensities outside the render palette")
    codes = codes.astype(np.uint8)
    return codes[..., 0] | (codes[..., 1] << 2) | (codes[..., 2] << 4) | (codes[..., 3] << 6)


def unpack_observation(packed: np.ndarray) -> np.ndarray:
    """Inverse of :func:`pack_observation`; works on a single array or a batch."""
    shifts = np.array([0, 2, 4, 6], dtype=np.uint8)
    codes = (packed[..., None] >> shifts) & 3
    return PALETTE[codes]


def write_pgm(frame: np.ndarray, path) -> None:
    """Write a frame as binary PGM (P5, maxval 255, intensities rounded half-up)."""
    data = np.floor(np.asarray(frame, dtype=np.float64) * 255.0 + 0.5).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())

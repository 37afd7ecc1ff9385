"""Toy platformer environment, policies, episode collection, coverage stats.

The bundled environment is a deterministic 16x16-tile side view rendered at
64x64 (4 px tiles). Seven discrete actions mirror a platformer action set:
0 no-op, 1 left, 2 right, 3 jump, 4 jump-left, 5 jump-right, 6 down. Floor
heights are procedurally generated from the seed; hard levels add pits and
taller steps. A coin at the far right ends the episode with reward +10,
falling into a pit ends it with 0, and episodes hard-cap at 500 steps.

A real Coinrun environment can be attached through the same interface via
:class:`CoinrunAdapter` when the procgen package is installed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .data import (
    Episode,
    EpisodeDataset,
    VELOCITY_OVERLAY_REGIONS,
    episode_dir,
    make_splits,
    write_episode,
)
from .errors import StateError, ValidationError

log = logging.getLogger(__name__)

NUM_ACTIONS = 7
ACTION_NOOP, ACTION_LEFT, ACTION_RIGHT = 0, 1, 2
ACTION_JUMP, ACTION_JUMP_LEFT, ACTION_JUMP_RIGHT, ACTION_DOWN = 3, 4, 5, 6

WORLD_TILES = 16
TILE_PX = 4
FRAME_PX = WORLD_TILES * TILE_PX  # 64
MAX_STEPS = 500
PIT = -100  # floor height marking a bottomless column

AGENT_BODY = np.array([200, 40, 40], dtype=np.int16)
AGENT_HEAD = np.array([255, 200, 160], dtype=np.int16)
COIN_COLOR = np.array([250, 220, 40], dtype=np.int16)


@dataclass
class EnvStep:
    frame: np.ndarray  # (64, 64, 3) uint8
    reward: float
    done: bool
    info: dict = field(default_factory=dict)


@dataclass(frozen=True)
class PolicySpec:
    kind: str  # random | trained | scripted
    checkpoint: str | None = None

    def __post_init__(self):
        if self.kind == "trained" and not self.checkpoint:
            raise ValidationError("trained policy requires a checkpoint reference")


# small discrete palette pools keep levels visually diverse but learnable
SKY_CHOICES = np.array([
    [150, 200, 235], [170, 185, 230], [200, 170, 220],
    [230, 180, 160], [140, 215, 210], [185, 205, 180],
], dtype=np.int16)
GROUND_CHOICES = np.array([
    [120, 85, 60], [95, 95, 100], [140, 110, 70], [80, 70, 90],
], dtype=np.int16)
GRASS_CHOICES = np.array([
    [60, 170, 70], [40, 140, 100], [120, 160, 40],
], dtype=np.int16)


def _level_palette(rng: np.random.Generator) -> dict:
    return {
        "sky": SKY_CHOICES[int(rng.integers(len(SKY_CHOICES)))],
        "ground": GROUND_CHOICES[int(rng.integers(len(GROUND_CHOICES)))],
        "grass": GRASS_CHOICES[int(rng.integers(len(GRASS_CHOICES)))],
    }


def _generate_floor(rng: np.random.Generator, difficulty: str) -> np.ndarray:
    """Floor heights per column; pits are PIT. First columns stay flat (spawn)."""
    floor = np.full(WORLD_TILES, 3, dtype=np.int64)
    h = 3
    if difficulty == "easy":
        for x in range(3, WORLD_TILES):
            h = int(np.clip(h + rng.choice([-1, 0, 0, 1]), 2, 6))
            floor[x] = h
    else:
        for x in range(3, WORLD_TILES):
            h = int(np.clip(h + rng.choice([-2, -1, 0, 1, 2]), 2, 8))
            floor[x] = h
        # carve 1-2 pits, never adjacent to the spawn or the coin column
        n_pits = int(rng.integers(1, 3))
        candidates = list(range(5, WORLD_TILES - 2))
        rng.shuffle(candidates)
        placed: list[int] = []
        for c in candidates:
            if len(placed) >= n_pits:
                break
            if all(abs(c - p) > 2 for p in placed):
                placed.append(c)
                floor[c] = PIT
    return floor


class ToyPlatformer:
    """Deterministic toy platformer; bit-identical frames for a fixed seed."""

    name = "toy"

    def __init__(self, velocity_overlay: bool = False, max_steps: int = MAX_STEPS):
        if max_steps > MAX_STEPS:
            raise ValidationError(f"max_steps cannot exceed {MAX_STEPS}")
        self.velocity_overlay = velocity_overlay
        self.max_steps = max_steps
        self._seed = None
        self._done = True

    def reset(self, seed: int, difficulty: str = "easy") -> EnvStep:
        if difficulty not in ("easy", "hard"):
            raise ValidationError(f"difficulty must be easy or hard, got {difficulty!r}")
        rng = np.random.default_rng([int(seed), 0 if difficulty == "easy" else 1])
        self._seed = int(seed)
        self.difficulty = difficulty
        self.palette = _level_palette(rng)
        self.floor = _generate_floor(rng, difficulty)
        self.coin_x = WORLD_TILES - 1
        self.x, self.y = 0, int(self.floor[0])
        self.vx, self.vy = 0, 0
        self.steps = 0
        self.max_x = self.x
        self.visited = {self.x}
        self._done = False
        return EnvStep(self.render(), 0.0, False, self._info())

    def _info(self) -> dict:
        return {
            "x": self.x, "y": self.y, "vx": self.vx, "vy": self.vy,
            "max_x": self.max_x, "seed": self._seed, "difficulty": self.difficulty,
        }

    def _grounded(self) -> bool:
        return self.y == self.floor[self.x] and self.vy <= 0

    def step(self, action: int) -> EnvStep:
        if self._done:
            raise StateError("step() called after episode end; call reset()")
        if not (0 <= int(action) < NUM_ACTIONS):
            raise ValidationError(f"action must be in [0, {NUM_ACTIONS}), got {action}")
        action = int(action)

        dx = -1 if action in (ACTION_LEFT, ACTION_JUMP_LEFT) else \
            1 if action in (ACTION_RIGHT, ACTION_JUMP_RIGHT) else 0
        grounded = self._grounded()

        # horizontal move with walls and 1-cell auto step-up
        self.vx = 0
        nx = int(np.clip(self.x + dx, 0, WORLD_TILES - 1))
        if nx != self.x:
            fh = self.floor[nx]
            if self.y >= fh:
                self.vx = dx
                self.x = nx
            elif grounded and fh == self.y + 1:
                self.vx = dx
                self.x, self.y = nx, int(fh)
            # else blocked by a wall

        # vertical move: jump impulse 3, gravity 1/step, terminal fall speed 2
        grounded = self._grounded()
        if grounded:
            self.vy = 3 if action in (ACTION_JUMP, ACTION_JUMP_LEFT, ACTION_JUMP_RIGHT) else 0
        elif action == ACTION_DOWN:
            self.vy = -2
        if not grounded or self.vy > 0:
            ny = self.y + self.vy
            if self.vy < 0 and ny <= self.floor[self.x]:
                self.y, self.vy = int(self.floor[self.x]), 0
            else:
                self.y = ny
                self.vy = max(self.vy - 1, -2)

        self.steps += 1
        self.max_x = max(self.max_x, self.x)
        self.visited.add(self.x)

        reward = 0.0
        if self.y < 0:
            self._done = True  # fell into a pit
        elif self.x + 1 >= self.coin_x:  # the 2-tile-wide body touches the coin
            reward = 10.0
            self._done = True
        elif self.steps >= self.max_steps:
            self._done = True
        return EnvStep(self.render(), reward, self._done, self._info())

    def render(self) -> np.ndarray:
        img = np.empty((FRAME_PX, FRAME_PX, 3), dtype=np.int16)
        pal = self.palette
        img[:] = pal["sky"][None, None, :]

        for tx in range(WORLD_TILES):
            fh = self.floor[tx]
            if fh <= 0:
                continue
            px = tx * TILE_PX
            for ty in range(int(fh)):
                py = (WORLD_TILES - 1 - ty) * TILE_PX
                shade = 12 if (tx + ty) % 2 == 0 else 0
                color = pal["grass"] if ty == fh - 1 else pal["ground"] + shade
                img[py:py + TILE_PX, px:px + TILE_PX] = color

        self._draw_tile(img, self.coin_x, int(self.floor[self.coin_x]), COIN_COLOR, coin=True)
        self._draw_agent(img)

        if self.velocity_overlay:
            for (r0, r1, c0, c1), v in zip(VELOCITY_OVERLAY_REGIONS, (self.vx, self.vy)):
                v = int(np.clip(v, -3, 3))
                img[r0:r1, c0:c1] = (v + 3) * 255 // 6
        return np.clip(img, 0, 255).astype(np.uint8)

    def _draw_tile(self, img, tx, ty, color, coin=False):
        if not (0 <= ty < WORLD_TILES and 0 <= tx < WORLD_TILES):
            return
        py, px = (WORLD_TILES - 1 - ty) * TILE_PX, tx * TILE_PX
        if coin:  # diamond: skip corners
            img[py + 1:py + 3, px:px + 4] = color
            img[py:py + 4, px + 1:px + 3] = color
        else:
            img[py:py + TILE_PX, px:px + TILE_PX] = color

    def _draw_agent(self, img):
        # 2x2 tiles (8x8 px): the collision column is the left one; the body
        # spans two columns so the sprite fills whole token patches
        for dx in (0, 1):
            self._draw_tile(img, self.x + dx, self.y, AGENT_BODY)
            self._draw_tile(img, self.x + dx, self.y + 1, AGENT_HEAD)
        if 0 <= self.y + 1 < WORLD_TILES:
            py, px = (WORLD_TILES - 2 - self.y) * TILE_PX, self.x * TILE_PX
            img[py + 2, px + 2] = np.array([30, 30, 30], dtype=np.int16)
            if self.x + 1 < WORLD_TILES:
                img[py + 2, px + 6] = np.array([30, 30, 30], dtype=np.int16)


class CoinrunAdapter:
    """Seam for the real Coinrun environment behind the same interface."""

    name = "coinrun"

    def __init__(self, velocity_overlay: bool = False, max_steps: int = MAX_STEPS):
        try:
            import procgen  # noqa: F401
        except ImportError as e:
            raise ValidationError(
                "the coinrun adapter requires the optional 'procgen' package"
            ) from e
        raise NotImplementedError("coinrun adapter wiring is environment-specific")


def make_env(name: str, velocity_overlay: bool = False, max_steps: int = MAX_STEPS):
    if name == "toy":
        return ToyPlatformer(velocity_overlay=velocity_overlay, max_steps=max_steps)
    if name == "coinrun":
        return CoinrunAdapter(velocity_overlay=velocity_overlay, max_steps=max_steps)
    raise ValidationError(f"unknown environment {name!r}")


def random_policy(rng: np.random.Generator) -> int:
    """Uniform draw over the 7 actions."""
    return int(rng.integers(NUM_ACTIONS))


def make_policy_fn(spec: PolicySpec, rng: np.random.Generator) -> Callable[[np.ndarray], int]:
    if spec.kind == "random":
        return lambda frame: random_policy(rng)
    if spec.kind == "trained":
        from .agents import load_policy
        policy = load_policy(spec.checkpoint)
        return lambda frame: policy.act(frame, rng)
    raise ValidationError(f"unsupported policy kind {spec.kind!r}")


@dataclass
class CollectionReport:
    episodes: int
    frames: int
    mean_length: float
    mean_max_x: float
    out: str

    def to_dict(self) -> dict:
        return {"episodes": self.episodes, "frames": self.frames,
                "mean_length": self.mean_length, "mean_max_x": self.mean_max_x,
                "out": self.out}


def collect_episodes(
    env,
    policy: PolicySpec,
    n: int,
    out: Path,
    velocity_overlay: bool = False,
    difficulty: str = "hard",
    seed: int = 0,
    max_steps: int | None = None,
    val_fraction: float = 0.10,
) -> CollectionReport:
    """Run n episodes and persist them, then write the split manifest.

    Episode seeds are seed, seed+1, ... so matched-seed comparisons across
    policies see the same levels.
    """
    out = Path(out)
    rng = np.random.default_rng(seed)
    env.velocity_overlay = velocity_overlay
    if max_steps is not None:
        env.max_steps = max_steps
    policy_fn = make_policy_fn(policy, rng)

    total_frames, lengths, max_xs = 0, [], []
    written = 0
    try:
        for i in range(n):
            ep_seed = seed + i
            step = env.reset(ep_seed, difficulty=difficulty)
            frames, actions = [step.frame], []
            while not step.done:
                a = policy_fn(step.frame)
                step = env.step(a)
                actions.append(a)
                frames.append(step.frame)
            ep = Episode(
                frames=np.stack(frames),
                actions=np.asarray(actions, dtype=np.int64),
                seed=ep_seed,
                difficulty=difficulty,
                policy=policy.kind,
                env=env.name,
                velocity_overlay=velocity_overlay,
            )
            write_episode(ep, episode_dir(out, i))
            written += 1
            total_frames += ep.T
            lengths.append(ep.T)
            max_xs.append(step.info["max_x"])
    except OSError as e:
        raise RuntimeError(
            f"collection aborted after {written}/{n} episodes: {e}"
        ) from e

    if written >= 10:
        make_splits(out, val_fraction=val_fraction, seed=seed)
    return CollectionReport(
        episodes=written,
        frames=total_frames,
        mean_length=float(np.mean(lengths)),
        mean_max_x=float(np.mean(max_xs)),
        out=str(out),
    )


def replay_episode(ep: Episode) -> dict:
    """Re-run a stored toy episode's actions to recover trajectory statistics."""
    if ep.env != "toy":
        raise ValidationError(f"coverage replay only supports the toy env, got {ep.env!r}")
    env = ToyPlatformer(velocity_overlay=ep.velocity_overlay)
    step = env.reset(ep.seed, difficulty=ep.difficulty)
    for a in ep.actions:
        step = env.step(int(a))
    return {"max_x": step.info["max_x"], "columns_visited": len(env.visited),
            "length": ep.T}


def coverage_metric(dataset: EpisodeDataset | Path) -> dict:
    """Exploration statistics of a dataset: how far and wide episodes range."""
    if not isinstance(dataset, EpisodeDataset):
        dataset = EpisodeDataset(dataset)
    ids = dataset.split_ids("all")
    if not ids:
        raise ValidationError("coverage metric needs a non-empty dataset")
    stats = [replay_episode(dataset.episode(i)) for i in ids]
    return {
        "mean_max_x": float(np.mean([s["max_x"] for s in stats])),
        "distinct_tile_columns_visited": float(np.mean([s["columns_visited"] for s in stats])),
        "mean_episode_length": float(np.mean([s["length"] for s in stats])),
    }

"""Bit-exact episode storage, split management, batching, velocity masking.

Layout: `<root>/all/episode_%06d/{frames.raw, meta.json}` plus a
`<root>/manifest.json` assigning episode ids to train/val/test splits.
`frames.raw` is the raw row-major T*H*W*3 byte stream; `meta.json` carries
everything needed to interpret and replay it.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .errors import CorruptionError, ValidationError

log = logging.getLogger(__name__)

EPISODE_VERSION = "1"
MAX_EPISODE_FRAMES = 500

# (row_start, row_end, col_start, col_end) of the two velocity overlay patches
VELOCITY_OVERLAY_REGIONS = ((0, 4, 0, 4), (0, 4, 4, 8))


@dataclass
class Episode:
    """One recorded environment run."""

    frames: np.ndarray  # (T, H, W, 3) uint8
    actions: np.ndarray  # (T-1,) integers in [0, 7)
    seed: int
    difficulty: str
    policy: str
    env: str
    velocity_overlay: bool

    def __post_init__(self):
        self.frames = np.ascontiguousarray(self.frames, dtype=np.uint8)
        self.actions = np.asarray(self.actions, dtype=np.int64)
        T = self.frames.shape[0]
        if self.frames.ndim != 4 or self.frames.shape[-1] != 3:
            raise ValidationError(f"frames must be (T, H, W, 3), got {self.frames.shape}")
        if not (1 <= T <= MAX_EPISODE_FRAMES):
            raise ValidationError(f"episode length {T} outside [1, {MAX_EPISODE_FRAMES}]")
        if self.actions.shape != (T - 1,):
            raise ValidationError(
                f"expected {T - 1} actions for {T} frames, got {self.actions.shape}"
            )
        if T > 1 and (self.actions.min() < 0 or self.actions.max() >= 7):
            raise ValidationError("actions must lie in [0, 7)")

    @property
    def T(self) -> int:
        return int(self.frames.shape[0])


def frames_to_float(frames: np.ndarray) -> np.ndarray:
    """uint8 frames -> float32 in [0, 1]."""
    return frames.astype(np.float32) / 255.0


def frames_to_uint8(frames) -> np.ndarray:
    """float frames in [0, 1] (numpy or torch) -> uint8, the canonical rounding."""
    if isinstance(frames, torch.Tensor):
        frames = frames.detach().cpu().numpy()
    return np.clip(np.rint(np.asarray(frames, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def episode_dir(root: Path, index: int) -> Path:
    return Path(root) / "all" / f"episode_{index:06d}"


def write_episode(ep: Episode, directory: Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "frames.raw").write_bytes(ep.frames.tobytes())
    T, H, W, _ = ep.frames.shape
    meta = {
        "version": EPISODE_VERSION,
        "T": T,
        "H": H,
        "W": W,
        "actions": [int(a) for a in ep.actions],
        "seed": int(ep.seed),
        "difficulty": ep.difficulty,
        "policy": ep.policy,
        "env": ep.env,
        "velocity_overlay": bool(ep.velocity_overlay),
    }
    (directory / "meta.json").write_text(json.dumps(meta), encoding="utf-8")


def read_episode(directory: Path) -> Episode:
    directory = Path(directory)
    meta = json.loads((directory / "meta.json").read_text(encoding="utf-8"))
    T, H, W = int(meta["T"]), int(meta["H"]), int(meta["W"])
    raw = (directory / "frames.raw").read_bytes()
    expected = T * H * W * 3
    if len(raw) != expected:
        raise CorruptionError(
            f"{directory / 'frames.raw'}: expected {expected} bytes for "
            f"T={T} H={H} W={W}, found {len(raw)}"
        )
    frames = np.frombuffer(raw, dtype=np.uint8).reshape(T, H, W, 3)
    return Episode(
        frames=frames,
        actions=np.asarray(meta["actions"], dtype=np.int64),
        seed=int(meta["seed"]),
        difficulty=str(meta["difficulty"]),
        policy=str(meta["policy"]),
        env=str(meta["env"]),
        velocity_overlay=bool(meta["velocity_overlay"]),
    )


def list_episode_ids(root: Path) -> list[int]:
    root = Path(root)
    ids = []
    for sub in root.glob("*/episode_*"):
        if (sub / "meta.json").exists():
            ids.append(int(sub.name.split("_")[1]))
    return sorted(ids)


def find_episode_dir(root: Path, index: int) -> Path:
    root = Path(root)
    name = f"episode_{index:06d}"
    for sub in root.iterdir():
        cand = sub / name
        if cand.is_dir():
            return cand
    raise ValidationError(f"episode {index} not found under {root}")


def make_splits(root: Path, val_fraction: float = 0.10, seed: int = 0) -> dict:
    """Deterministic shuffled train/val assignment, written to manifest.json."""
    root = Path(root)
    ids = list_episode_ids(root)
    if len(ids) < 10:
        raise ValidationError(f"need at least 10 episodes to split, found {len(ids)}")
    n_val = int(round(len(ids) * val_fraction))
    if n_val < 1:
        raise ValidationError(
            f"val_fraction {val_fraction} yields an empty validation split for {len(ids)} episodes"
        )
    order = np.array(ids)
    np.random.default_rng(seed).shuffle(order)
    val = sorted(int(i) for i in order[:n_val])
    train = sorted(int(i) for i in order[n_val:])
    manifest = {
        "version": "1",
        "seed": int(seed),
        "counts": {"train": len(train), "val": len(val), "test": 0},
        "splits": {"train": train, "val": val, "test": []},
    }
    (root / "manifest.json").write_text(json.dumps(manifest), encoding="utf-8")
    return manifest


def load_manifest(root: Path) -> dict:
    return json.loads((Path(root) / "manifest.json").read_text(encoding="utf-8"))


class EpisodeDataset:
    """Episode collection with an in-memory cache and split-aware sampling."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.manifest = load_manifest(self.root) if (self.root / "manifest.json").exists() else None
        self._cache: dict[int, Episode] = {}
        self._warned_short: set[int] = set()

    def split_ids(self, split: str) -> list[int]:
        if split == "all" or self.manifest is None:
            return list_episode_ids(self.root)
        if split not in self.manifest["splits"]:
            raise ValidationError(f"unknown split {split!r}")
        return list(self.manifest["splits"][split])

    def episode(self, index: int) -> Episode:
        if index not in self._cache:
            self._cache[index] = read_episode(find_episode_dir(self.root, index))
        return self._cache[index]


def sample_batch(
    dataset: EpisodeDataset,
    split: str,
    batch_size: int,
    sequence_length: int,
    rng: np.random.Generator,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Uniform episode choice, then a uniform contiguous frame window.

    Episodes shorter than sequence_length are skipped (logged once each).
    Returns frames (B, T, H, W, 3) float32 in [0, 1] and actions (B, T-1) long.
    """
    ids = dataset.split_ids(split)
    if not ids:
        raise ValidationError(f"split {split!r} is empty")
    usable = []
    for i in ids:
        if dataset.episode(i).T >= sequence_length:
            usable.append(i)
        elif i not in dataset._warned_short:
            log.info("episode %d shorter than sequence_length %d; skipped", i, sequence_length)
            dataset._warned_short.add(i)
    if not usable:
        raise ValidationError(
            f"no episode in split {split!r} has at least {sequence_length} frames"
        )
    frames = np.empty((batch_size, sequence_length, *dataset.episode(usable[0]).frames.shape[1:]),
                      dtype=np.float32)
    actions = np.empty((batch_size, sequence_length - 1), dtype=np.int64)
    for b in range(batch_size):
        ep = dataset.episode(usable[int(rng.integers(len(usable)))])
        start = int(rng.integers(ep.T - sequence_length + 1))
        frames[b] = frames_to_float(ep.frames[start:start + sequence_length])
        actions[b] = ep.actions[start:start + sequence_length - 1]
    return torch.from_numpy(frames), torch.from_numpy(actions)


def mask_velocity_regions(frames, has_overlay: bool = True):
    """Zero the velocity overlay rectangles; identity when no overlay present.

    Accepts numpy or torch arrays shaped (..., H, W, 3); returns a copy.
    """
    if not has_overlay:
        return frames
    out = frames.clone() if isinstance(frames, torch.Tensor) else frames.copy()
    for r0, r1, c0, c1 in VELOCITY_OVERLAY_REGIONS:
        out[..., r0:r1, c0:c1, :] = 0
    return out

"""Interactive play service: one duplex channel per session, JSON messages.

Protocol (field names are the wire contract):
  client -> server: {"type": "reset", "checkpoint": str, "seed": int}
                    {"type": "action", "action": int}
  server -> client: {"type": "frame", "step": int, "png_base64": str,
                     "latency_ms": float}
                    {"type": "error", "message": str}

A reset may additionally carry "episode" (dataset episode id) or
"frame_png_base64" (uploaded frame) to choose the initial frame; by default
the toy environment renders one from the seed. Plain endpoints: GET /healthz
and GET /models.
"""

from __future__ import annotations

import base64
import io
import time
import uuid
from pathlib import Path

import numpy as np
import torch
from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from PIL import Image
from starlette.concurrency import run_in_threadpool

from . import dynamics as dyn
from .checkpoints import Bundle, load_checkpoint
from .data import EpisodeDataset, frames_to_float, frames_to_uint8
from .envs import ToyPlatformer


def png_base64_encode(frame_uint8: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(frame_uint8).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def png_base64_decode(payload: str) -> np.ndarray:
    data = base64.b64decode(payload)
    return np.asarray(Image.open(io.BytesIO(data)).convert("RGB"), dtype=np.uint8)


class PlaySession:
    """Token buffer + RNG for one interactive generation stream."""

    def __init__(self, bundle: Bundle, initial_frame: np.ndarray, seed: int):
        self.id = uuid.uuid4().hex
        self.bundle = bundle
        self.generator = torch.Generator().manual_seed(int(seed))
        self.step_count = 0
        frames = torch.from_numpy(frames_to_float(initial_frame[None])[None])  # (1,1,H,W,3)
        with torch.no_grad():
            self.tokens = bundle.tokenizer.encode(frames)  # (1, 1, h, w)
        self.actions: list[int] = []
        self.initial_frame = initial_frame

    def step(self, action: int) -> np.ndarray:
        """Generate the next frame; sequential per session."""
        seq_len = self.bundle.model.config.sequence_length
        # context overflow: evict the oldest frame's tokens (drift accepted)
        while self.tokens.shape[1] + 1 > seq_len:
            self.tokens = self.tokens[:, 1:]
            self.actions = self.actions[1:]
        self.actions.append(int(action))
        acts = torch.tensor([self.actions], dtype=torch.long)
        with torch.no_grad():
            new = dyn.maskgit_decode_frame(
                self.bundle.model, self.tokens, acts, self.generator,
            )
            self.tokens = torch.cat([self.tokens, new.unsqueeze(1)], dim=1)
            decoded = self.bundle.tokenizer.decode(self.tokens)
        self.step_count += 1
        return frames_to_uint8(decoded[0, -1])


class ModelRegistry:
    """Checkpoints the server can play, loaded lazily by name."""

    def __init__(self, paths: dict[str, Path]):
        self.paths = paths
        self._cache: dict[str, Bundle] = {}

    @classmethod
    def from_arg(cls, ckpt: str | Path) -> "ModelRegistry":
        ckpt = Path(ckpt)
        if ckpt.is_dir():
            return cls({p.stem: p for p in sorted(ckpt.glob("*.pt"))})
        return cls({ckpt.stem: ckpt})

    def get(self, name: str) -> Bundle:
        if name not in self.paths:
            raise KeyError(name)
        if name not in self._cache:
            self._cache[name] = load_checkpoint(self.paths[name])
        return self._cache[name]

    def listing(self) -> list[dict]:
        out = []
        for name in self.paths:
            bundle = self.get(name)
            out.append({"name": name, "kind": bundle.kind, "variant": bundle.variant,
                        "step": bundle.step})
        return out


def _initial_frame(message: dict, seed: int, dataset: EpisodeDataset | None) -> np.ndarray:
    if message.get("frame_png_base64"):
        return png_base64_decode(message["frame_png_base64"])
    if message.get("episode") is not None:
        if dataset is None:
            raise ValueError("server was started without a dataset; cannot use episode ids")
        return dataset.episode(int(message["episode"])).frames[0]
    env = ToyPlatformer(velocity_overlay=bool(message.get("velocity_overlay", False)))
    return env.reset(seed, difficulty=str(message.get("difficulty", "easy"))).frame


def create_app(
    checkpoints: str | Path | ModelRegistry,
    max_sessions: int = 8,
    data: str | Path | None = None,
) -> FastAPI:
    registry = (checkpoints if isinstance(checkpoints, ModelRegistry)
                else ModelRegistry.from_arg(checkpoints))
    dataset = EpisodeDataset(data) if data is not None else None
    app = FastAPI(title="playworld")
    live_sessions: dict[str, PlaySession] = {}

    @app.get("/healthz")
    def healthz():
        return {"ok": True}

    @app.get("/models")
    def models():
        return registry.listing()

    async def _frame_message(ws: WebSocket, session: PlaySession,
                             frame: np.ndarray, latency_ms: float):
        await ws.send_json({
            "type": "frame",
            "step": session.step_count,
            "png_base64": png_base64_encode(frame),
            "latency_ms": round(latency_ms, 3),
            "session": session.id,
        })

    async def _error(ws: WebSocket, message: str):
        await ws.send_json({"type": "error", "message": message})

    @app.websocket("/session")
    async def session_channel(ws: WebSocket):
        await ws.accept()
        session: PlaySession | None = None
        try:
            while True:
                message = await ws.receive_json()
                kind = message.get("type")
                if kind == "reset":
                    if session is None and len(live_sessions) >= max_sessions:
                        await _error(ws, f"session limit reached ({max_sessions})")
                        continue
                    name = str(message.get("checkpoint", ""))
                    try:
                        bundle = registry.get(name)
                    except KeyError:
                        await _error(ws, f"checkpoint not found: {name!r}")
                        continue
                    if bundle.kind != "dynamics" or bundle.variant != "guided":
                        await _error(ws, "guided checkpoint required")
                        continue
                    seed = int(message.get("seed", 0))
                    try:
                        frame = _initial_frame(message, seed, dataset)
                    except Exception as e:  # noqa: BLE001 - surfaced to the client
                        await _error(ws, f"initial frame unavailable: {e}")
                        continue
                    start = time.perf_counter()
                    if session is not None:
                        live_sessions.pop(session.id, None)
                    session = await run_in_threadpool(PlaySession, bundle, frame, seed)
                    live_sessions[session.id] = session
                    await _frame_message(ws, session, session.initial_frame,
                                         (time.perf_counter() - start) * 1e3)
                elif kind == "action":
                    if session is None:
                        await _error(ws, "no active session; send a reset first")
                        continue
                    action = message.get("action")
                    if not isinstance(action, int) or not (0 <= action < 7):
                        await _error(ws, f"action must be an integer in [0, 7), got {action!r}")
                        continue
                    start = time.perf_counter()
                    frame = await run_in_threadpool(session.step, action)
                    await _frame_message(ws, session, frame,
                                         (time.perf_counter() - start) * 1e3)
                else:
                    await _error(ws, f"unknown message type: {kind!r}")
        except WebSocketDisconnect:
            pass
        finally:
            if session is not None:
                live_sessions.pop(session.id, None)

    return app


def serve(ckpt: str, port: int = 8000, max_sessions: int = 8,
          data: str | None = None, host: str = "127.0.0.1") -> None:
    import uvicorn

    app = create_app(ckpt, max_sessions=max_sessions, data=data)
    uvicorn.run(app, host=host, port=port)

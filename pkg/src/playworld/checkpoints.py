"""Self-describing checkpoints with content digests and lineage.

Every checkpoint embeds the full config of the model it stores, so `eval`
and `serve` need no external configuration. Dynamics checkpoints embed full
snapshots of the tokenizer (and latent action model, when present) they were
trained against, plus those snapshots' digests; loading verifies integrity
and refuses explicitly supplied components whose digest does not match.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import torch

from .dynamics import DynamicsConfig, MaskGITDynamics
from .errors import ConfigurationError, CorruptionError
from .lam import LatentActionModel
from .nn_core import ModelConfig
from .tokenizer import VideoTokenizer


def state_digest(config: dict, state: dict) -> str:
    """sha256 over the config JSON and all parameter bytes, name-sorted."""
    h = hashlib.sha256()
    h.update(json.dumps(config, sort_keys=True).encode("utf-8"))
    for name in sorted(state):
        h.update(name.encode("utf-8"))
        tensor = state[name].detach().cpu().contiguous().to(torch.float32)
        h.update(tensor.numpy().tobytes())
    return h.hexdigest()


def _cpu_state(module: torch.nn.Module) -> dict:
    return {k: v.detach().cpu().clone() for k, v in module.state_dict().items()}


def snapshot_tokenizer(model: VideoTokenizer) -> dict:
    config = {"model": model.config.to_dict(), **model.extra_state()}
    state = _cpu_state(model)
    return {"kind": "tokenizer", "config": config, "state": state,
            "digest": state_digest(config, state)}


def tokenizer_from_snapshot(snap: dict) -> VideoTokenizer:
    cfg = snap["config"]
    if state_digest(cfg, snap["state"]) != snap["digest"]:
        raise CorruptionError("tokenizer snapshot digest mismatch")
    model = VideoTokenizer(
        ModelConfig.from_dict(cfg["model"]),
        num_codes=cfg["num_codes"], latent_dim=cfg["latent_dim"], beta=cfg["beta"],
    )
    model.load_state_dict(snap["state"])
    return model


def snapshot_lam(model: LatentActionModel) -> dict:
    config = {"model": model.config.to_dict(), **model.extra_state()}
    state = _cpu_state(model)
    return {"kind": "lam", "config": config, "state": state,
            "digest": state_digest(config, state)}


def lam_from_snapshot(snap: dict) -> LatentActionModel:
    cfg = snap["config"]
    if state_digest(cfg, snap["state"]) != snap["digest"]:
        raise CorruptionError("latent action model snapshot digest mismatch")
    model = LatentActionModel(
        ModelConfig.from_dict(cfg["model"]),
        num_actions=cfg["num_actions"], latent_dim=cfg["latent_dim"], beta=cfg["beta"],
    )
    model.load_state_dict(snap["state"])
    return model


def snapshot_dynamics(model: MaskGITDynamics) -> dict:
    config = {"model": model.config.to_dict()}
    state = _cpu_state(model)
    return {"kind": "dynamics", "config": config, "state": state,
            "digest": state_digest(config, state)}


def dynamics_from_snapshot(snap: dict) -> MaskGITDynamics:
    cfg = snap["config"]
    if state_digest(cfg, snap["state"]) != snap["digest"]:
        raise CorruptionError("dynamics snapshot digest mismatch")
    model = MaskGITDynamics(DynamicsConfig.from_dict(cfg["model"]))
    model.load_state_dict(snap["state"])
    return model


_SNAPSHOT_FNS = {
    "tokenizer": (snapshot_tokenizer, tokenizer_from_snapshot),
    "lam": (snapshot_lam, lam_from_snapshot),
    "dynamics": (snapshot_dynamics, dynamics_from_snapshot),
}


def save_checkpoint(
    path: Path,
    model: torch.nn.Module,
    step: int,
    run_config: dict | None = None,
    finetuned_from: str | None = None,
    embedded: dict | None = None,
) -> str:
    """Write a checkpoint; returns the stored model's digest.

    `embedded` maps component names ("tokenizer", "lam") to snapshot dicts
    for dynamics checkpoints.
    """
    snap_fn, _ = _SNAPSHOT_FNS[model.kind]
    snap = snap_fn(model)
    payload = {
        "format_version": "1",
        "kind": model.kind,
        "step": int(step),
        "snapshot": snap,
        "run_config": run_config or {},
        "lineage": {"finetuned_from": finetuned_from},
        "embedded": embedded or {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)
    return snap["digest"]


@dataclass
class Bundle:
    """A loaded checkpoint: the model plus everything it was trained with."""

    kind: str
    step: int
    model: torch.nn.Module
    digest: str
    lineage: dict
    run_config: dict
    tokenizer: VideoTokenizer | None = None
    tokenizer_digest: str | None = None
    lam: LatentActionModel | None = None
    lam_digest: str | None = None

    @property
    def variant(self) -> str | None:
        if self.kind == "dynamics":
            return self.model.config.variant
        return None


def load_checkpoint(path: Path, tokenizer_path: Path | None = None) -> Bundle:
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    kind = payload["kind"]
    if kind not in _SNAPSHOT_FNS:
        raise ConfigurationError(f"unknown checkpoint kind {kind!r}")
    _, from_snap = _SNAPSHOT_FNS[kind]
    model = from_snap(payload["snapshot"])
    model.eval()
    bundle = Bundle(
        kind=kind,
        step=payload["step"],
        model=model,
        digest=payload["snapshot"]["digest"],
        lineage=payload.get("lineage", {}),
        run_config=payload.get("run_config", {}),
    )
    embedded = payload.get("embedded", {})
    if "tokenizer" in embedded:
        bundle.tokenizer = tokenizer_from_snapshot(embedded["tokenizer"]).eval()
        bundle.tokenizer_digest = embedded["tokenizer"]["digest"]
    if "lam" in embedded:
        bundle.lam = lam_from_snapshot(embedded["lam"]).eval()
        bundle.lam_digest = embedded["lam"]["digest"]
    if tokenizer_path is not None:
        other = torch.load(Path(tokenizer_path), map_location="cpu", weights_only=False)
        other_digest = other["snapshot"]["digest"]
        if bundle.tokenizer_digest is not None and other_digest != bundle.tokenizer_digest:
            raise ConfigurationError(
                "tokenizer checkpoint digest mismatch: dynamics was trained with "
                f"{bundle.tokenizer_digest[:12]}..., got {other_digest[:12]}..."
            )
        bundle.tokenizer = tokenizer_from_snapshot(other["snapshot"]).eval()
        bundle.tokenizer_digest = other_digest
    return bundle

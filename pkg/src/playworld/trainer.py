"""Training orchestration: schedule, training loops, fine-tuning.

Targets:
  tokenizer        - video tokenizer alone (trained first).
  lam_dynamics     - latent action model and dynamics trained jointly on a
                     frozen tokenizer checkpoint.
  dynamics_guided  - dynamics conditioned on ground-truth agent actions
                     (no latent action model).

Run configs are flat key/value JSON using the canonical hyperparameter
names (num_layers, d_model, num_heads, num_codes, latent_dim, temperature,
maskgit_steps, max_lr, min_lr, beta1, beta2, weight_decay,
linear_warmup_start_factor, warmup_steps). Keys for the latent action model
inside a lam_dynamics run carry a "lam_" prefix to disambiguate.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch

from . import dynamics as dyn
from .checkpoints import (
    Bundle,
    load_checkpoint,
    save_checkpoint,
    snapshot_lam,
    snapshot_tokenizer,
)
from .data import EpisodeDataset, sample_batch
from .dynamics import DynamicsConfig, MaskGITDynamics
from .errors import ConfigurationError, TrainingFault, ValidationError
from .lam import LatentActionModel
from .nn_core import ModelConfig
from .tokenizer import VideoTokenizer

log = logging.getLogger(__name__)

TARGETS = ("tokenizer", "lam_dynamics", "dynamics_guided")


@dataclass(frozen=True)
class OptimizerConfig:
    total_steps: int
    max_lr: float = 1e-4
    min_lr: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.99
    weight_decay: float = 1e-4
    linear_warmup_start_factor: float = 0.5
    warmup_steps: int = 5000

    def __post_init__(self):
        if not (0 < self.min_lr <= self.max_lr):
            raise ConfigurationError(
                f"require 0 < min_lr <= max_lr, got {self.min_lr} / {self.max_lr}"
            )
        if not (0 <= self.warmup_steps <= self.total_steps):
            raise ConfigurationError(
                f"require 0 <= warmup_steps <= total_steps, got "
                f"{self.warmup_steps} / {self.total_steps}"
            )


def lr_schedule(step: int, cfg: OptimizerConfig) -> float:
    """Linear warmup from start_factor * max_lr, then cosine to min_lr.

    Constant at min_lr past total_steps.
    """
    if step < 0:
        raise ValidationError(f"step must be >= 0, got {step}")
    if step < cfg.warmup_steps:
        frac = step / cfg.warmup_steps
        start = cfg.linear_warmup_start_factor
        return cfg.max_lr * (start + (1.0 - start) * frac)
    if step >= cfg.total_steps:
        return cfg.min_lr
    span = cfg.total_steps - cfg.warmup_steps
    progress = (step - cfg.warmup_steps) / span
    return cfg.min_lr + 0.5 * (cfg.max_lr - cfg.min_lr) * (1.0 + math.cos(math.pi * progress))


@dataclass
class RunConfig:
    target: str
    data: str
    out: str
    # workload
    batch_size: int = 84
    sequence_length: int = 16
    train_window: int | None = None  # sampled window length; defaults to sequence_length
    seed: int = 0
    device: str = "cpu"
    checkpoint_every: int = 1000
    log_every: int = 10
    val_batches: int = 2
    # architecture (shared canonical names)
    num_layers: int = 8
    d_model: int = 512
    num_heads: int = 8
    patch_size: int = 4
    num_codes: int = 1024
    latent_dim: int = 32
    commitment_beta: float = 0.25
    # dynamics sampling
    temperature: float = 1.0
    maskgit_steps: int = 25
    # latent action model (lam_dynamics only)
    lam_num_layers: int | None = None
    lam_d_model: int | None = None
    lam_num_heads: int | None = None
    lam_num_codes: int = 7
    lam_latent_dim: int = 32
    # inputs
    tokenizer_checkpoint: str | None = None
    finetune_from: str | None = None

    def __post_init__(self):
        if self.target not in TARGETS:
            raise ConfigurationError(f"target must be one of {TARGETS}, got {self.target!r}")
        if self.target == "dynamics_guided" and any(
            v is not None for v in (self.lam_num_layers, self.lam_d_model, self.lam_num_heads)
        ):
            raise ConfigurationError(
                "dynamics_guided is conditioned on ground-truth agent actions and "
                "forbids a latent action model config"
            )
        if self.target != "tokenizer" and not (self.tokenizer_checkpoint or self.finetune_from):
            raise ConfigurationError(f"{self.target} training requires a tokenizer checkpoint")
        if self.train_window is not None and self.train_window > self.sequence_length:
            raise ConfigurationError(
                f"train_window {self.train_window} exceeds sequence_length {self.sequence_length}"
            )

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            num_layers=self.num_layers, d_model=self.d_model, num_heads=self.num_heads,
            patch_size=self.patch_size, sequence_length=self.sequence_length,
        )

    def lam_config(self) -> ModelConfig:
        return ModelConfig(
            num_layers=self.lam_num_layers or self.num_layers,
            d_model=self.lam_d_model or self.d_model,
            num_heads=self.lam_num_heads or self.num_heads,
            patch_size=self.patch_size, sequence_length=self.sequence_length,
        )

    def dynamics_config(self, num_codes: int) -> DynamicsConfig:
        return DynamicsConfig(
            num_layers=self.num_layers, d_model=self.d_model, num_heads=self.num_heads,
            temperature=self.temperature, maskgit_steps=self.maskgit_steps,
            variant="guided" if self.target == "dynamics_guided" else "latent_action",
            num_codes=num_codes, num_actions=7, action_latent_dim=self.lam_latent_dim,
            sequence_length=self.sequence_length,
        )

    def to_dict(self) -> dict:
        return asdict(self)


def load_run_config(path: Path) -> tuple[RunConfig, OptimizerConfig]:
    """Parse a flat JSON config file into run and optimizer configs."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    opt_keys = {f.name for f in OptimizerConfig.__dataclass_fields__.values()}
    run_keys = {f.name for f in RunConfig.__dataclass_fields__.values()}
    unknown = set(raw) - opt_keys - run_keys
    if unknown:
        raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
    opt = OptimizerConfig(**{k: v for k, v in raw.items() if k in opt_keys})
    run = RunConfig(**{k: v for k, v in raw.items() if k in run_keys})
    return run, opt


@dataclass
class TrainingResult:
    final_checkpoint: str
    best_checkpoint: str
    metrics_path: str
    history: list = field(default_factory=list)
    digest: str = ""


class _Run:
    """State for one training run: models, optimizer, logging, checkpoints."""

    def __init__(self, cfg: RunConfig, opt_cfg: OptimizerConfig):
        self.cfg = cfg
        self.opt_cfg = opt_cfg
        torch.manual_seed(cfg.seed)
        self.np_rng = np.random.default_rng(cfg.seed)
        self.mask_rng = torch.Generator().manual_seed(cfg.seed + 1)
        self.dataset = EpisodeDataset(cfg.data)
        self.out = Path(cfg.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.metrics_path = self.out / "metrics.jsonl"
        self.finetuned_from: str | None = None

        self.tokenizer: VideoTokenizer | None = None
        self.lam: LatentActionModel | None = None
        self.dynamics: MaskGITDynamics | None = None
        self._build_models()

    # -- model setup -------------------------------------------------------

    def _load_base(self) -> Bundle | None:
        if not self.cfg.finetune_from:
            return None
        bundle = load_checkpoint(self.cfg.finetune_from)
        self.finetuned_from = bundle.digest
        return bundle

    def _frozen_tokenizer(self, base: Bundle | None) -> VideoTokenizer:
        if self.cfg.tokenizer_checkpoint:
            tok_bundle = load_checkpoint(self.cfg.tokenizer_checkpoint)
            if tok_bundle.kind != "tokenizer":
                raise ConfigurationError(
                    f"expected a tokenizer checkpoint, got {tok_bundle.kind}"
                )
            tok = tok_bundle.model
        elif base is not None and base.tokenizer is not None:
            tok = base.tokenizer
        else:
            raise ConfigurationError("dynamics training requires a tokenizer checkpoint")
        tok.eval()
        for p in tok.parameters():
            p.requires_grad_(False)
        return tok

    def _build_models(self):
        cfg = self.cfg
        base = self._load_base()
        if cfg.target == "tokenizer":
            if base is not None:
                if base.kind != "tokenizer":
                    raise ConfigurationError(f"cannot finetune tokenizer from {base.kind}")
                self.tokenizer = base.model
                for p in self.tokenizer.parameters():
                    p.requires_grad_(True)
            else:
                self.tokenizer = VideoTokenizer(
                    cfg.model_config(), num_codes=cfg.num_codes,
                    latent_dim=cfg.latent_dim, beta=cfg.commitment_beta,
                )
            self.primary = self.tokenizer
            return

        self.frozen_tokenizer = self._frozen_tokenizer(base)
        num_codes = self.frozen_tokenizer.num_codes
        if base is not None:
            if base.kind != "dynamics":
                raise ConfigurationError(f"cannot finetune dynamics from {base.kind}")
            if base.variant != ("guided" if cfg.target == "dynamics_guided" else "latent_action"):
                raise ConfigurationError(
                    f"variant mismatch: base checkpoint is {base.variant}"
                )
            if base.model.config.num_codes != num_codes:
                raise ConfigurationError(
                    "tokenizer codebook size mismatch with base dynamics"
                )
            self.dynamics = base.model
            for p in self.dynamics.parameters():
                p.requires_grad_(True)
            if cfg.target == "lam_dynamics":
                if base.lam is None:
                    raise ConfigurationError("base lam_dynamics checkpoint lacks a LAM")
                self.lam = base.lam
                for p in self.lam.parameters():
                    p.requires_grad_(True)
        else:
            self.dynamics = MaskGITDynamics(self.cfg.dynamics_config(num_codes))
            if cfg.target == "lam_dynamics":
                self.lam = LatentActionModel(
                    cfg.lam_config(), num_actions=cfg.lam_num_codes,
                    latent_dim=cfg.lam_latent_dim, beta=cfg.commitment_beta,
                )
        self.primary = self.dynamics

    def parameters(self):
        params = list(self.primary.parameters())
        if self.cfg.target == "lam_dynamics":
            params += list(self.lam.parameters())
        return params

    # -- losses -------------------------------------------------------------

    def loss(self, frames: torch.Tensor, actions: torch.Tensor) -> tuple[torch.Tensor, dict]:
        if self.cfg.target == "tokenizer":
            out = self.tokenizer.loss(frames)
            return out.total, out.to_dict()
        out = dyn.dynamics_train_losses(
            self.dynamics, self.frozen_tokenizer, frames, self.mask_rng,
            agent_actions=actions if self.cfg.target == "dynamics_guided" else None,
            lam=self.lam,
        )
        return out.total, out.to_dict()

    # -- checkpointing -------------------------------------------------------

    def save(self, path: Path, step: int) -> str:
        embedded = {}
        if self.cfg.target != "tokenizer":
            embedded["tokenizer"] = snapshot_tokenizer(self.frozen_tokenizer)
            if self.lam is not None:
                embedded["lam"] = snapshot_lam(self.lam)
        return save_checkpoint(
            path, self.primary, step,
            run_config=self.cfg.to_dict(),
            finetuned_from=self.finetuned_from,
            embedded=embedded,
        )


def run_training(cfg: RunConfig, opt_cfg: OptimizerConfig) -> TrainingResult:
    """Train to total_steps; writes metrics JSONL and periodic checkpoints.

    Aborts on a non-finite loss, retaining the last good checkpoint.
    """
    run = _Run(cfg, opt_cfg)
    params = run.parameters()
    optimizer = torch.optim.Adam(
        params, lr=lr_schedule(0, opt_cfg),
        betas=(opt_cfg.beta1, opt_cfg.beta2), weight_decay=opt_cfg.weight_decay,
    )

    history: list[dict] = []
    final_path = run.out / "checkpoint_final.pt"
    best_path = run.out / "checkpoint_best.pt"
    best_val = float("inf")
    digest = run.save(final_path, 0)  # step-0 checkpoint (also the zero-step finetune result)

    with open(run.metrics_path, "w", encoding="utf-8") as metrics_file:
        for step in range(opt_cfg.total_steps):
            lr = lr_schedule(step, opt_cfg)
            for group in optimizer.param_groups:
                group["lr"] = lr
            frames, actions = sample_batch(
                run.dataset, "train", cfg.batch_size,
                cfg.train_window or cfg.sequence_length, run.np_rng,
            )
            try:
                loss, components = run.loss(frames, actions)
            except TrainingFault:
                log.error("aborting at step %d; last good checkpoint retained", step)
                raise
            optimizer.zero_grad()
            loss.backward()
            grad_norm = torch.nn.utils.clip_grad_norm_(params, 1.0)
            optimizer.step()

            if step % cfg.log_every == 0 or step == opt_cfg.total_steps - 1:
                record = {"step": step, "lr": lr, "grad_norm": float(grad_norm), **components}
                history.append(record)
                metrics_file.write(json.dumps(record) + "\n")
                metrics_file.flush()

            if (step + 1) % cfg.checkpoint_every == 0 or step == opt_cfg.total_steps - 1:
                digest = run.save(final_path, step + 1)
                val = _validation_loss(run)
                if val is not None and val < best_val:
                    best_val = val
                    run.save(best_path, step + 1)
                log.info("%s step %d loss %.4f val %s", cfg.target, step + 1,
                         float(loss.detach()), f"{val:.4f}" if val is not None else "n/a")

    if not best_path.exists():
        run.save(best_path, opt_cfg.total_steps)
    return TrainingResult(
        final_checkpoint=str(final_path),
        best_checkpoint=str(best_path),
        metrics_path=str(run.metrics_path),
        history=history,
        digest=digest,
    )


def _validation_loss(run: _Run) -> float | None:
    try:
        with torch.no_grad():
            vals = []
            for _ in range(run.cfg.val_batches):
                frames, actions = sample_batch(
                    run.dataset, "val", run.cfg.batch_size,
                    run.cfg.train_window or run.cfg.sequence_length, run.np_rng,
                )
                loss, _ = run.loss(frames, actions)
                vals.append(float(loss))
        return float(np.mean(vals))
    except ValidationError:
        return None


def run_finetune(
    base_checkpoint: str,
    data: str,
    out: str,
    opt_cfg: OptimizerConfig,
    tokenizer_checkpoint: str | None = None,
    overrides: dict | None = None,
) -> TrainingResult:
    """Continue optimization from a base checkpoint on a new dataset.

    Architecture comes from the base checkpoint; a fresh schedule (scaled to
    the finetune step count) is applied. The result records the base digest
    as lineage.
    """
    base = load_checkpoint(base_checkpoint)
    stored = dict(base.run_config) if base.run_config else {}
    if not stored:
        raise ConfigurationError("base checkpoint lacks an embedded run config")
    stored.update({"data": data, "out": out, "finetune_from": str(base_checkpoint)})
    if base.kind == "dynamics":
        stored["tokenizer_checkpoint"] = (
            str(tokenizer_checkpoint) if tokenizer_checkpoint else None
        )
    for key, value in (overrides or {}).items():
        stored[key] = value
    run_keys = {f.name for f in RunConfig.__dataclass_fields__.values()}
    cfg = RunConfig(**{k: v for k, v in stored.items() if k in run_keys})
    return run_training(cfg, opt_cfg)

"""Latent action model: a discrete action code per frame transition.

An encoder over the frame sequence produces, for each transition t -> t+1, a
pooled representation of frame t+1 that is projected and quantized against a
small action codebook (one code per environment action). A decoder learns to
predict each next frame from the preceding frames plus the quantized action,
which is the only training signal: actions are never labeled.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .errors import TrainingFault, ValidationError
from .nn_core import ModelConfig, PatchEmbed, PatchUnembed, STTransformer
from .tokenizer import DEFAULT_COMMITMENT_BETA, VectorQuantizer, VQResult


@dataclass
class LatentActions:
    """Inferred actions for each consecutive frame pair.

    indices: (B, T-1) long, each in [0, num_codes).
    embeddings: (B, T-1, latent_dim) quantized embeddings (straight-through).
    vq: quantization losses for the action bottleneck.
    """

    indices: torch.Tensor
    embeddings: torch.Tensor
    vq: VQResult


@dataclass
class LamLoss:
    total: torch.Tensor
    reconstruction: torch.Tensor
    codebook: torch.Tensor
    commitment: torch.Tensor

    def check_finite(self) -> None:
        for name in ("reconstruction", "codebook", "commitment"):
            if not torch.isfinite(getattr(self, name)):
                raise TrainingFault(f"non-finite latent-action loss component: {name}")

    def to_dict(self) -> dict:
        return {
            "loss": float(self.total.detach()),
            "reconstruction": float(self.reconstruction.detach()),
            "codebook": float(self.codebook.detach()),
            "commitment": float(self.commitment.detach()),
        }


class LatentActionModel(nn.Module):
    """Infers discrete latent actions and predicts next frames from them."""

    kind = "lam"

    def __init__(
        self,
        config: ModelConfig,
        num_actions: int = 7,
        latent_dim: int = 32,
        beta: float = DEFAULT_COMMITMENT_BETA,
    ):
        super().__init__()
        self.config = config
        self.num_actions = num_actions
        self.latent_dim = latent_dim
        self.patch = PatchEmbed(config.patch_size, config.d_model)
        self.encoder = STTransformer(config.num_layers, config.d_model, config.num_heads)
        self.action_head = nn.Linear(config.d_model, latent_dim)
        self.vq = VectorQuantizer(num_actions, latent_dim, beta)
        # bias-free so a zero action embedding leaves decoder inputs untouched
        self.action_proj = nn.Linear(latent_dim, config.d_model, bias=False)
        self.dec_patch = PatchEmbed(config.patch_size, config.d_model)
        self.decoder = STTransformer(config.num_layers, config.d_model, config.num_heads)
        self.unpatch = PatchUnembed(config.patch_size, config.d_model)

    def _check_frames(self, frames: torch.Tensor, min_t: int = 2) -> None:
        if frames.ndim != 5 or frames.shape[-1] != 3:
            raise ValidationError(f"expected frames (B, T, H, W, 3), got {tuple(frames.shape)}")
        if frames.shape[1] < min_t:
            raise ValidationError(
                f"need at least {min_t} frames to infer transitions, got {frames.shape[1]}"
            )

    def infer_actions(self, frames: torch.Tensor) -> LatentActions:
        """One latent action per transition: pooled encoding of the arriving frame.

        Spatial tokens of frame t+1's encoder output are mean-pooled, projected
        to the action latent space, and snapped to the nearest action code.
        Causal encoding keeps the action for (t, t+1) independent of frames
        after t+1.
        """
        self._check_frames(frames)
        feats = self.encoder(self.patch(frames))  # (B, T, h, w, D)
        pooled = feats[:, 1:].mean(dim=(2, 3))  # (B, T-1, D)
        latents = self.action_head(pooled)
        vq = self.vq.quantize(latents)
        return LatentActions(indices=vq.indices, embeddings=vq.quantized, vq=vq)

    def predict_next(self, frames: torch.Tensor, action_embeddings: torch.Tensor) -> torch.Tensor:
        """Predict frames 2..T from frames 1..T-1 and per-transition actions.

        Each action embedding is broadcast-added to all spatial tokens of the
        transition's preceding frame. Returns (B, T-1, H, W, 3).
        """
        self._check_frames(frames)
        B, T = frames.shape[:2]
        if action_embeddings.shape[:2] != (B, T - 1):
            raise ValidationError(
                f"expected {T - 1} actions for {T} frames, got {tuple(action_embeddings.shape[:2])}"
            )
        context = frames[:, :-1]
        x = self.dec_patch(context)  # (B, T-1, h, w, D)
        act = self.action_proj(action_embeddings)  # (B, T-1, D)
        x = x + act[:, :, None, None, :]
        return self.unpatch(self.decoder(x))

    def predict_from_indices(self, frames: torch.Tensor, indices: torch.Tensor) -> torch.Tensor:
        return self.predict_next(frames, self.vq.lookup(indices))

    def loss(self, frames: torch.Tensor) -> tuple[LamLoss, LatentActions]:
        """Next-frame MSE plus VQ terms on the action bottleneck."""
        self._check_frames(frames)
        actions = self.infer_actions(frames)
        preds = self.predict_next(frames, actions.embeddings)
        mse = (preds - frames[:, 1:]).pow(2).mean()
        out = LamLoss(
            total=mse + actions.vq.loss,
            reconstruction=mse,
            codebook=actions.vq.codebook_loss,
            commitment=actions.vq.commitment_loss,
        )
        out.check_finite()
        return out, actions

    def extra_state(self) -> dict:
        return {"num_actions": self.num_actions, "latent_dim": self.latent_dim,
                "beta": self.vq.beta}

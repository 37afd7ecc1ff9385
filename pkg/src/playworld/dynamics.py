"""Masked-token dynamics model over tokenizer indices, with iterative decoding.

The model predicts next-frame token indices from past tokens and actions.
Two conditioning variants exist: "latent_action" adds projected latent-action
embeddings to the spatial tokens of the transition's preceding frame, and
"guided" concatenates a one-hot agent action channel-wise and projects back.
Training randomly masks tokens and scores cross-entropy on the masked
positions only; generation fills one future frame at a time by repeatedly
sampling all masked positions and permanently keeping the most confident
draws on a cosine schedule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError, ShapeError, TrainingFault, ValidationError
from .lam import LatentActionModel
from .nn_core import STTransformer
from .tokenizer import VideoTokenizer

VARIANTS = ("latent_action", "guided")


@dataclass(frozen=True)
class DynamicsConfig:
    num_layers: int = 12
    d_model: int = 512
    num_heads: int = 8
    temperature: float = 1.0
    maskgit_steps: int = 25
    variant: str = "latent_action"
    num_codes: int = 1024
    num_actions: int = 7
    action_latent_dim: int = 32
    sequence_length: int = 16

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.maskgit_steps < 1:
            raise ConfigurationError(f"maskgit_steps must be >= 1, got {self.maskgit_steps}")
        if self.temperature <= 0:
            raise ConfigurationError(f"temperature must be > 0, got {self.temperature}")
        if self.d_model % self.num_heads != 0:
            raise ConfigurationError("d_model must be divisible by num_heads")

    def to_dict(self) -> dict:
        return {
            "num_layers": self.num_layers, "d_model": self.d_model,
            "num_heads": self.num_heads, "temperature": self.temperature,
            "maskgit_steps": self.maskgit_steps, "variant": self.variant,
            "num_codes": self.num_codes, "num_actions": self.num_actions,
            "action_latent_dim": self.action_latent_dim,
            "sequence_length": self.sequence_length,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DynamicsConfig":
        return cls(
            num_layers=int(d["num_layers"]), d_model=int(d["d_model"]),
            num_heads=int(d["num_heads"]), temperature=float(d["temperature"]),
            maskgit_steps=int(d["maskgit_steps"]), variant=str(d["variant"]),
            num_codes=int(d["num_codes"]), num_actions=int(d["num_actions"]),
            action_latent_dim=int(d["action_latent_dim"]),
            sequence_length=int(d["sequence_length"]),
        )


def one_hot_actions(actions: torch.Tensor, num_actions: int = 7) -> torch.Tensor:
    """(B, K) integer actions -> (B, K, num_actions) float one-hot vectors."""
    if actions.dtype not in (torch.int64, torch.int32, torch.int16, torch.uint8):
        raise ConfigurationError(
            f"guided conditioning expects integer agent actions, got dtype {actions.dtype}"
        )
    if actions.numel() > 0 and (actions.min() < 0 or actions.max() >= num_actions):
        raise ValidationError(f"action out of range [0, {num_actions})")
    return F.one_hot(actions.long(), num_classes=num_actions).float()


def sample_mask(
    shape: tuple[int, int, int, int],
    rng: torch.Generator,
    rate: float | None = None,
) -> torch.Tensor:
    """Random training mask (True = hidden) over a (B, T, h, w) token grid.

    Each sample draws a rate r ~ Uniform(0.5, 1.0) (or uses the forced
    `rate`); tokens of frames 2..T are masked independently with probability
    r. Frame 1 is conditioning context and is never masked.
    """
    B, T, h, w = shape
    if T < 2:
        raise ValidationError(f"mask sampling needs T >= 2 frames, got {T}")
    device = rng.device if hasattr(rng, "device") else "cpu"
    if rate is None:
        r = 0.5 + 0.5 * torch.rand(B, generator=rng, device=device)
    else:
        r = torch.full((B,), float(rate), device=device)
    u = torch.rand(B, T - 1, h, w, generator=rng, device=device)
    mask = u < r[:, None, None, None]
    first = torch.zeros(B, 1, h, w, dtype=torch.bool, device=device)
    return torch.cat([first, mask], dim=1)


def masked_cross_entropy(
    logits: torch.Tensor,
    targets: torch.Tensor,
    mask: torch.Tensor,
) -> torch.Tensor:
    """Mean cross-entropy over masked positions only.

    Unmasked positions contribute exactly nothing: their logits and targets
    never enter the reduction.
    """
    if not mask.any():
        raise ValidationError("mask selects no positions")
    return F.cross_entropy(logits[mask], targets[mask])


def masked_fraction_schedule(step: int, total_steps: int) -> float:
    """Fraction of tokens still masked after `step` of `total_steps`: cos ramp 1 -> 0."""
    return math.cos(math.pi * step / (2 * total_steps))


def kept_counts(n_tokens: int, steps: int) -> list[int]:
    """Tokens newly kept at each decode step; non-negative and sums to n_tokens."""
    remaining = [int(math.floor(masked_fraction_schedule(s, steps) * n_tokens))
                 for s in range(steps + 1)]
    remaining[0] = n_tokens
    remaining[steps] = 0
    return [remaining[s - 1] - remaining[s] for s in range(1, steps + 1)]


class MaskGITDynamics(nn.Module):
    """Causal ST transformer over token embeddings with action conditioning.

    Token ids live in [0, num_codes); index num_codes is the reserved mask
    token with its own learned embedding row.
    """

    kind = "dynamics"

    def __init__(self, config: DynamicsConfig):
        super().__init__()
        self.config = config
        self.mask_token_id = config.num_codes
        self.token_emb = nn.Embedding(config.num_codes + 1, config.d_model)
        self.null_action = nn.Parameter(torch.empty(config.d_model))
        if config.variant == "guided":
            self.action_in = nn.Linear(config.d_model + config.num_actions, config.d_model)
        else:
            self.action_in = nn.Linear(config.action_latent_dim, config.d_model, bias=False)
        self.transformer = STTransformer(config.num_layers, config.d_model, config.num_heads)
        self.head = nn.Linear(config.d_model, config.num_codes)
        self._init_weights()

    def _init_weights(self):
        nn.init.normal_(self.token_emb.weight, std=0.02)
        nn.init.normal_(self.null_action, std=0.02)
        nn.init.normal_(self.head.weight, std=0.02)
        nn.init.zeros_(self.head.bias)

    def condition(
        self,
        feats: torch.Tensor,
        actions: torch.Tensor | None,
        ignore_actions: bool = False,
    ) -> torch.Tensor:
        """Attach per-transition actions to the preceding frame's tokens.

        feats: (B, T, h, w, D). actions: (B, T-1) integer agent actions for
        the guided variant, or (B, T-1, action_latent_dim) latent-action
        embeddings. The final frame has no outgoing action and receives a
        learned null vector instead; `ignore_actions` routes the null vector
        to every frame (action-blind ablation).
        """
        B, T = feats.shape[:2]
        null = self.null_action.to(feats.dtype)
        if ignore_actions or T == 1:
            return feats + null
        if actions is None:
            raise ConfigurationError("actions are required unless ignore_actions is set")
        if actions.shape[0] != B or actions.shape[1] != T - 1:
            raise ValidationError(
                f"expected {T - 1} actions per sample for {T} frames, "
                f"got shape {tuple(actions.shape)}"
            )
        past, last = feats[:, :-1], feats[:, -1:]
        if self.config.variant == "guided":
            onehot = one_hot_actions(actions, self.config.num_actions).to(feats.dtype)
            tails = onehot[:, :, None, None, :].expand(*past.shape[:-1], -1)
            past = self.action_in(torch.cat([past, tails], dim=-1))
        else:
            if actions.dtype not in (torch.float32, torch.float64):
                raise ConfigurationError(
                    "latent_action conditioning expects float action embeddings; "
                    f"got dtype {actions.dtype}"
                )
            past = past + self.action_in(actions)[:, :, None, None, :]
        return torch.cat([past, last + null], dim=1)

    def forward(
        self,
        tokens: torch.Tensor,
        actions: torch.Tensor | None = None,
        ignore_actions: bool = False,
    ) -> torch.Tensor:
        """Token grid (B, T, h, w), mask ids allowed -> logits (B, T, h, w, num_codes)."""
        if tokens.ndim != 4:
            raise ShapeError(f"expected tokens (B, T, h, w), got {tuple(tokens.shape)}")
        if tokens.max() > self.mask_token_id or tokens.min() < 0:
            raise ValidationError(
                f"token index out of range [0, {self.mask_token_id}]"
            )
        feats = self.token_emb(tokens)
        feats = self.condition(feats, actions, ignore_actions=ignore_actions)
        return self.head(self.transformer(feats))


@dataclass
class DynamicsLoss:
    total: torch.Tensor
    cross_entropy: torch.Tensor
    masked_tokens: int
    lam: dict = field(default_factory=dict)

    def check_finite(self) -> None:
        if not torch.isfinite(self.cross_entropy):
            raise TrainingFault("non-finite dynamics loss component: cross_entropy")

    def to_dict(self) -> dict:
        out = {"loss": float(self.total.detach()), "cross_entropy": float(self.cross_entropy.detach()),
               "masked_tokens": self.masked_tokens}
        out.update({f"lam_{k}": v for k, v in self.lam.items()})
        return out


def dynamics_train_losses(
    dynamics: MaskGITDynamics,
    tokenizer: VideoTokenizer,
    frames: torch.Tensor,
    rng: torch.Generator,
    agent_actions: torch.Tensor | None = None,
    lam: LatentActionModel | None = None,
    mask_rate: float | None = None,
    ignore_actions: bool = False,
) -> DynamicsLoss:
    """One training objective evaluation on a frame batch.

    Tokenizes the frames (tokenizer frozen), samples a mask, replaces masked
    positions with the mask token, applies action conditioning, and computes
    cross-entropy on masked positions only. The latent_action variant infers
    actions with the LAM and adds the LAM's own objective (joint training,
    both terms weighted 1.0).
    """
    variant = dynamics.config.variant
    if variant == "guided" and not ignore_actions and agent_actions is None:
        raise ConfigurationError("guided dynamics training requires agent actions")
    if variant == "latent_action" and lam is None:
        raise ConfigurationError("latent_action dynamics training requires a latent action model")

    with torch.no_grad():
        tokens = tokenizer.encode(frames)
    mask = sample_mask(tuple(tokens.shape), rng, rate=mask_rate)
    inputs = torch.where(mask, torch.full_like(tokens, dynamics.mask_token_id), tokens)

    lam_components: dict = {}
    if variant == "latent_action":
        lam_loss, latent = lam.loss(frames)
        actions = latent.embeddings
        extra = lam_loss.total
        lam_components = lam_loss.to_dict()
    else:
        actions = agent_actions
        extra = None

    logits = dynamics(inputs, actions, ignore_actions=ignore_actions)
    ce = masked_cross_entropy(logits, tokens, mask)
    out = DynamicsLoss(
        total=ce + extra if extra is not None else ce,
        cross_entropy=ce,
        masked_tokens=int(mask.sum()),
        lam=lam_components,
    )
    out.check_finite()
    return out


@torch.no_grad()
def maskgit_decode_frame(
    dynamics: MaskGITDynamics,
    context_tokens: torch.Tensor,
    actions: torch.Tensor | None,
    generator: torch.Generator,
    temperature: float | None = None,
    steps: int | None = None,
    ignore_actions: bool = False,
) -> torch.Tensor:
    """Generate the next frame's tokens after `context_tokens` (B, t, h, w).

    `actions` covers frames 1..t (one outgoing action per context frame); the
    frame being generated receives the null action inside the model. All h*w
    positions start masked; each step samples every still-masked position
    from the temperature-scaled categorical, then permanently keeps the most
    confident new draws so the remaining-masked fraction follows the cosine
    schedule. Confidence is the sampled token's predicted probability;
    ties break in row-major position order. temperature 0 decodes greedily.
    """
    if context_tokens.ndim != 4:
        raise ShapeError(f"expected context tokens (B, t, h, w), got {tuple(context_tokens.shape)}")
    B, t, h, w = context_tokens.shape
    if t < 1:
        raise ValidationError("need at least one context frame")
    n = h * w
    steps = dynamics.config.maskgit_steps if steps is None else steps
    temperature = dynamics.config.temperature if temperature is None else temperature
    schedule = kept_counts(n, steps)

    tokens_next = torch.full((B, n), dynamics.mask_token_id,
                             dtype=context_tokens.dtype, device=context_tokens.device)
    kept = torch.zeros(B, n, dtype=torch.bool, device=context_tokens.device)

    for k_s in schedule:
        seq = torch.cat([context_tokens, tokens_next.view(B, 1, h, w)], dim=1)
        logits = dynamics(seq, actions, ignore_actions=ignore_actions)[:, -1]
        logits = logits.reshape(B, n, -1)
        probs = F.softmax(logits, dim=-1)
        if temperature > 0:
            scaled = F.softmax(logits / temperature, dim=-1)
            draws = torch.multinomial(
                scaled.reshape(B * n, -1), 1, generator=generator
            ).reshape(B, n)
        else:
            draws = logits.argmax(dim=-1)
        conf = probs.gather(-1, draws.unsqueeze(-1)).squeeze(-1)
        conf = conf.masked_fill(kept, -1.0)  # already locked positions never compete
        order = torch.argsort(conf, dim=1, descending=True, stable=True)
        newly = torch.zeros_like(kept)
        newly.scatter_(1, order[:, :k_s], True)
        newly &= ~kept
        tokens_next = torch.where(newly, draws.to(tokens_next.dtype), tokens_next)
        kept |= newly

    return tokens_next.view(B, h, w)


def _lookup_latent_actions(lam: LatentActionModel, indices: torch.Tensor) -> torch.Tensor:
    if lam is None:
        raise ConfigurationError("latent_action rollout requires the latent action model")
    return lam.vq.lookup(indices)


@torch.no_grad()
def rollout(
    dynamics: MaskGITDynamics,
    tokenizer: VideoTokenizer,
    context_frames: torch.Tensor,
    actions: torch.Tensor,
    horizon: int,
    generator: torch.Generator,
    lam: LatentActionModel | None = None,
    temperature: float | None = None,
    steps: int | None = None,
    ignore_actions: bool = False,
) -> torch.Tensor:
    """Autoregressive generation: tokenize context, decode frame by frame.

    actions: (B, context + horizon - 1) integer actions; the latent_action
    variant interprets them as latent-action codebook indices. Returns the
    `horizon` generated frames as (B, horizon, H, W, 3) in [0, 1]. Each frame
    is decoded with its full token prefix as context, the same computation an
    interactive session performs, so the two paths agree bit for bit.
    """
    if horizon < 1:
        raise ValidationError(f"horizon must be >= 1, got {horizon}")
    B, c = context_frames.shape[:2]
    total = c + horizon
    if total > dynamics.config.sequence_length:
        raise ValidationError(
            f"context + horizon = {total} exceeds trained sequence length "
            f"{dynamics.config.sequence_length}"
        )
    if actions.shape[0] != B or actions.shape[1] != total - 1:
        raise ValidationError(
            f"expected {total - 1} actions (context + horizon - 1), got {tuple(actions.shape)}"
        )
    tokens = tokenizer.encode(context_frames)
    generated = []
    for i in range(horizon):
        t_cur = c + i
        acts = actions[:, :t_cur]
        if dynamics.config.variant == "latent_action" and not ignore_actions:
            acts = _lookup_latent_actions(lam, acts)
        new = maskgit_decode_frame(
            dynamics, tokens, acts, generator,
            temperature=temperature, steps=steps, ignore_actions=ignore_actions,
        )
        tokens = torch.cat([tokens, new.unsqueeze(1)], dim=1)
        generated.append(tokenizer.decode(tokens)[:, -1])
    return torch.stack(generated, dim=1)

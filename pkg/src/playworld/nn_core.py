"""Shared neural building blocks for spatiotemporal video models.

All models in this package are stacks of ST-Blocks: transformer blocks that
factor attention into a spatial pass (tokens attend within their own frame)
and a temporal pass (each spatial site attends across frames). Temporal
attention uses linear distance biases with per-head slopes and an optional
causal mask; spatial position information comes from a learned 3x3
neighborhood aggregation added residually to the features.

Feature tensors are laid out as (B, T, h, w, D): batch, frames, patch grid
rows/cols, channels.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ShapeError, ValidationError

# Additive mask value; exp() underflows to exactly 0 after softmax.
NEG_INF = -1e9


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters shared by encoder/decoder stacks.

    Attributes:
        num_layers: ST-Blocks per stack.
        d_model: channel width.
        num_heads: attention heads; must divide d_model.
        patch_size: pixels per patch side; frame H and W must be divisible.
        sequence_length: maximum number of frames the model is trained for.
    """

    num_layers: int
    d_model: int
    num_heads: int
    patch_size: int
    sequence_length: int

    def __post_init__(self):
        for name in ("num_layers", "d_model", "num_heads", "patch_size", "sequence_length"):
            value = getattr(self, name)
            if not isinstance(value, int) or value <= 0:
                raise ValidationError(f"{name} must be a positive integer, got {value!r}")
        if self.d_model % self.num_heads != 0:
            raise ValidationError(
                f"d_model ({self.d_model}) must be divisible by num_heads ({self.num_heads})"
            )

    def to_dict(self) -> dict:
        return {
            "num_layers": self.num_layers,
            "d_model": self.d_model,
            "num_heads": self.num_heads,
            "patch_size": self.patch_size,
            "sequence_length": self.sequence_length,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{k: int(d[k]) for k in
                      ("num_layers", "d_model", "num_heads", "patch_size", "sequence_length")})


def check_frame_divisibility(H: int, W: int, patch_size: int) -> None:
    if H % patch_size != 0:
        raise ShapeError(f"frame height {H} not divisible by patch_size {patch_size} (axis H)")
    if W % patch_size != 0:
        raise ShapeError(f"frame width {W} not divisible by patch_size {patch_size} (axis W)")


class PatchEmbed(nn.Module):
    """Maps non-overlapping p x p x 3 pixel blocks to d_model vectors.

    Each patch is flattened row-major as (dy, dx, channel) and passed through
    one learned linear projection. (B, T, H, W, 3) -> (B, T, H/p, W/p, D).
    """

    def __init__(self, patch_size: int, d_model: int, in_channels: int = 3):
        super().__init__()
        self.patch_size = patch_size
        self.in_channels = in_channels
        self.proj = nn.Linear(patch_size * patch_size * in_channels, d_model)

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        if frames.ndim != 5 or frames.shape[-1] != self.in_channels:
            raise ShapeError(
                f"expected frames (B, T, H, W, {self.in_channels}), got {tuple(frames.shape)}"
            )
        B, T, H, W, C = frames.shape
        p = self.patch_size
        check_frame_divisibility(H, W, p)
        h, w = H // p, W // p
        # (B, T, h, p, w, p, C) -> (B, T, h, w, p, p, C) -> flatten patches
        x = frames.reshape(B, T, h, p, w, p, C).permute(0, 1, 2, 4, 3, 5, 6)
        x = x.reshape(B, T, h, w, p * p * C)
        return self.proj(x)


class PatchUnembed(nn.Module):
    """Inverse of PatchEmbed: learned projection back to pixel blocks."""

    def __init__(self, patch_size: int, d_model: int, out_channels: int = 3):
        super().__init__()
        self.patch_size = patch_size
        self.out_channels = out_channels
        self.proj = nn.Linear(d_model, patch_size * patch_size * out_channels)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        B, T, h, w, _ = features.shape
        p, C = self.patch_size, self.out_channels
        x = self.proj(features).reshape(B, T, h, w, p, p, C)
        x = x.permute(0, 1, 2, 4, 3, 5, 6)  # (B, T, h, p, w, p, C)
        return x.reshape(B, T, h * p, w * p, C)


def alibi_slopes(num_heads: int) -> torch.Tensor:
    """Per-head slopes m_h = 2^(-8h / num_heads) for h = 1..num_heads."""
    if num_heads < 1:
        raise ValidationError(f"num_heads must be >= 1, got {num_heads}")
    exponents = torch.arange(1, num_heads + 1, dtype=torch.float64)
    return torch.pow(2.0, -8.0 * exponents / num_heads)


def alibi_bias(
    T: int,
    num_heads: int,
    causal: bool = True,
    device: torch.device | None = None,
    dtype: torch.dtype = torch.float32,
) -> torch.Tensor:
    """Additive attention bias (num_heads, T, T), linear in temporal distance.

    bias[h, i, j] = -m_h * (i - j) for j <= i. Future positions (j > i) get
    NEG_INF when causal, otherwise the symmetric distance bias -m_h * |i - j|.
    """
    if T < 1:
        raise ValidationError(f"T must be >= 1, got {T}")
    slopes = alibi_slopes(num_heads).to(device=device, dtype=torch.float64)
    pos = torch.arange(T, dtype=torch.float64, device=device)
    distance = pos[:, None] - pos[None, :]  # (T, T), i - j
    bias = -slopes[:, None, None] * distance.abs()[None]
    if causal:
        future = distance < 0  # j > i
        bias = bias.masked_fill(future[None], NEG_INF)
    return bias.to(dtype)


class PositionEncodingGenerator(nn.Module):
    """Learned 3x3 spatial neighborhood aggregation, added residually.

    Applied per frame with zero-padded borders; one depthwise filter per
    channel. Output shape equals input shape.
    """

    def __init__(self, d_model: int):
        super().__init__()
        self.conv = nn.Conv2d(d_model, d_model, kernel_size=3, padding=1, groups=d_model)

    def response(self, features: torch.Tensor) -> torch.Tensor:
        """The aggregation term alone (output - input of forward)."""
        B, T, h, w, D = features.shape
        x = features.reshape(B * T, h, w, D).permute(0, 3, 1, 2)
        out = self.conv(x)
        return out.permute(0, 2, 3, 1).reshape(B, T, h, w, D)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        return features + self.response(features)


class MultiHeadAttention(nn.Module):
    """Standard multi-head self-attention with an optional additive bias."""

    def __init__(self, d_model: int, num_heads: int):
        super().__init__()
        self.num_heads = num_heads
        self.head_dim = d_model // num_heads
        self.scale = self.head_dim ** -0.5
        self.q_proj = nn.Linear(d_model, d_model, bias=False)
        self.k_proj = nn.Linear(d_model, d_model, bias=False)
        self.v_proj = nn.Linear(d_model, d_model, bias=False)
        self.out_proj = nn.Linear(d_model, d_model, bias=False)

    def forward(self, x: torch.Tensor, bias: torch.Tensor | None = None) -> torch.Tensor:
        # x: (N, S, D); bias: (num_heads, S, S) additive, already masked
        N, S, D = x.shape
        q = self.q_proj(x).view(N, S, self.num_heads, self.head_dim).transpose(1, 2)
        k = self.k_proj(x).view(N, S, self.num_heads, self.head_dim).transpose(1, 2)
        v = self.v_proj(x).view(N, S, self.num_heads, self.head_dim).transpose(1, 2)
        scores = torch.matmul(q, k.transpose(-2, -1)) * self.scale  # (N, H, S, S)
        if bias is not None:
            scores = scores + bias.unsqueeze(0)
        attn = F.softmax(scores, dim=-1)
        out = torch.matmul(attn, v)
        out = out.transpose(1, 2).reshape(N, S, D)
        return self.out_proj(out)


class FeedForward(nn.Module):
    """Position-wise MLP, hidden width 4 * d_model, GELU."""

    def __init__(self, d_model: int):
        super().__init__()
        self.fc1 = nn.Linear(d_model, 4 * d_model)
        self.fc2 = nn.Linear(4 * d_model, d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.gelu(self.fc1(x)))


class STBlock(nn.Module):
    """One spatiotemporal transformer block.

    In order: position generator (residual), spatial self-attention within
    each frame, temporal self-attention across frames at each spatial site
    (linear distance biases; causal mask when configured), position-wise
    feed-forward. Attention and feed-forward sub-layers are residual with
    pre-normalization. Shape (B, T, h, w, D) is preserved.
    """

    def __init__(self, d_model: int, num_heads: int, causal: bool = True):
        super().__init__()
        self.num_heads = num_heads
        self.causal = causal
        self.peg = PositionEncodingGenerator(d_model)
        self.norm_spatial = nn.LayerNorm(d_model)
        self.spatial_attn = MultiHeadAttention(d_model, num_heads)
        self.norm_temporal = nn.LayerNorm(d_model)
        self.temporal_attn = MultiHeadAttention(d_model, num_heads)
        self.norm_ffn = nn.LayerNorm(d_model)
        self.ffn = FeedForward(d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        B, T, h, w, D = x.shape
        x = self.peg(x)

        # Spatial: (B*T, h*w, D)
        s = x.reshape(B * T, h * w, D)
        s = s + self.spatial_attn(self.norm_spatial(s))
        x = s.reshape(B, T, h, w, D)

        # Temporal: (B*h*w, T, D)
        t = x.permute(0, 2, 3, 1, 4).reshape(B * h * w, T, D)
        bias = alibi_bias(T, self.num_heads, causal=self.causal,
                          device=x.device, dtype=x.dtype)
        t = t + self.temporal_attn(self.norm_temporal(t), bias=bias)
        x = t.reshape(B, h, w, T, D).permute(0, 3, 1, 2, 4)

        x = x + self.ffn(self.norm_ffn(x))
        return x


class STTransformer(nn.Module):
    """Stack of ST-Blocks with a final pre-norm-style layer norm."""

    def __init__(self, num_layers: int, d_model: int, num_heads: int, causal: bool = True):
        super().__init__()
        self.blocks = nn.ModuleList(
            [STBlock(d_model, num_heads, causal=causal) for _ in range(num_layers)]
        )
        self.final_norm = nn.LayerNorm(d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 5:
            raise ShapeError(f"expected features (B, T, h, w, D), got {tuple(x.shape)}")
        for block in self.blocks:
            x = block(x)
        return self.final_norm(x)

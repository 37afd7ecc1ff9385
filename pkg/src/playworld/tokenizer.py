"""Video tokenizer: causal ST transformer encoder/decoder around a VQ bottleneck.

Encodes frame sequences in [0, 1] to discrete token grids (B, T, h, w) and
decodes token grids back to frames. Trained with pixel MSE plus the standard
vector-quantization codebook and commitment terms.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .errors import ConfigurationError, ShapeError, TrainingFault, ValidationError
from .nn_core import ModelConfig, PatchEmbed, PatchUnembed, STTransformer

# Commitment weight; classic VQ-VAE default.
DEFAULT_COMMITMENT_BETA = 0.25


@dataclass
class VQResult:
    """Quantization of a batch of latents.

    indices: long tensor (...,) of nearest-code ids.
    quantized: latents snapped to codes, with straight-through gradients.
    loss: codebook_loss + beta * commitment_loss.
    """

    indices: torch.Tensor
    quantized: torch.Tensor
    loss: torch.Tensor
    codebook_loss: torch.Tensor
    commitment_loss: torch.Tensor


class VectorQuantizer(nn.Module):
    """Euclidean nearest-code quantizer with straight-through gradients.

    Ties in the nearest-code search are broken toward the lowest index.
    The codebook is trained by its own loss term (no EMA); entries are
    initialized uniform in [-1/num_codes, 1/num_codes].
    """

    def __init__(self, num_codes: int, latent_dim: int, beta: float = DEFAULT_COMMITMENT_BETA):
        super().__init__()
        if num_codes < 1:
            raise ConfigurationError(f"codebook must have at least one code, got {num_codes}")
        if latent_dim < 1:
            raise ConfigurationError(f"latent_dim must be >= 1, got {latent_dim}")
        self.num_codes = num_codes
        self.latent_dim = latent_dim
        self.beta = beta
        embeddings = torch.empty(num_codes, latent_dim)
        embeddings.uniform_(-1.0 / num_codes, 1.0 / num_codes)
        self.embeddings = nn.Parameter(embeddings)

    @torch.no_grad()
    def nearest_codes(self, flat: torch.Tensor, chunk: int = 4096) -> torch.Tensor:
        """Nearest code index per latent row, computed in chunks.

        Distances are plain squared Euclidean norms; argmin returns the first
        (lowest-index) minimizer, which realizes the tie rule.
        """
        out = torch.empty(flat.shape[0], dtype=torch.long, device=flat.device)
        emb = self.embeddings
        for start in range(0, flat.shape[0], chunk):
            block = flat[start:start + chunk]
            d = (block.unsqueeze(1) - emb.unsqueeze(0)).pow(2).sum(-1)  # (n, K)
            out[start:start + chunk] = d.argmin(dim=1)
        return out

    def quantize(self, latents: torch.Tensor) -> VQResult:
        if latents.shape[-1] != self.latent_dim:
            raise ShapeError(
                f"latent dim {latents.shape[-1]} does not match codebook dim {self.latent_dim}"
            )
        flat = latents.reshape(-1, self.latent_dim)
        indices = self.nearest_codes(flat.detach())
        codes = self.embeddings[indices].view_as(latents)
        commitment = (latents - codes.detach()).pow(2).mean()
        codebook = (latents.detach() - codes).pow(2).mean()
        quantized = latents + (codes - latents).detach()  # straight-through
        return VQResult(
            indices=indices.view(latents.shape[:-1]),
            quantized=quantized,
            loss=codebook + self.beta * commitment,
            codebook_loss=codebook,
            commitment_loss=commitment,
        )

    def lookup(self, indices: torch.Tensor) -> torch.Tensor:
        if indices.min() < 0 or indices.max() >= self.num_codes:
            bad = int(indices.max() if indices.max() >= self.num_codes else indices.min())
            raise ValidationError(f"token index {bad} out of range [0, {self.num_codes})")
        return self.embeddings[indices]

    def forward(self, latents: torch.Tensor) -> VQResult:
        return self.quantize(latents)


@dataclass
class TokenizerLoss:
    total: torch.Tensor
    reconstruction: torch.Tensor
    codebook: torch.Tensor
    commitment: torch.Tensor

    def check_finite(self) -> None:
        for name in ("reconstruction", "codebook", "commitment"):
            if not torch.isfinite(getattr(self, name)):
                raise TrainingFault(f"non-finite tokenizer loss component: {name}")

    def to_dict(self) -> dict:
        return {
            "loss": float(self.total.detach()),
            "reconstruction": float(self.reconstruction.detach()),
            "codebook": float(self.codebook.detach()),
            "commitment": float(self.commitment.detach()),
        }


def combine_tokenizer_loss(
    reconstruction: torch.Tensor,
    codebook: torch.Tensor,
    commitment: torch.Tensor,
    beta: float,
) -> TokenizerLoss:
    """total = pixel MSE + codebook + beta * commitment."""
    return TokenizerLoss(
        total=reconstruction + codebook + beta * commitment,
        reconstruction=reconstruction,
        codebook=codebook,
        commitment=commitment,
    )


class VideoTokenizer(nn.Module):
    """Encoder-decoder video tokenizer with a discrete bottleneck.

    Encoder: patch embedding -> causal ST-Block stack -> linear head to the
    latent dim -> nearest-code quantization. Decoder mirrors it: code lookup
    -> linear -> causal ST-Block stack -> patch unembedding.
    """

    kind = "tokenizer"

    def __init__(
        self,
        config: ModelConfig,
        num_codes: int = 1024,
        latent_dim: int = 32,
        beta: float = DEFAULT_COMMITMENT_BETA,
    ):
        super().__init__()
        self.config = config
        self.num_codes = num_codes
        self.latent_dim = latent_dim
        self.patch = PatchEmbed(config.patch_size, config.d_model)
        self.encoder = STTransformer(config.num_layers, config.d_model, config.num_heads)
        self.to_latent = nn.Linear(config.d_model, latent_dim)
        self.vq = VectorQuantizer(num_codes, latent_dim, beta)
        self.from_latent = nn.Linear(latent_dim, config.d_model)
        self.decoder = STTransformer(config.num_layers, config.d_model, config.num_heads)
        self.unpatch = PatchUnembed(config.patch_size, config.d_model)

    def _check_frames(self, frames: torch.Tensor) -> None:
        if frames.ndim != 5 or frames.shape[-1] != 3:
            raise ShapeError(f"expected frames (B, T, H, W, 3), got {tuple(frames.shape)}")
        if frames.shape[1] > self.config.sequence_length:
            raise ValidationError(
                f"sequence length {frames.shape[1]} exceeds configured "
                f"maximum {self.config.sequence_length}"
            )

    def encode_latents(self, frames: torch.Tensor) -> torch.Tensor:
        self._check_frames(frames)
        return self.to_latent(self.encoder(self.patch(frames)))

    def encode(self, frames: torch.Tensor) -> torch.Tensor:
        """Frames (B, T, H, W, 3) in [0, 1] -> token indices (B, T, h, w)."""
        return self.vq.quantize(self.encode_latents(frames)).indices

    def decode_raw(self, tokens: torch.Tensor) -> torch.Tensor:
        """Decode without the [0, 1] clamp (used for training)."""
        codes = self.vq.lookup(tokens)
        return self.unpatch(self.decoder(self.from_latent(codes)))

    def decode(self, tokens: torch.Tensor) -> torch.Tensor:
        """Token indices (B, T, h, w) -> frames (B, T, H, W, 3) in [0, 1]."""
        return self.decode_raw(tokens).clamp(0.0, 1.0)

    def decode_quantized(self, quantized: torch.Tensor) -> torch.Tensor:
        # Straight-through path for training: gradients flow to the encoder.
        return self.unpatch(self.decoder(self.from_latent(quantized)))

    def forward(self, frames: torch.Tensor) -> tuple[torch.Tensor, VQResult]:
        latents = self.encode_latents(frames)
        vq = self.vq.quantize(latents)
        recon = self.decode_quantized(vq.quantized)
        return recon, vq

    def loss(self, frames: torch.Tensor) -> TokenizerLoss:
        recon, vq = self.forward(frames)
        mse = (recon - frames).pow(2).mean()
        out = combine_tokenizer_loss(mse, vq.codebook_loss, vq.commitment_loss, self.vq.beta)
        out.check_finite()
        return out

    def extra_state(self) -> dict:
        return {"num_codes": self.num_codes, "latent_dim": self.latent_dim,
                "beta": self.vq.beta}

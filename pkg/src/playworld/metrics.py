"""Evaluation harness: PSNR, SSIM, Frechet feature distance, controllability.

The controllability score is the PSNR gap, per prediction step, between a
rollout driven by the ground-truth actions and one driven by uniformly
random actions, with identical decoding noise. Frechet distances use a
pluggable feature extractor; the default desk-scale extractor is a frozen
random convolutional network with a recorded seed, reported as a proxy so
numbers are never silently compared across extractors.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg
import torch

from . import dynamics as dyn
from .checkpoints import Bundle, load_checkpoint
from .data import EpisodeDataset, frames_to_float, mask_velocity_regions
from .errors import ValidationError

log = logging.getLogger(__name__)

PSNR_MAX_DB = 100.0
REPORT_VERSION = "1"


def _to_numpy(x) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        x = x.detach().cpu().numpy()
    return np.asarray(x, dtype=np.float64)


def psnr(x, y) -> float:
    """10 * log10(1 / MSE) over all pixels, clamped to 100 dB."""
    x, y = _to_numpy(x), _to_numpy(y)
    if x.shape != y.shape:
        raise ValidationError(f"shape mismatch: {x.shape} vs {y.shape}")
    mse = float(np.mean((x - y) ** 2))
    if mse <= 0:
        return PSNR_MAX_DB
    return min(10.0 * math.log10(1.0 / mse), PSNR_MAX_DB)


def psnr_per_frame(x, y) -> np.ndarray:
    """PSNR per leading index pair (..., H, W, C) -> (...) array."""
    x, y = _to_numpy(x), _to_numpy(y)
    if x.shape != y.shape:
        raise ValidationError(f"shape mismatch: {x.shape} vs {y.shape}")
    mse = ((x - y) ** 2).mean(axis=(-1, -2, -3))
    with np.errstate(divide="ignore"):
        out = 10.0 * np.log10(1.0 / mse)
    return np.minimum(out, PSNR_MAX_DB)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def ssim(x, y, window_size: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03, data_range: float = 1.0) -> float:
    """Gaussian-windowed SSIM, valid windows only, channels then frames averaged."""
    x, y = _to_numpy(x), _to_numpy(y)
    if x.shape != y.shape:
        raise ValidationError(f"shape mismatch: {x.shape} vs {y.shape}")
    if x.ndim < 3:
        raise ValidationError(f"expected (..., H, W, C) frames, got shape {x.shape}")
    H, W, C = x.shape[-3:]
    if H < window_size or W < window_size:
        raise ValidationError(
            f"frames {H}x{W} smaller than the {window_size}x{window_size} window"
        )
    xs = x.reshape(-1, H, W, C)
    ys = y.reshape(-1, H, W, C)
    # separable Gaussian, valid windows; chunked to bound the im2col buffers
    half = (window_size - 1) / 2.0
    g = np.exp(-((np.arange(window_size, dtype=np.float64) - half) ** 2)
               / (2.0 * sigma ** 2))
    g /= g.sum()
    k_col = torch.from_numpy(g).reshape(1, 1, window_size, 1)
    k_row = torch.from_numpy(g).reshape(1, 1, 1, window_size)

    def filt(t: torch.Tensor) -> torch.Tensor:
        t = torch.nn.functional.conv2d(t, k_col)
        return torch.nn.functional.conv2d(t, k_row)

    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    values = []
    chunk = 256
    for start in range(0, xs.shape[0], chunk):
        tx = torch.from_numpy(
            np.ascontiguousarray(xs[start:start + chunk].transpose(0, 3, 1, 2))
        ).reshape(-1, 1, H, W)
        ty = torch.from_numpy(
            np.ascontiguousarray(ys[start:start + chunk].transpose(0, 3, 1, 2))
        ).reshape(-1, 1, H, W)
        mu_x, mu_y = filt(tx), filt(ty)
        sigma_x = filt(tx * tx) - mu_x * mu_x
        sigma_y = filt(ty * ty) - mu_y * mu_y
        sigma_xy = filt(tx * ty) - mu_x * mu_y
        s = ((2 * mu_x * mu_y + c1) * (2 * sigma_xy + c2)) / (
            (mu_x ** 2 + mu_y ** 2 + c1) * (sigma_x + sigma_y + c2))
        values.append(s.reshape(s.shape[0], -1))
    return float(torch.cat(values).mean())


def fit_gaussian(features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 2:
        raise ValidationError("need at least 2 feature rows to fit a Gaussian")
    mu = features.mean(axis=0)
    cov = np.cov(features, rowvar=False)
    return mu, np.atleast_2d(cov)


def frechet_distance(mu1, cov1, mu2, cov2, eps: float = 1e-6) -> float:
    """||mu1 - mu2||^2 + Tr(cov1 + cov2 - 2 (cov1 cov2)^(1/2))."""
    mu1, mu2 = np.asarray(mu1, dtype=np.float64), np.asarray(mu2, dtype=np.float64)
    cov1, cov2 = np.atleast_2d(cov1).astype(np.float64), np.atleast_2d(cov2).astype(np.float64)
    diff = mu1 - mu2
    covmean, _ = scipy.linalg.sqrtm(cov1 @ cov2, disp=False)
    if not np.isfinite(covmean).all():
        log.info("singular covariance product; applying %.0e diagonal regularization", eps)
        offset = np.eye(cov1.shape[0]) * eps
        covmean, _ = scipy.linalg.sqrtm((cov1 + offset) @ (cov2 + offset), disp=False)
    if np.iscomplexobj(covmean):
        covmean = covmean.real
    return float(diff @ diff + np.trace(cov1) + np.trace(cov2) - 2.0 * np.trace(covmean))


class IdentityExtractor:
    """Features are the flattened raw values; for tests and tiny inputs."""

    id = "identity"

    def features(self, frames) -> np.ndarray:
        arr = _to_numpy(frames)
        return arr.reshape(arr.shape[0], -1)


class RandomConvExtractor:
    """Frozen random convolutional feature map with a recorded seed."""

    def __init__(self, seed: int = 0, feature_dim: int = 64):
        self.seed = seed
        self.feature_dim = feature_dim
        self.id = f"randconv{feature_dim}-seed{seed}"
        g = torch.Generator().manual_seed(seed)
        widths = [3, 32, 64, feature_dim]
        self.weights = []
        for cin, cout in zip(widths[:-1], widths[1:]):
            w = torch.randn(cout, cin, 4, 4, generator=g) * (1.0 / math.sqrt(cin * 16))
            self.weights.append(w)

    @torch.no_grad()
    def features(self, frames) -> np.ndarray:
        arr = _to_numpy(frames).astype(np.float32)
        x = torch.from_numpy(arr.reshape(-1, *arr.shape[-3:])).permute(0, 3, 1, 2)
        for w in self.weights:
            x = torch.nn.functional.conv2d(x, w, stride=2, padding=1)
            x = torch.nn.functional.relu(x)
        return x.mean(dim=(2, 3)).numpy().astype(np.float64)


def fid_from_features(real: np.ndarray, generated: np.ndarray) -> float:
    mu1, cov1 = fit_gaussian(real)
    mu2, cov2 = fit_gaussian(generated)
    return frechet_distance(mu1, cov1, mu2, cov2)


def fid_proxy(real_frames, generated_frames, extractor=None) -> float:
    """Frechet distance between feature Gaussians; frames pool across time."""
    extractor = extractor or RandomConvExtractor()
    real = _to_numpy(real_frames)
    gen = _to_numpy(generated_frames)
    real = real.reshape(-1, *real.shape[-3:])
    gen = gen.reshape(-1, *gen.shape[-3:])
    if real.shape[0] < 2 or gen.shape[0] < 2:
        raise ValidationError("need at least 2 frames per side")
    return fid_from_features(extractor.features(real), extractor.features(gen))


# -- evaluation sequences ----------------------------------------------------


def gather_sequences(
    dataset: EpisodeDataset,
    split: str,
    n_sequences: int,
    length: int,
    rng: np.random.Generator,
) -> tuple[torch.Tensor, torch.Tensor, bool]:
    """Deterministically sample eval windows; returns frames, actions, overlay flag."""
    ids = [i for i in dataset.split_ids(split) if dataset.episode(i).T >= length]
    if not ids:
        raise ValidationError(f"no episode in split {split!r} has {length} frames")
    frames = np.empty((n_sequences, length, *dataset.episode(ids[0]).frames.shape[1:]),
                      dtype=np.float32)
    actions = np.empty((n_sequences, length - 1), dtype=np.int64)
    overlay = False
    for k in range(n_sequences):
        ep = dataset.episode(ids[int(rng.integers(len(ids)))])
        start = int(rng.integers(ep.T - length + 1))
        frames[k] = frames_to_float(ep.frames[start:start + length])
        actions[k] = ep.actions[start:start + length - 1]
        overlay = overlay or ep.velocity_overlay
    return torch.from_numpy(frames), torch.from_numpy(actions), overlay


@dataclass
class RolloutEval:
    generated: torch.Tensor  # (B, horizon, H, W, 3)
    ground_truth: torch.Tensor
    psnr_per_t: np.ndarray  # (B, horizon)


def _rollout_eval(
    bundle: Bundle,
    frames: torch.Tensor,
    actions: torch.Tensor,
    context: int,
    horizon: int,
    decode_seed: int,
    mask_velocity: bool,
    ignore_actions: bool = False,
) -> RolloutEval:
    generator = torch.Generator().manual_seed(decode_seed)
    generated = dyn.rollout(
        bundle.model, bundle.tokenizer, frames[:, :context], actions,
        horizon, generator, lam=bundle.lam, ignore_actions=ignore_actions,
    )
    gt = frames[:, context:context + horizon]
    gen_m = mask_velocity_regions(generated, has_overlay=mask_velocity)
    gt_m = mask_velocity_regions(gt, has_overlay=mask_velocity)
    return RolloutEval(
        generated=gen_m, ground_truth=gt_m,
        psnr_per_t=psnr_per_frame(gen_m, gt_m),
    )


def lam_actions_for(bundle: Bundle, frames: torch.Tensor) -> torch.Tensor:
    """Latent-action index sequence inferred from the ground-truth frames."""
    with torch.no_grad():
        return bundle.lam.infer_actions(frames).indices


def delta_t_psnr(
    bundle: Bundle,
    dataset: EpisodeDataset,
    context: int = 1,
    horizon: int = 10,
    n_sequences: int = 100,
    seed: int = 0,
    split: str = "all",
    mask_velocity: bool = False,
    ignore_actions: bool = False,
) -> dict:
    """Controllability: PSNR(true actions) - PSNR(random actions), per step t.

    Both rollouts share the decoding noise seed. Random actions are uniform
    over the action space (latent or agent, per the model variant).
    """
    length = context + horizon
    rng = np.random.default_rng(seed)
    frames, actions, _ = gather_sequences(dataset, split, n_sequences, length, rng)
    if bundle.variant == "latent_action":
        actions = lam_actions_for(bundle, frames)
        n_actions = bundle.lam.num_actions
    else:
        n_actions = bundle.model.config.num_actions
    random_actions = torch.from_numpy(
        rng.integers(0, n_actions, size=actions.shape).astype(np.int64))

    true_eval = _rollout_eval(bundle, frames, actions, context, horizon,
                              decode_seed=seed, mask_velocity=mask_velocity,
                              ignore_actions=ignore_actions)
    rand_eval = _rollout_eval(bundle, frames, random_actions, context, horizon,
                              decode_seed=seed, mask_velocity=mask_velocity,
                              ignore_actions=ignore_actions)
    delta = true_eval.psnr_per_t - rand_eval.psnr_per_t  # (B, horizon)
    curve = delta.mean(axis=0)
    return {
        "curve": [float(v) for v in curve],
        "mean": float(curve.mean()),
        "final": float(curve[-1]),
        "psnr_true": float(true_eval.psnr_per_t.mean()),
        "psnr_random": float(rand_eval.psnr_per_t.mean()),
        "n_sequences": n_sequences,
    }


def run_eval(
    checkpoint: str | Bundle,
    data: str,
    context: int = 1,
    horizon: int = 10,
    metrics: tuple[str, ...] = ("psnr", "ssim", "fid", "dpsnr"),
    mask_velocity: bool = False,
    n_sequences: int = 100,
    seed: int = 0,
    split: str = "all",
    out: str | None = None,
    extractor=None,
) -> dict:
    """Evaluate a checkpoint on a dataset; returns (and optionally writes) a report.

    Dynamics checkpoints are scored on rollouts; tokenizer checkpoints on
    reconstructions; latent action checkpoints on next-frame predictions.
    """
    if context not in (1, 4):
        raise ValidationError(f"context must be 1 or 4, got {context}")
    bundle = checkpoint if isinstance(checkpoint, Bundle) else load_checkpoint(checkpoint)
    dataset = EpisodeDataset(data)
    rng = np.random.default_rng(seed)
    extractor = extractor or RandomConvExtractor()

    delta: dict | None = None
    if bundle.kind == "dynamics":
        length = context + horizon
        frames, actions, overlay = gather_sequences(dataset, split, n_sequences, length, rng)
        if bundle.variant == "latent_action":
            actions = lam_actions_for(bundle, frames)
            n_actions = bundle.lam.num_actions
        else:
            n_actions = bundle.model.config.num_actions
        ev = _rollout_eval(bundle, frames, actions, context, horizon,
                           decode_seed=seed, mask_velocity=mask_velocity)
        pred, gt = ev.generated, ev.ground_truth
        per_horizon = {"psnr": [float(v) for v in ev.psnr_per_t.mean(axis=0)]}
        if "dpsnr" in metrics:
            random_actions = torch.from_numpy(
                rng.integers(0, n_actions, size=tuple(actions.shape)).astype(np.int64))
            rand_ev = _rollout_eval(bundle, frames, random_actions, context, horizon,
                                    decode_seed=seed, mask_velocity=mask_velocity)
            curve = (ev.psnr_per_t - rand_ev.psnr_per_t).mean(axis=0)
            delta = {"curve": [float(v) for v in curve], "mean": float(curve.mean()),
                     "final": float(curve[-1])}
    else:
        length = max(horizon, 2)
        frames, _, overlay = gather_sequences(dataset, split, n_sequences, length, rng)
        with torch.no_grad():
            if bundle.kind == "tokenizer":
                pred = bundle.model.decode(bundle.model.encode(frames))
                gt = frames
            else:  # latent action model: next-frame prediction
                acts = bundle.model.infer_actions(frames)
                pred = bundle.model.predict_next(frames, acts.embeddings).clamp(0, 1)
                gt = frames[:, 1:]
        pred = mask_velocity_regions(pred, has_overlay=mask_velocity)
        gt = mask_velocity_regions(gt, has_overlay=mask_velocity)
        per_horizon = {"psnr": [float(v) for v in psnr_per_frame(pred, gt).mean(axis=0)]}

    results: dict = {}
    if "psnr" in metrics:
        results["psnr"] = psnr(pred, gt)
    if "ssim" in metrics:
        results["ssim"] = ssim(pred, gt)
    if "fid" in metrics:
        results["fid"] = fid_proxy(gt, pred, extractor)
    if delta is not None:
        results["delta_t_psnr"] = delta["mean"]
        per_horizon["delta_t_psnr"] = delta["curve"]

    report = {
        "version": REPORT_VERSION,
        "metrics": results,
        "per_horizon": per_horizon,
        "config": {
            "checkpoint_digest": bundle.digest,
            "kind": bundle.kind,
            "variant": bundle.variant,
            "context": context,
            "horizon": horizon,
            "maskgit_steps": (bundle.model.config.maskgit_steps
                              if bundle.kind == "dynamics" else None),
            "dataset": str(data),
            "split": split,
            "n_sequences": n_sequences,
            "seed": seed,
            "mask_velocity": bool(mask_velocity),
            "dataset_has_overlay": bool(overlay),
            "extractor": extractor.id,
        },
    }
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(json.dumps(report, indent=2), encoding="utf-8")
    return report

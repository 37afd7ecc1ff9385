"""PPO agent for exploration-driven data collection.

A small convolutional actor-critic trained with the clipped surrogate
objective (clip 0.2), generalized advantage estimation (lambda 0.95),
discount 0.999 and an entropy bonus of 0.01. The trained policy explores the
toy platformer far beyond what a random policy reaches, which is the whole
point: its episodes are the diverse dataset.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .envs import NUM_ACTIONS, ToyPlatformer
from .errors import TrainingFault

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PpoConfig:
    total_steps: int = 200_000
    num_envs: int = 16
    rollout_length: int = 128
    lr: float = 2.5e-4
    clip_epsilon: float = 0.2
    gae_lambda: float = 0.95
    discount: float = 0.999
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    update_epochs: int = 4
    minibatch_size: int = 256
    max_grad_norm: float = 0.5
    difficulty: str = "easy"
    velocity_overlay: bool = True
    seed: int = 0
    # stop early once the rolling success rate clears this bar, but never
    # before the value function has had time to settle
    early_stop_success: float = 0.95
    min_steps_before_stop: int = 36_000


class PolicyNet(nn.Module):
    """Shared CNN trunk with policy and value heads; observations are 64x64 RGB."""

    def __init__(self, num_actions: int = NUM_ACTIONS):
        super().__init__()
        self.conv = nn.Sequential(
            nn.AvgPool2d(2),  # 64 -> 32, cheap on CPU
            nn.Conv2d(3, 16, 5, stride=2), nn.ReLU(),
            nn.Conv2d(16, 32, 3, stride=2), nn.ReLU(),
            nn.Conv2d(32, 32, 3, stride=2), nn.ReLU(),
        )
        self.fc = nn.Linear(32 * 2 * 2, 128)
        self.policy_head = nn.Linear(128, num_actions)
        self.value_head = nn.Linear(128, 1)
        # near-uniform initial policy
        nn.init.orthogonal_(self.policy_head.weight, gain=0.01)
        nn.init.zeros_(self.policy_head.bias)

    def forward(self, obs: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        # obs: (B, 64, 64, 3) float in [0, 1]
        x = obs.permute(0, 3, 1, 2)
        x = self.conv(x).flatten(1)
        x = F.relu(self.fc(x))
        return self.policy_head(x), self.value_head(x).squeeze(-1)


class TrainedPolicy:
    """Loaded policy; samples actions from the learned distribution."""

    def __init__(self, net: PolicyNet):
        self.net = net.eval()

    @torch.no_grad()
    def act(self, frame: np.ndarray, rng: np.random.Generator) -> int:
        obs = torch.from_numpy(frame.astype(np.float32) / 255.0).unsqueeze(0)
        logits, _ = self.net(obs)
        probs = F.softmax(logits[0], dim=-1).numpy().astype(np.float64)
        probs /= probs.sum()
        return int(rng.choice(len(probs), p=probs))


def save_policy(path: Path, net: PolicyNet, cfg: PpoConfig, stats: list[dict]) -> None:
    torch.save({"kind": "policy", "state": net.state_dict(),
                "config": asdict(cfg), "stats": stats}, path)


def load_policy(path: Path) -> TrainedPolicy:
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    net = PolicyNet()
    net.load_state_dict(payload["state"])
    return TrainedPolicy(net)


def _batched_obs(frames: list[np.ndarray]) -> torch.Tensor:
    arr = np.stack(frames).astype(np.float32) / 255.0
    return torch.from_numpy(arr)


def kl_to_uniform(net: PolicyNet, frames: np.ndarray) -> float:
    """Mean KL(policy || uniform) over a batch of observations."""
    with torch.no_grad():
        logits, _ = net(_batched_obs(list(frames)))
        logp = F.log_softmax(logits, dim=-1)
        kl = (logp.exp() * (logp - float(np.log(1.0 / NUM_ACTIONS)))).sum(-1)
    return float(kl.mean())


def train_ppo(cfg: PpoConfig, out: Path) -> dict:
    """Run PPO on the toy platformer; returns a summary with the stats history."""
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    net = PolicyNet()
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr)

    envs = [ToyPlatformer(velocity_overlay=cfg.velocity_overlay) for _ in range(cfg.num_envs)]
    seed_counter = cfg.seed * 1_000_000
    frames = []
    for env in envs:
        step = env.reset(seed_counter, difficulty=cfg.difficulty)
        seed_counter += 1
        frames.append(step.frame)

    stats: list[dict] = []
    recent_success: list[float] = []
    steps_done = 0
    iteration = 0

    while steps_done < cfg.total_steps:
        obs_buf = np.empty((cfg.rollout_length, cfg.num_envs, 64, 64, 3), dtype=np.uint8)
        act_buf = np.empty((cfg.rollout_length, cfg.num_envs), dtype=np.int64)
        logp_buf = np.empty((cfg.rollout_length, cfg.num_envs), dtype=np.float32)
        rew_buf = np.zeros((cfg.rollout_length, cfg.num_envs), dtype=np.float32)
        done_buf = np.zeros((cfg.rollout_length, cfg.num_envs), dtype=np.float32)
        val_buf = np.empty((cfg.rollout_length, cfg.num_envs), dtype=np.float32)

        for t in range(cfg.rollout_length):
            obs = _batched_obs(frames)
            with torch.no_grad():
                logits, values = net(obs)
                dist = torch.distributions.Categorical(logits=logits)
                actions = dist.sample()
                logps = dist.log_prob(actions)
            obs_buf[t] = np.stack(frames)
            act_buf[t] = actions.numpy()
            logp_buf[t] = logps.numpy()
            val_buf[t] = values.numpy()
            for i, env in enumerate(envs):
                result = env.step(int(actions[i]))
                rew_buf[t, i] = result.reward
                done_buf[t, i] = float(result.done)
                if result.done:
                    recent_success.append(float(result.reward > 0))
                    result = env.reset(seed_counter, difficulty=cfg.difficulty)
                    seed_counter += 1
                frames[i] = result.frame
            steps_done += cfg.num_envs

        with torch.no_grad():
            _, last_values = net(_batched_obs(frames))
        adv = np.zeros_like(rew_buf)
        last_gae = np.zeros(cfg.num_envs, dtype=np.float32)
        next_value = last_values.numpy()
        for t in reversed(range(cfg.rollout_length)):
            not_done = 1.0 - done_buf[t]
            delta = rew_buf[t] + cfg.discount * next_value * not_done - val_buf[t]
            last_gae = delta + cfg.discount * cfg.gae_lambda * not_done * last_gae
            adv[t] = last_gae
            next_value = val_buf[t]
        returns = adv + val_buf

        b_obs = obs_buf.reshape(-1, 64, 64, 3)
        b_act = torch.from_numpy(act_buf.reshape(-1))
        b_logp = torch.from_numpy(logp_buf.reshape(-1))
        b_adv = torch.from_numpy(adv.reshape(-1))
        b_adv = (b_adv - b_adv.mean()) / (b_adv.std() + 1e-8)
        b_ret = torch.from_numpy(returns.reshape(-1))

        n = b_act.shape[0]
        policy_losses, value_losses, entropies = [], [], []
        for _ in range(cfg.update_epochs):
            perm = rng.permutation(n)
            for start in range(0, n, cfg.minibatch_size):
                idx = perm[start:start + cfg.minibatch_size]
                mb_obs = _batched_obs(list(b_obs[idx]))
                logits, values = net(mb_obs)
                dist = torch.distributions.Categorical(logits=logits)
                logp = dist.log_prob(b_act[idx])
                ratio = (logp - b_logp[idx]).exp()
                surr1 = ratio * b_adv[idx]
                surr2 = ratio.clamp(1 - cfg.clip_epsilon, 1 + cfg.clip_epsilon) * b_adv[idx]
                policy_loss = -torch.min(surr1, surr2).mean()
                value_loss = F.mse_loss(values, b_ret[idx])
                entropy = dist.entropy().mean()
                loss = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy
                if not torch.isfinite(loss):
                    raise TrainingFault("non-finite PPO loss")
                opt.zero_grad()
                loss.backward()
                nn.utils.clip_grad_norm_(net.parameters(), cfg.max_grad_norm)
                opt.step()
                policy_losses.append(float(policy_loss))
                value_losses.append(float(value_loss))
                entropies.append(float(entropy))

        iteration += 1
        window = recent_success[-100:]
        success = float(np.mean(window)) if window else 0.0
        stats.append({
            "iteration": iteration,
            "steps": steps_done,
            "success_rate": success,
            "episodes": len(recent_success),
            "policy_loss": float(np.mean(policy_losses)),
            "value_loss": float(np.mean(value_losses)),
            "entropy": float(np.mean(entropies)),
        })
        log.info("ppo iter %d steps %d success %.2f value_loss %.3f",
                 iteration, steps_done, success, stats[-1]["value_loss"])
        if (len(window) >= 100 and success >= cfg.early_stop_success
                and steps_done >= cfg.min_steps_before_stop):
            log.info("early stop: success %.2f", success)
            break

    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_policy(out, net, cfg, stats)
    return {"checkpoint": str(out), "steps": steps_done, "stats": stats}


def evaluate_policy(
    policy: TrainedPolicy,
    n_episodes: int = 100,
    difficulty: str = "easy",
    velocity_overlay: bool = True,
    seed: int = 10_000_000,
) -> dict:
    env = ToyPlatformer(velocity_overlay=velocity_overlay)
    rng = np.random.default_rng(seed)
    successes, max_xs, lengths = [], [], []
    for i in range(n_episodes):
        step = env.reset(seed + i, difficulty=difficulty)
        while not step.done:
            step = env.step(policy.act(step.frame, rng))
        successes.append(float(step.reward > 0))
        max_xs.append(step.info["max_x"])
        lengths.append(env.steps)
    return {
        "success_rate": float(np.mean(successes)),
        "mean_max_x": float(np.mean(max_xs)),
        "mean_length": float(np.mean(lengths)),
    }

"""Shared actor-critic policy (squashed Gaussian) and the PPO training loop.

One network serves the whole population; heterogeneity enters through the
trait slots of the observation. Each agent keeps its own rollout buffer and
an update fires whenever any buffer reaches the rollout length, mid-episode
included. All tensors are float64 on CPU and every random draw comes from
seeded numpy generators, so runs are reproducible end to end.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn
from torch.nn.functional import softplus

from .env import SimConfig, episode_utility, run_episode
from .pomdp import ACTION_DIM, OBS_DIM, ObsBounds, RolloutRecord, build_observation
from .traits import TraitPriors, sample_population


class NumericalError(RuntimeError):
    pass


@dataclass(frozen=True)
class PolicyConfig:
    hidden: int = 512
    hidden_layers: int = 3
    log_std_init: float = -1.0
    learning_rate: float = 1e-4
    clip_eps: float = 0.8
    epochs: int = 5            # updates per rollout
    minibatch: int = 512
    t_rollout: int = 1024
    max_grad_norm: float = 0.5
    gae_lambda: float = 0.95
    reward_clip: float = 5.0
    reward_std_floor: float = 1e-8


def derive_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *key]))


def orthogonal_matrix(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """Orthogonal (rows x cols) init from a numpy generator.

    The smaller dimension is orthonormal; signs are fixed by the QR
    diagonal so the result is deterministic.
    """
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return q


def _linear(in_dim: int, out_dim: int, rng: np.random.Generator,
            scale: float = 1.0) -> nn.Linear:
    layer = nn.Linear(in_dim, out_dim, dtype=torch.float64)
    with torch.no_grad():
        w = orthogonal_matrix(out_dim, in_dim, rng) * scale
        layer.weight.copy_(torch.from_numpy(w))
        layer.bias.zero_()
    return layer


def _mlp(in_dim: int, hidden: int, depth: int, out_dim: int,
         rng: np.random.Generator, final_scale: float) -> nn.Sequential:
    layers: list[nn.Module] = []
    dim = in_dim
    for _ in range(depth):
        layers += [_linear(dim, hidden, rng), nn.Tanh()]
        dim = hidden
    layers.append(_linear(dim, out_dim, rng, scale=final_scale))
    return nn.Sequential(*layers)


class ActorCritic(nn.Module):
    """Three-layer tanh MLPs for the action mean and the value, plus a
    learned state-independent log-std; the actor's final layer starts
    scaled down by 100 so initial actions sit near tanh(0)."""

    def __init__(self, cfg: PolicyConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.actor = _mlp(OBS_DIM, cfg.hidden, cfg.hidden_layers, ACTION_DIM,
                          rng, final_scale=0.01)
        self.critic = _mlp(OBS_DIM, cfg.hidden, cfg.hidden_layers, 1,
                           rng, final_scale=1.0)
        self.log_std = nn.Parameter(
            torch.full((ACTION_DIM,), cfg.log_std_init, dtype=torch.float64))

    def actor_mean(self, obs: torch.Tensor) -> torch.Tensor:
        return self.actor(obs)

    def value(self, obs: torch.Tensor) -> torch.Tensor:
        return self.critic(obs).squeeze(-1)

    def actor_parameters(self):
        return list(self.actor.parameters()) + [self.log_std]


def squashed_log_prob(mean: torch.Tensor, log_std: torch.Tensor,
                      presquash: torch.Tensor) -> torch.Tensor:
    """log pi(tanh(z) | obs) summed over action dims, with the tanh
    change-of-variables correction in its softplus-stable form."""
    std = log_std.exp()
    gauss = (-0.5 * ((presquash - mean) / std) ** 2 - log_std
             - 0.5 * math.log(2.0 * math.pi))
    squash = 2.0 * (math.log(2.0) - presquash - softplus(-2.0 * presquash))
    return (gauss - squash).sum(-1)


def act(net: ActorCritic, obs: np.ndarray, rng: np.random.Generator,
        deterministic: bool = False) -> tuple[np.ndarray, np.ndarray, float]:
    """Sample (or take the mode of) the squashed Gaussian policy.

    Returns (action, presquash draw, log-probability). The Gaussian noise
    comes from the caller's numpy generator, keeping episodes seed-exact.
    """
    with torch.no_grad():
        o = torch.as_tensor(obs, dtype=torch.float64)
        mean = net.actor_mean(o)
        if deterministic:
            z = mean
        else:
            eps = torch.from_numpy(rng.standard_normal(ACTION_DIM))
            z = mean + net.log_std.exp() * eps
        logp = squashed_log_prob(mean, net.log_std, z)
        action = torch.tanh(z)
    return action.numpy(), z.numpy(), float(logp)


def evaluate(net: ActorCritic, obs: torch.Tensor, presquash: torch.Tensor
             ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Recompute log-probs for stored pre-squash draws, plus entropies and
    critic values, over a batch."""
    if obs.shape[-1] != OBS_DIM or presquash.shape[-1] != ACTION_DIM:
        raise ValueError("evaluate: batch dimensions do not match the nets")
    mean = net.actor_mean(obs)
    log_probs = squashed_log_prob(mean, net.log_std, presquash)
    per_sample_entropy = (net.log_std
                          + 0.5 * math.log(2.0 * math.pi * math.e)).sum()
    entropies = per_sample_entropy.expand(obs.shape[0])
    values = net.value(obs)
    return log_probs, entropies, values


def ppo_losses(net: ActorCritic, obs: torch.Tensor, presquash: torch.Tensor,
               old_log_probs: torch.Tensor, advantages: torch.Tensor,
               returns: torch.Tensor, clip_eps: float
               ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Clipped-surrogate actor loss, squared-error critic loss, entropy."""
    log_probs, entropies, values = evaluate(net, obs, presquash)
    ratio = torch.exp(log_probs - old_log_probs)
    clipped = torch.clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps)
    actor_loss = -torch.min(ratio * advantages, clipped * advantages).mean()
    critic_loss = ((values - returns) ** 2).mean()
    return actor_loss, critic_loss, entropies.mean()


def normalize_rewards(rewards: np.ndarray, clip: float, floor: float) -> np.ndarray:
    """Scale by the buffer's sample std (floored) and clip; no centering."""
    std = rewards.std(ddof=1) if len(rewards) > 1 else 0.0
    return np.clip(rewards / max(std, floor), -clip, clip)


def gae_advantages(deltas: np.ndarray, gammas: np.ndarray,
                   episodes: np.ndarray, lam: float) -> np.ndarray:
    """Generalized advantage recursion with per-record discounts.

    The chain resets across episode boundaries inside a buffer, since
    consecutive records then belong to different trajectories.
    """
    adv = np.empty_like(deltas)
    carry = 0.0
    for k in range(len(deltas) - 1, -1, -1):
        if k == len(deltas) - 1 or episodes[k + 1] != episodes[k]:
            carry = 0.0
        carry = deltas[k] + gammas[k] * lam * carry
        adv[k] = carry
    return adv


@dataclass(frozen=True)
class UpdateDiagnostics:
    mean_reward: float
    actor_loss: float
    critic_loss: float
    entropy: float


def ppo_update(net: ActorCritic, opt_actor: torch.optim.Optimizer,
               opt_critic: torch.optim.Optimizer, buffer: list[RolloutRecord],
               cfg: PolicyConfig, rng: np.random.Generator) -> UpdateDiagnostics:
    """One full PPO update on a flushed per-agent buffer."""
    if len(buffer) != cfg.t_rollout:
        raise ValueError(f"expected a full buffer of {cfg.t_rollout}, "
                         f"got {len(buffer)}")
    obs = torch.from_numpy(np.stack([r.obs for r in buffer]))
    next_obs = torch.from_numpy(np.stack([r.next_obs for r in buffer]))
    presquash = torch.from_numpy(np.stack([r.presquash for r in buffer]))
    old_logp = torch.from_numpy(np.array([r.log_prob for r in buffer]))
    rewards = np.array([r.reward for r in buffer])
    gammas = np.array([r.gamma for r in buffer])
    episodes = np.array([r.episode for r in buffer])

    norm_rewards = normalize_rewards(rewards, cfg.reward_clip,
                                     cfg.reward_std_floor)
    with torch.no_grad():
        values = net.value(obs).numpy()
        next_values = net.value(next_obs).numpy()
    deltas = norm_rewards + gammas * next_values - values
    adv = gae_advantages(deltas, gammas, episodes, cfg.gae_lambda)
    returns = torch.from_numpy(adv + values)
    adv_t = torch.from_numpy(adv)

    n = len(buffer)
    actor_losses, critic_losses, entropies = [], [], []
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.minibatch):
            idx = torch.from_numpy(perm[start:start + cfg.minibatch])
            mb_adv = adv_t[idx]
            mb_adv = (mb_adv - mb_adv.mean()) / (mb_adv.std() + 1e-8)
            actor_loss, critic_loss, entropy = ppo_losses(
                net, obs[idx], presquash[idx], old_logp[idx], mb_adv,
                returns[idx], cfg.clip_eps)
            if not (torch.isfinite(actor_loss) and torch.isfinite(critic_loss)):
                raise NumericalError(
                    f"non-finite PPO loss (actor={actor_loss.item()!r}, "
                    f"critic={critic_loss.item()!r}, reward std="
                    f"{rewards.std()!r})")
            opt_actor.zero_grad()
            opt_critic.zero_grad()
            (actor_loss + critic_loss).backward()
            nn.utils.clip_grad_norm_(net.actor_parameters(), cfg.max_grad_norm)
            nn.utils.clip_grad_norm_(net.critic.parameters(), cfg.max_grad_norm)
            opt_actor.step()
            opt_critic.step()
            actor_losses.append(actor_loss.item())
            critic_losses.append(critic_loss.item())
            entropies.append(entropy.item())
    return UpdateDiagnostics(float(rewards.mean()), float(np.mean(actor_losses)),
                             float(np.mean(critic_losses)), float(np.mean(entropies)))


class PolicyPopulation:
    """Shared-policy population: traits resampled each episode, one network
    deciding for everyone. Used as-is for evaluation/simulation; the trainer
    subclass adds buffering and updates."""

    kind = "rl"

    def __init__(self, net: ActorCritic, priors: TraitPriors, n: int,
                 bounds: ObsBounds | None = None,
                 mask: frozenset[str] | set[str] = frozenset(),
                 fixed_traits: frozenset[str] | set[str] = frozenset(),
                 deterministic: bool = False):
        self.net = net
        self.priors = priors
        self.n = n
        self.bounds = bounds if bounds is not None else ObsBounds.from_priors(priors)
        self.mask = frozenset(mask)
        self.fixed_traits = frozenset(fixed_traits)
        self.deterministic = deterministic
        self.traits = []
        self._cfg: SimConfig | None = None

    def begin_episode(self, cfg: SimConfig, rng: np.random.Generator):
        self._cfg = cfg
        self.traits = sample_population(self.priors, self.n, rng,
                                        fixed=self.fixed_traits)
        return self.traits

    def build_obs(self, j: int, ctx, rng: np.random.Generator) -> np.ndarray:
        return build_observation(ctx, self.traits[j], rng, self.bounds,
                                 self._cfg.v_max, self._cfg.depth_cap,
                                 self.mask)

    def act(self, j: int, obs: np.ndarray, rng: np.random.Generator):
        return act(self.net, obs, rng, self.deterministic)

    def on_transition(self, j: int, rec: RolloutRecord) -> None:
        pass


class PPOTrainer(PolicyPopulation):
    """Training population: per-agent buffers, updates on every flush."""

    def __init__(self, net: ActorCritic, priors: TraitPriors, n: int,
                 policy_cfg: PolicyConfig, update_rng: np.random.Generator,
                 bounds: ObsBounds | None = None,
                 mask: frozenset[str] | set[str] = frozenset(),
                 fixed_traits: frozenset[str] | set[str] = frozenset(),
                 max_updates: int | None = None):
        super().__init__(net, priors, n, bounds, mask, fixed_traits,
                         deterministic=False)
        self.policy_cfg = policy_cfg
        self.update_rng = update_rng
        self.max_updates = max_updates
        self.buffers: dict[int, list[RolloutRecord]] = defaultdict(list)
        self.curves: list[UpdateDiagnostics] = []
        self.opt_actor = torch.optim.Adam(net.actor_parameters(),
                                          lr=policy_cfg.learning_rate)
        self.opt_critic = torch.optim.Adam(net.critic.parameters(),
                                           lr=policy_cfg.learning_rate)

    @property
    def updates_done(self) -> int:
        return len(self.curves)

    def on_transition(self, j: int, rec: RolloutRecord) -> None:
        if self.max_updates is not None and self.updates_done >= self.max_updates:
            return
        buf = self.buffers[j]
        buf.append(rec)
        if len(buf) == self.policy_cfg.t_rollout:
            diag = ppo_update(self.net, self.opt_actor, self.opt_critic,
                              buf, self.policy_cfg, self.update_rng)
            self.curves.append(diag)
            self.buffers[j] = []


@dataclass
class TrainResult:
    net: ActorCritic
    curves: list[UpdateDiagnostics]
    episode_utilities: list[float]


def train(sim_cfg: SimConfig, priors: TraitPriors, policy_cfg: PolicyConfig,
          episodes: int, seed: int,
          bounds: ObsBounds | None = None,
          mask: frozenset[str] | set[str] = frozenset(),
          fixed_traits: frozenset[str] | set[str] = frozenset(),
          max_updates: int | None = None,
          net: ActorCritic | None = None) -> TrainResult:
    """Outer training loop: run episodes, updating whenever buffers fill.

    Stops early once ``max_updates`` PPO updates have happened. Buffers
    persist across episodes (they clear only when flushed into an update).
    """
    if episodes < 1:
        raise ValueError("training budget must be at least one episode")
    if net is None:
        net = ActorCritic(policy_cfg, derive_rng(seed, 0, 0))
    trainer = PPOTrainer(net, priors, sim_cfg.n, policy_cfg,
                         update_rng=derive_rng(seed, 2, 0), bounds=bounds,
                         mask=mask, fixed_traits=fixed_traits,
                         max_updates=max_updates)
    utilities = []
    for ep in range(episodes):
        rng = derive_rng(seed, 1, ep)
        log = run_episode(sim_cfg, trainer, rng, episode_index=ep)
        utilities.append(episode_utility(log))
        if max_updates is not None and trainer.updates_done >= max_updates:
            break
    return TrainResult(net, trainer.curves, utilities)


CHECKPOINT_VERSION = 1


def save_checkpoint(net: ActorCritic, path) -> None:
    """Versioned binary checkpoint: config scalars + named weight arrays."""
    cfg = net.cfg
    arrays = {
        "version": np.array([CHECKPOINT_VERSION]),
        "config": np.array([cfg.hidden, cfg.hidden_layers]),
        "log_std_init": np.array([cfg.log_std_init]),
    }
    for name, param in net.named_parameters():
        arrays["param." + name] = param.detach().numpy()
    np.savez(path, **arrays)


def load_checkpoint(path, policy_cfg: PolicyConfig | None = None) -> ActorCritic:
    data = np.load(path)
    version = int(data["version"][0])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    hidden, layers = (int(v) for v in data["config"])
    base = policy_cfg or PolicyConfig()
    cfg = PolicyConfig(**{**base.__dict__, "hidden": hidden,
                          "hidden_layers": layers,
                          "log_std_init": float(data["log_std_init"][0])})
    net = ActorCritic(cfg, np.random.default_rng(0))
    with torch.no_grad():
        for name, param in net.named_parameters():
            param.copy_(torch.from_numpy(data["param." + name]))
    return net

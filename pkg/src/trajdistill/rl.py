"""Advantage estimation, clipped policy optimisation and adapter-only updates."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError, RegistryError
from .nn import CRITIC, LABELS, LOGSTD, LORA, AdamW, Linear, Module, Parameter, clip_grad_norm
from .simulator import EpisodeRollout, RewardConfig, run_batch, summarize

PPO_LABELS = (LORA, CRITIC, LOGSTD)
LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class PpoConfig:
    clip: float = 0.2
    gae_lambda: float = 0.95
    gamma: float = 0.99
    rollout_steps: int = 256
    minibatch: int = 64
    epochs: int = 4
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    lr: float = 1e-4
    max_grad_norm: float = 1.0
    iterations: int = 50
    horizon: int = 50
    envs: int = 16
    normalize_advantages: bool = True

    def __post_init__(self):
        if not 0 < self.clip < 1:
            raise ConfigError("clip must lie in (0, 1)")
        if not (0 <= self.gae_lambda <= 1 and 0 <= self.gamma <= 1):
            raise ConfigError("gamma and lambda must lie in [0, 1]")


def gae(rewards, values, dones, bootstrap: float = 0.0, gamma: float = 0.99, lam: float = 0.95):
    """Generalised advantage estimates and returns for one trajectory."""
    r = np.asarray(rewards, dtype=float)
    if r.size == 0:
        raise ContractError("cannot estimate advantages of an empty rollout")
    v = np.asarray(values, dtype=float)
    d = np.asarray(dones, dtype=float)
    T = len(r)
    next_v = np.append(v[1:], bootstrap)
    delta = r + gamma * next_v * (1.0 - d) - v
    adv = np.zeros(T)
    running = 0.0
    for t in range(T - 1, -1, -1):
        running = delta[t] + gamma * lam * (1.0 - d[t]) * running
        adv[t] = running
    return adv, adv + v


def rollout_gae(ro: EpisodeRollout, gamma: float, lam: float):
    return gae(ro.rewards, ro.values, ro.dones, ro.bootstrap, gamma, lam)


def clipped_surrogate(ratio, adv, eps: float = 0.2) -> Tensor:
    ratio = ad.as_tensor(ratio)
    return ad.minimum(ratio * adv, ad.clip(ratio, 1.0 - eps, 1.0 + eps) * adv)


def gaussian_log_prob(actions: np.ndarray, mean, log_std) -> Tensor:
    std = ad.exp(log_std)
    z = (actions - mean) / std
    return -0.5 * (z * z).sum(axis=-1) - log_std.sum() - 0.5 * actions.shape[-1] * LOG_2PI


def gaussian_entropy(log_std) -> Tensor:
    return log_std.sum() + 0.5 * log_std.shape[-1] * (1.0 + LOG_2PI)


def ppo_loss(logp_new, logp_old: np.ndarray, adv: np.ndarray, values=None, returns=None,
             entropy=None, cfg: PpoConfig = PpoConfig()) -> tuple[Tensor, dict]:
    """Negated clipped surrogate + value regression - entropy bonus."""
    adv = np.asarray(adv, dtype=float)
    if cfg.normalize_advantages and adv.size > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    ratio = ad.exp(logp_new - np.asarray(logp_old, dtype=float))
    surr = clipped_surrogate(ratio, adv, cfg.clip).mean()
    loss = -surr
    diag = {"surrogate": surr.item()}
    if values is not None:
        dv = values - np.asarray(returns, dtype=float)
        vloss = (dv * dv).mean()
        loss = loss + cfg.value_coef * vloss
        diag["value_loss"] = vloss.item()
    if entropy is not None:
        loss = loss - cfg.entropy_coef * entropy
        diag["entropy"] = entropy.item()
    r = ratio.data
    diag["clip_frac"] = float(np.mean(np.abs(r - 1.0) > cfg.clip))
    diag["approx_kl"] = float(np.mean((r - 1.0) - np.log(r)))
    return loss, diag


class Critic(Module):
    def __init__(self, d_in: int, hidden: int, rng: np.random.Generator):
        self.fc1 = Linear(d_in, hidden, rng, label=CRITIC)
        self.fc2 = Linear(hidden, 1, rng, label=CRITIC)

    def __call__(self, h) -> Tensor:
        return self.fc2(ad.tanh(self.fc1(h))).reshape(h.shape[0])


class StudentPolicy:
    """Diagonal Gaussian over (accel, steer): mean from the LoRA head on the
    student's ego embedding, learned log-std, value from the critic."""

    def __init__(self, student, critic: Critic, deterministic: bool = False):
        self.student, self.critic = student, critic
        self.deterministic = deterministic

    def features(self, obs) -> np.ndarray:
        return self.student.features(obs).data

    def act(self, obs, rng: np.random.Generator):
        h = self.features(obs)
        mean = self.student.policy(Tensor(h)).data
        log_std = self.student.log_std.data
        if self.deterministic:
            a = mean.copy()
        else:
            a = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
        z = (a - mean) / np.exp(log_std)
        logp = -0.5 * np.sum(z * z, axis=-1) - log_std.sum() - 0.5 * a.shape[-1] * LOG_2PI
        v = self.critic(Tensor(h)).data
        return a, logp, v, h

    def value(self, obs) -> np.ndarray:
        return self.critic(Tensor(self.features(obs))).data


def check_labels(params) -> None:
    for name, p in params:
        if getattr(p, "label", None) not in LABELS:
            raise RegistryError(f"parameter {name} has no training-role label")


def lora_masked_update(grads: dict, named_params, optimizer: AdamW, allowed=PPO_LABELS) -> list:
    """Apply ``optimizer`` using only gradients of parameters whose label is in
    ``allowed``; every other tensor is left untouched."""
    named_params = list(named_params)
    check_labels(named_params)
    keep = {p for _, p in named_params if p.label in allowed}
    for p in optimizer.params:
        if p.label not in allowed:
            raise RegistryError(f"optimizer holds a {p.label!r} tensor outside {allowed}")
    masked = {p: g for p, g in grads.items() if p in keep}
    optimizer.step(masked)
    return [p for p in optimizer.params if p in masked]


def collect(policy: StudentPolicy, scenarios, cfg: PpoConfig, seed: int,
            reward_cfg: RewardConfig = RewardConfig()) -> list[EpisodeRollout]:
    return run_batch(policy, scenarios, cfg.horizon, seed=seed, reward_cfg=reward_cfg)


def ppo_train(student, critic: Critic, suite, cfg: PpoConfig, seed: int = 0,
              reward_cfg: RewardConfig = RewardConfig(), log=None) -> list[dict]:
    """Phase-separated PPO: the distilled body is frozen, so ego features are
    computed once per rollout and only the adapter, log-std and critic learn."""
    rng = np.random.default_rng(seed)
    policy = StudentPolicy(student, critic)
    named = list(student.named_parameters(prefix="student.")) + list(critic.named_parameters(prefix="critic."))
    check_labels(named)
    train_params = [p for _, p in named if p.label in PPO_LABELS]
    opt = AdamW(train_params, lr=cfg.lr, weight_decay=0.0)
    scen = list(suite)
    rows = []
    for it in range(cfg.iterations):
        pick = rng.choice(len(scen), size=min(cfg.envs, len(scen)), replace=False)
        rollouts = collect(policy, [scen[i] for i in pick], cfg, seed=int(rng.integers(2 ** 31)),
                           reward_cfg=reward_cfg)
        feats, acts, logp_old, adv, ret = [], [], [], [], []
        for ro in rollouts:
            a, r = rollout_gae(ro, cfg.gamma, cfg.gae_lambda)
            feats.extend(ro.features)
            acts.extend(ro.actions)
            logp_old.extend(ro.log_probs)
            adv.extend(a)
            ret.extend(r)
        feats, acts = np.asarray(feats), np.asarray(acts)
        logp_old, adv, ret = np.asarray(logp_old), np.asarray(adv), np.asarray(ret)
        M = len(adv)
        diags = []
        for _ in range(cfg.epochs):
            perm = rng.permutation(M)
            for s in range(0, M, cfg.minibatch):
                idx = perm[s:s + cfg.minibatch]
                with ad.Tape() as tape:
                    h = Tensor(feats[idx])
                    mean = student.policy(h)
                    logp = gaussian_log_prob(acts[idx], mean, student.log_std)
                    loss, diag = ppo_loss(logp, logp_old[idx], adv[idx], critic(h), ret[idx],
                                          gaussian_entropy(student.log_std), cfg)
                grads = ad.backward(tape, loss)
                clip_grad_norm(grads, train_params, cfg.max_grad_norm)
                lora_masked_update(grads, named, opt)
                diags.append(diag)
        summ = summarize(rollouts)
        row = {"iteration": it, "mean_reward": summ["mean_reward"], "collision_rate": summ["collision_rate"],
               "offroad_rate": summ["offroad_rate"],
               "clip_frac": float(np.mean([d["clip_frac"] for d in diags])),
               "approx_kl": float(np.mean([d["approx_kl"] for d in diags])), "transitions": M}
        rows.append(row)
        if log is not None:
            log(row)
    return rows


def evaluate_policy(student, critic, suite, horizon: int, seed: int = 0,
                    reward_cfg: RewardConfig = RewardConfig(), deterministic: bool = True) -> dict:
    policy = StudentPolicy(student, critic, deterministic=deterministic)
    return summarize(run_batch(policy, list(suite), horizon, seed=seed, reward_cfg=reward_cfg))

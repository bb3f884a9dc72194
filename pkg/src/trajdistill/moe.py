"""Top-k gated mixture of experts and the multimodal trajectory decoder."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError
from .nn import BODY, Linear, Module, Parameter
from .scene import DT, T_F


@dataclass(frozen=True)
class MoeConfig:
    num_experts: int = 4
    top_k: int = 2
    hidden: int = 192
    balance_coef: float = 0.01
    renormalize: bool = False

    def __post_init__(self):
        if not 1 <= self.top_k <= self.num_experts:
            raise ConfigError(f"top_k must lie in [1, {self.num_experts}], got {self.top_k}")


def row_linear(x, W, b=None) -> Tensor:
    """x @ W evaluated one row at a time (einsum loop, no BLAS) so a row's
    result never depends on which other rows share the call."""
    x, W = ad.as_tensor(x), ad.as_tensor(W)
    out = np.einsum("pi,ij->pj", x.data, W.data)
    ad._count(x.shape[0] * W.shape[0] * W.shape[1])

    def backward(g):
        return g @ W.data.T, x.data.T @ g

    y = ad.record("row_linear", out, (x, W), backward)
    return y + b if b is not None else y


class Expert(Module):
    def __init__(self, d: int, hidden: int, rng: np.random.Generator, label: str = BODY):
        self.fc1 = Linear(d, hidden, rng, label=label)
        self.fc2 = Linear(hidden, d, rng, label=label)

    def __call__(self, x) -> Tensor:
        h = ad.relu(row_linear(x, self.fc1.weight, self.fc1.bias))
        return row_linear(h, self.fc2.weight, self.fc2.bias)


def topk_gate(x, W_g, k: int, renormalize: bool = False):
    """Softmax over experts, keeping the k largest entries (lowest index wins ties).

    Returns (weights Tensor (P, E), selected bool array (P, E))."""
    logits = ad.as_tensor(x) @ W_g if W_g is not None else ad.as_tensor(x)
    probs = ad.softmax(logits, axis=-1)
    E = probs.shape[-1]
    if not 1 <= k <= E:
        raise ConfigError(f"top_k must lie in [1, {E}], got {k}")
    rank = np.argsort(-probs.data, axis=-1, kind="stable")[..., :k]
    sel = np.zeros(probs.shape, dtype=bool)
    np.put_along_axis(sel, rank, True, axis=-1)
    weights = probs * sel
    if renormalize:
        weights = weights / weights.sum(axis=-1, keepdims=True)
    return weights, sel


def moe_forward(x, experts, weights, sel: np.ndarray) -> Tensor:
    """Evaluate only the selected experts on their routed rows and scatter-add
    the weighted outputs back in expert order."""
    x = ad.as_tensor(x)
    P = x.shape[0]
    parts, index = [], []
    for e, expert in enumerate(experts):
        rows = np.nonzero(sel[:, e])[0]
        if rows.size == 0:
            continue
        ye = expert(x[rows]) * weights[rows, e:e + 1]
        parts.append(ye)
        index.append(rows)
    if not parts:
        return Tensor(np.zeros(x.shape))
    src = ad.concat(parts, axis=0)
    idx = np.concatenate(index)
    return ad.scatter_add(src, np.broadcast_to(idx[:, None], src.shape), axis=0, dim_size=P)


def moe_dense(x, experts, weights) -> Tensor:
    """Reference: every expert on every row, zero-weight experts masked by their weight."""
    out = Tensor(np.zeros(ad.as_tensor(x).shape))
    for e, expert in enumerate(experts):
        out = out + expert(x) * weights[:, e:e + 1]
    return out


def load_balance_loss(weights, mask: np.ndarray | None = None) -> Tensor:
    """Squared coefficient of variation of per-expert total gate mass."""
    w = ad.as_tensor(weights)
    if w.ndim != 2 or w.shape[0] == 0:
        raise ContractError("load balance needs a non-empty (tokens, experts) gate batch")
    if mask is not None:
        rows = np.nonzero(mask)[0]
        if rows.size == 0:
            raise ContractError("load balance needs at least one routed token")
        w = w[rows]
    mass = w.sum(axis=0)
    mu = mass.mean()
    var = ((mass - mu) ** 2).mean()
    return var / (mu * mu + 1e-12)


def gate_fractions(sel: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    s = sel if mask is None else sel[np.asarray(mask, dtype=bool)]
    return s.mean(axis=0) if len(s) else np.zeros(sel.shape[-1])


class MultimodalHead(Module):
    """Mode latents, per-mode displacement heads and a shared probability head."""

    def __init__(self, d_in: int, modes: int, d_latent: int, t_f: int, rng: np.random.Generator,
                 label: str = BODY, cv_prior: bool = True):
        self.modes, self.d_latent, self.t_f = modes, d_latent, t_f
        self.cv_prior = cv_prior
        self.latent = Linear(d_in, modes * d_latent, rng, label=label)
        bound = 1.0 / math.sqrt(d_latent)
        self.traj_w = Parameter(rng.uniform(-bound, bound, size=(modes, d_latent, 2 * t_f)) * 0.1, label)
        self.traj_b = Parameter(np.zeros((modes, 1, 2 * t_f)), label)
        self.prob = Linear(d_latent, 1, rng, label=label)

    def __call__(self, u, last_pos: np.ndarray, last_vel: np.ndarray, dt: float = DT):
        """u (P, d_in), last_pos/last_vel (P, 2) -> dict with traj (P,K,T_f,2), logits (P,K), latent (P,K,d)."""
        P = u.shape[0]
        K, dz, tf = self.modes, self.d_latent, self.t_f
        m = ad.tanh(self.latent(u)).reshape(P, K, 1, dz)
        offsets = (m @ self.traj_w + self.traj_b).reshape(P, K, tf, 2)
        traj = ad.cumsum(offsets, axis=2) + last_pos[:, None, None, :]
        if self.cv_prior:
            steps = dt * np.arange(1, tf + 1)
            traj = traj + (steps[None, :, None] * last_vel[:, None, :])[:, None]
        latent = m.reshape(P, K, dz)
        logits = self.prob(latent).reshape(P, K)
        return {"traj": traj, "logits": logits, "latent": latent}


def decode(u, head: MultimodalHead, last_pos, last_vel, dt: float = DT) -> dict:
    out = head(u, last_pos, last_vel, dt)
    out["probs"] = ad.softmax(out["logits"], axis=-1)
    return out


class MoeDecoder(Module):
    def __init__(self, d: int, cfg: MoeConfig, modes: int, d_latent: int, rng: np.random.Generator,
                 label: str = BODY, t_f: int = T_F, cv_prior: bool = True):
        self.cfg = cfg
        self.gate = Parameter(rng.normal(0.0, 0.02, size=(d, cfg.num_experts)), label)
        self.experts = [Expert(d, cfg.hidden, rng, label) for _ in range(cfg.num_experts)]
        self.head = MultimodalHead(d, modes, d_latent, t_f, rng, label, cv_prior)

    def __call__(self, x, last_pos, last_vel, mask: np.ndarray | None = None, dt: float = DT) -> dict:
        weights, sel = topk_gate(x, self.gate, self.cfg.top_k, self.cfg.renormalize)
        if mask is not None:
            sel = sel & np.asarray(mask, dtype=bool)[:, None]
            weights = weights * sel
        u = x + moe_forward(x, self.experts, weights, sel)
        out = decode(u, self.head, last_pos, last_vel, dt)
        out["gate_weights"] = weights
        out["gate_selected"] = sel
        out["balance"] = load_balance_loss(weights, mask)
        return out

"""Compact forecaster and policy: graph encoder, 2-layer GRU, squeeze-excitation,
multimodal heads, maneuver classifier and a low-rank adapted action head."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError
from .graph_encoder import GraphConfig, GraphEncoder
from .moe import MultimodalHead
from .nn import ADAPTER, BODY, FROZEN, LOGSTD, LORA, Linear, Module, Parameter
from .scene import Batch, FEAT_DIM, T_F


@dataclass(frozen=True)
class StudentConfig:
    graph: GraphConfig = field(default_factory=lambda: GraphConfig(d_model=16, gat_heads=2))
    hidden: int = 32
    gru_layers: int = 2
    se_reduction: int = 4
    modes: int = 6
    d_latent: int = 32
    lora_rank: int = 8
    lora_alpha: float = 32.0
    action_dim: int = 2
    teacher_width: int = 64
    teacher_latent: int = 32
    raw_features: bool = True
    cv_prior: bool = True
    init_log_std: tuple[float, float] = (math.log(0.5), math.log(0.001))
    hint_source: str = "encoder"  # features matched to the teacher's: "encoder" or "body"

    def __post_init__(self):
        if self.hint_source not in ("encoder", "body"):
            raise ConfigError("hint_source must be 'encoder' or 'body'")
        if self.hidden % self.se_reduction:
            raise ConfigError(f"hidden width {self.hidden} not divisible by SE ratio {self.se_reduction}")


class GRU(Module):
    """Stacked GRU; gates ordered (update, reset, candidate).

    h' = (1 - z) * n + z * h, n = tanh(x W_n + b_n + r * (h U_n + c_n))."""

    def __init__(self, d_in: int, hidden: int, layers: int, rng: np.random.Generator, label: str = BODY):
        self.hidden = hidden
        self.w_x, self.w_h, self.b_x, self.b_h = [], [], [], []
        bound = 1.0 / math.sqrt(hidden)
        for layer in range(layers):
            din = d_in if layer == 0 else hidden
            self.w_x.append(Parameter(rng.uniform(-bound, bound, size=(din, 3 * hidden)), label))
            self.w_h.append(Parameter(rng.uniform(-bound, bound, size=(hidden, 3 * hidden)), label))
            self.b_x.append(Parameter(np.zeros(3 * hidden), label))
            self.b_h.append(Parameter(np.zeros(3 * hidden), label))

    def __call__(self, x) -> tuple[Tensor, Tensor]:
        """x (P, T, d_in) -> (top-layer sequence (P, T, H), final states (layers, P, H))."""
        P, T, _ = x.shape
        H = self.hidden
        seq = x
        finals = []
        for wx, wh, bx, bh in zip(self.w_x, self.w_h, self.b_x, self.b_h):
            xp = seq @ wx + bx  # (P, T, 3H)
            h = Tensor(np.zeros((P, H)))
            outs = []
            for t in range(T):
                xt = xp[:, t]
                hp = h @ wh + bh
                z = ad.sigmoid(xt[:, :H] + hp[:, :H])
                r = ad.sigmoid(xt[:, H:2 * H] + hp[:, H:2 * H])
                n = ad.tanh(xt[:, 2 * H:] + r * hp[:, 2 * H:])
                h = (1.0 - z) * n + z * h
                outs.append(h)
            seq = ad.stack(outs, axis=1)
            finals.append(h)
        return seq, ad.stack(finals, axis=0)


class SqueezeExcite(Module):
    def __init__(self, d: int, r: int, rng: np.random.Generator, label: str = BODY):
        if d % r:
            raise ConfigError(f"width {d} not divisible by reduction {r}")
        self.fc1 = Linear(d, d // r, rng, label=label)
        self.fc2 = Linear(d // r, d, rng, label=label)

    def excitation(self, U) -> Tensor:
        return ad.sigmoid(self.fc2(ad.relu(self.fc1(U.mean(axis=-2)))))

    def __call__(self, U) -> Tensor:
        """U (..., T, d) -> s * U with one excitation vector per window."""
        s = self.excitation(U)
        return U * s.reshape(*s.shape[:-1], 1, s.shape[-1])


class LoraHead(Module):
    """(W0 + (alpha/r) B A) h with W0 frozen and B zero-initialised."""

    def __init__(self, d_in: int, d_out: int, rank: int, alpha: float, rng: np.random.Generator):
        bound = 1.0 / math.sqrt(d_in)
        self.W0 = Parameter(rng.uniform(-bound, bound, size=(d_out, d_in)), FROZEN, requires_grad=False)
        self.A = Parameter(rng.uniform(-bound, bound, size=(rank, d_in)), LORA)
        self.B = Parameter(np.zeros((d_out, rank)), LORA)
        self.scale = alpha / rank

    def effective_weight(self) -> np.ndarray:
        return self.W0.data + self.scale * self.B.data @ self.A.data

    def __call__(self, h) -> Tensor:
        base = h @ self.W0.transpose(1, 0)
        return base + (h @ self.A.transpose(1, 0) @ self.B.transpose(1, 0)) * self.scale


def lora_forward(h, head: LoraHead) -> Tensor:
    return head(h)


def interaction_attention(hseq, mask: np.ndarray) -> Tensor:
    """Row softmax of scaled dot products between agents' hidden states per step.

    hseq (B, T, N, H), mask (B, T, N) -> (B, T, N, N); masked rows/cols are 0."""
    d = hseq.shape[-1]
    scores = (hseq @ hseq.swapaxes(-1, -2)) * (1.0 / math.sqrt(d))
    allowed = mask[..., :, None] & mask[..., None, :]
    return ad.softmax(scores, axis=-1, mask=allowed)


class Student(Module):
    def __init__(self, cfg: StudentConfig, rng: np.random.Generator):
        self.cfg = cfg
        g = cfg.graph
        d_gru_in = 2 * g.d_model + (g.d_in if cfg.raw_features else 0)
        self.encoder = GraphEncoder(g, rng, BODY)
        self.gru = GRU(d_gru_in, cfg.hidden, cfg.gru_layers, rng)
        self.se = SqueezeExcite(cfg.hidden, cfg.se_reduction, rng)
        self.head = MultimodalHead(cfg.hidden, cfg.modes, cfg.d_latent, T_F, rng, BODY, cfg.cv_prior)
        self.maneuver = Linear(cfg.hidden, 3, rng)
        self.policy = LoraHead(cfg.hidden, cfg.action_dim, cfg.lora_rank, cfg.lora_alpha, rng)
        self.log_std = Parameter(np.array(cfg.init_log_std[: cfg.action_dim]), LOGSTD)
        d_hint = g.d_model if cfg.hint_source == "encoder" else cfg.hidden
        self.adapter = Linear(d_hint, cfg.teacher_width, rng, label=ADAPTER)
        # training-only projection so the contrastive term does not bend the mode latents directly
        self.sem_proj = Linear(cfg.d_latent, cfg.teacher_latent, rng, label=ADAPTER)

    def deploy_parameters(self) -> int:
        """Parameters shipped for inference (excludes the training-only adapter)."""
        return self.num_parameters(labels=(BODY, FROZEN, LORA, LOGSTD))

    def lora_fraction(self) -> float:
        return self.num_parameters(labels=(LORA,)) / self.deploy_parameters()

    def body(self, batch: Batch):
        """Shared trunk: (SE-weighted GRU sequence (B, N, T, H), top GRU layer (B, N, T, H),
        graph embeddings (B, T, N, d))."""
        B, T, N = batch.mask.shape
        e = self.encoder.encode_batch(batch)  # (B, T, N, d)
        m = batch.mask[..., None].astype(float)
        count = np.maximum(m.sum(axis=2, keepdims=True), 1.0)
        pooled = (e * m).sum(axis=2, keepdims=True) * (1.0 / count)
        parts = [e, ad.broadcast_to(pooled, e.shape)]
        if self.cfg.raw_features:
            parts.append(Tensor(batch.feats))
        x = ad.concat(parts, axis=-1).transpose(0, 2, 1, 3)  # (B, N, T, d_in)
        P = B * N
        seq, _ = self.gru(x.reshape(P, T, x.shape[-1]))
        U = self.se(seq)
        H = self.cfg.hidden
        return U.reshape(B, N, T, H), seq.reshape(B, N, T, H), e

    def features(self, batch: Batch) -> Tensor:
        """Ego embedding (B, H) used by the policy and critic."""
        U, _, _ = self.body(batch)
        return U[:, 0, -1]

    def __call__(self, batch: Batch, internals: bool | None = None) -> dict:
        if internals is None:
            internals = ad.active_tape() is not None
        B, T, N = batch.mask.shape
        K = self.cfg.modes
        U, seq, e = self.body(batch)
        h = U[:, :, -1].reshape(B * N, self.cfg.hidden)
        out = self.head(h, batch.pos[:, -1].reshape(B * N, 2), batch.vel.reshape(B * N, 2), batch.dt)
        out["traj"] = out["traj"].reshape(B, N, K, -1, 2)
        out["logits"] = out["logits"].reshape(B, N, K)
        out["probs"] = ad.softmax(out["logits"], axis=-1)
        out["latent"] = out["latent"].reshape(B, N, K, self.cfg.d_latent)
        h_ego = U[:, 0, -1]
        out["h_ego"] = h_ego
        out["maneuver_logits"] = self.maneuver(h_ego)
        out["maneuver"] = ad.softmax(out["maneuver_logits"], axis=-1)
        out["action_mean"] = self.policy(h_ego)
        if internals:
            hint = e if self.cfg.hint_source == "encoder" else U.transpose(0, 2, 1, 3)
            out["f_low"] = self.adapter(hint)
            out["attention"] = interaction_attention(seq.transpose(0, 2, 1, 3), batch.mask)
            out["sem_latent"] = self.sem_proj(out["latent"])
        return out

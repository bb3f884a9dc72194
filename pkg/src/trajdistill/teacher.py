"""High-capacity forecaster: graph encoder, hybrid scan/window block, MoE decoder."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph_encoder import GraphConfig, GraphEncoder
from .hybrid import HybridBlock, HybridConfig
from .moe import MoeConfig, MoeDecoder
from .nn import TEACHER, Module
from .scene import Batch


@dataclass(frozen=True)
class TeacherConfig:
    graph: GraphConfig = field(default_factory=lambda: GraphConfig(d_model=64, gat_heads=4))
    hybrid: HybridConfig = field(default_factory=HybridConfig)
    moe: MoeConfig = field(default_factory=MoeConfig)
    modes: int = 6
    d_latent: int = 32
    cv_prior: bool = True
    raw_features: bool = True  # concatenate last-step agent features to the decoder tokens


class Teacher(Module):
    def __init__(self, cfg: TeacherConfig, rng: np.random.Generator):
        self.cfg = cfg
        d = cfg.graph.d_model
        if cfg.hybrid.d_model != d:
            raise ValueError("graph and hybrid widths must match")
        self.encoder = GraphEncoder(cfg.graph, rng, TEACHER)
        self.hybrid = HybridBlock(cfg.hybrid, rng, TEACHER)
        d_tok = d + (cfg.graph.d_in if cfg.raw_features else 0)
        self.decoder = MoeDecoder(d_tok, cfg.moe, cfg.modes, cfg.d_latent, rng, TEACHER, cv_prior=cfg.cv_prior)

    def __call__(self, batch: Batch) -> dict:
        B, T, N = batch.mask.shape
        f_low = self.encoder.encode_batch(batch)
        z, a_map = self.hybrid(f_low, batch.mask, batch.order)
        tokens = z[:, -1]
        if self.cfg.raw_features:
            tokens = ad.concat([tokens, Tensor(batch.feats[:, -1])], axis=-1)
        tokens = tokens.reshape(B * N, tokens.shape[-1])
        valid = batch.agent_mask.reshape(B * N)
        out = self.decoder(tokens, batch.pos[:, -1].reshape(B * N, 2), batch.vel.reshape(B * N, 2),
                           mask=valid, dt=batch.dt)
        K = self.cfg.modes
        out["traj"] = out["traj"].reshape(B, N, K, -1, 2)
        out["logits"] = out["logits"].reshape(B, N, K)
        out["probs"] = out["probs"].reshape(B, N, K)
        out["latent"] = out["latent"].reshape(B, N, K, self.cfg.d_latent)
        out["f_low"] = f_low
        out["attention"] = a_map
        return out

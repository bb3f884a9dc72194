"""Proximity graph, causal temporal convolution and graph attention encoder."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DimensionError
from .nn import BODY, Linear, Module, Parameter
from .scene import FEAT_DIM, Scene


@dataclass(frozen=True)
class GraphConfig:
    r_thresh: float = 50.0
    sigma: float = 10.0
    d_model: int = 32
    gat_heads: int = 4
    gat_layers: int = 2
    rmsnorm_eps: float = 1e-6
    conv_width: int = 3
    d_in: int = FEAT_DIM
    leaky_slope: float = 0.2

    def __post_init__(self):
        if not self.r_thresh > 0 or not self.sigma > 0 or not self.rmsnorm_eps > 0:
            raise ConfigError("r_thresh, sigma and rmsnorm_eps must be positive")
        if self.d_model % self.gat_heads:
            raise ConfigError(f"d_model {self.d_model} not divisible by {self.gat_heads} heads")
        if self.conv_width < 1:
            raise ConfigError("conv_width must be >= 1")


def build_adjacency(pos: np.ndarray, mask: np.ndarray | None, cfg: GraphConfig) -> np.ndarray:
    """Gaussian proximity kernel over the last two axes of ``pos`` (..., N, 2).

    Entries involving a masked agent are 0; the diagonal of valid agents is 1.
    """
    pos = np.asarray(pos, dtype=float)
    diff = pos[..., :, None, :] - pos[..., None, :, :]
    d2 = np.sum(diff * diff, axis=-1)
    adj = np.where(d2 < cfg.r_thresh ** 2, np.exp(-d2 / (2.0 * cfg.sigma ** 2)), 0.0)
    n = pos.shape[-2]
    eye = np.eye(n, dtype=bool)
    adj = np.where(eye, 1.0, adj)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        adj = adj * (mask[..., :, None] & mask[..., None, :])
    return adj


def scene_adjacency(scene: Scene, cfg: GraphConfig) -> np.ndarray:
    """Adjacency over [ego] + neighbours of a single scene."""
    pts = [(scene.ego.x, scene.ego.y)] + [(st.x, st.y) for _, st in scene.neighbors]
    return build_adjacency(np.array(pts), None, cfg)


def causal_conv(x, weight, bias=None, time_axis: int = -2) -> Tensor:
    """Causal 1-D convolution along ``time_axis``.

    ``weight`` has shape (w, d_in, d_out); tap ``w-1`` multiplies the current
    step and tap ``k`` the step ``w-1-k`` earlier, with zero left padding.
    """
    x = ad.as_tensor(x)
    weight = ad.as_tensor(weight)
    axis = time_axis % x.ndim
    if axis == x.ndim - 1:
        raise DimensionError("time axis cannot be the channel axis")
    T = x.shape[axis]
    w = weight.shape[0]
    if w > T:
        raise ConfigError(f"kernel width {w} exceeds the {T}-step window")
    if weight.shape[1] != x.shape[-1]:
        raise DimensionError(f"kernel expects {weight.shape[1]} channels, input has {x.shape[-1]}")
    out = None
    for k in range(w):
        shift = w - 1 - k
        if shift == 0:
            xs = x
        else:
            pad_shape = list(x.shape)
            pad_shape[axis] = shift
            idx = [slice(None)] * x.ndim
            idx[axis] = slice(0, T - shift)
            xs = ad.concat([Tensor(np.zeros(pad_shape)), x[tuple(idx)]], axis=axis)
        term = xs @ weight[k]
        out = term if out is None else out + term
    if bias is not None:
        out = out + bias
    return out


def rmsnorm(x, gain, eps: float = 1e-6) -> Tensor:
    x = ad.as_tensor(x)
    ms = (x * x).mean(axis=-1, keepdims=True)
    return x / ad.sqrt(ms + eps) * gain


class GatLayer(Module):
    """Multi-head graph attention; heads are concatenated."""

    def __init__(self, d_in: int, d_out: int, heads: int, rng: np.random.Generator, label: str = BODY):
        self.heads = heads
        self.d_head = d_out // heads
        self.proj = Linear(d_in, d_out, rng, bias=False, label=label)
        bound = 1.0 / math.sqrt(self.d_head)
        self.a_src = Parameter(rng.uniform(-bound, bound, size=(heads, self.d_head)), label)
        self.a_dst = Parameter(rng.uniform(-bound, bound, size=(heads, self.d_head)), label)

    def __call__(self, h, adj: np.ndarray, slope: float = 0.2, return_attention: bool = False):
        """h: (..., N, d_in); adj: (..., N, N) with zero rows/cols for masked agents."""
        lead = h.shape[:-2]
        n = h.shape[-2]
        H, dh = self.heads, self.d_head
        wh = self.proj(h).reshape(*lead, n, H, dh)
        s_i = (wh * self.a_src).sum(axis=-1)  # (..., N, H)
        s_j = (wh * self.a_dst).sum(axis=-1)
        e = ad.leaky_relu(s_i.reshape(*lead, n, 1, H) + s_j.reshape(*lead, 1, n, H), slope)
        nbr = (np.asarray(adj) > 0)[..., None]
        alpha = ad.softmax(e, axis=-2, mask=nbr)  # (..., N_i, N_j, H)
        nd = len(lead)
        perm_a = tuple(range(nd)) + (nd + 2, nd, nd + 1)
        perm_v = tuple(range(nd)) + (nd + 1, nd, nd + 2)
        agg = alpha.transpose(*perm_a) @ wh.transpose(*perm_v)  # (..., H, N, dh)
        out = ad.tanh(agg.transpose(*perm_v).reshape(*lead, n, H * dh))
        return (out, alpha) if return_attention else out


class GraphEncoder(Module):
    """Causal conv followed by [graph attention -> RMSNorm] x layers, per time step."""

    def __init__(self, cfg: GraphConfig, rng: np.random.Generator, label: str = BODY):
        self.cfg = cfg
        bound = 1.0 / math.sqrt(cfg.d_in * cfg.conv_width)
        self.conv_w = Parameter(rng.uniform(-bound, bound, size=(cfg.conv_width, cfg.d_in, cfg.d_model)), label)
        self.conv_b = Parameter(np.zeros(cfg.d_model), label)
        self.layers = [GatLayer(cfg.d_model, cfg.d_model, cfg.gat_heads, rng, label) for _ in range(cfg.gat_layers)]
        self.gains = [Parameter(np.ones(cfg.d_model), label) for _ in range(cfg.gat_layers)]

    def __call__(self, feats, pos: np.ndarray, mask: np.ndarray, return_attention: bool = False):
        """feats (B, T, N, d_in), pos (B, T, N, 2), mask (B, T, N) -> (B, T, N, d_model)."""
        adj = build_adjacency(pos, mask, self.cfg)
        h = causal_conv(feats, self.conv_w, self.conv_b, time_axis=1)
        attn = []
        for layer, g in zip(self.layers, self.gains):
            h, a = layer(h, adj, self.cfg.leaky_slope, return_attention=True)
            attn.append(a)
            h = rmsnorm(h, g, self.cfg.rmsnorm_eps)
        h = h * mask[..., None]
        return (h, attn) if return_attention else h

    def encode_batch(self, batch, **kw):
        return self(batch.feats, batch.pos, batch.mask, **kw)

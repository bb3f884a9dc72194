"""Selective state-space scan, shifted-window attention over agents, gated fusion."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DimensionError, DomainError
from .nn import BODY, Linear, Module, Parameter

SMALL_A = 1e-8


@dataclass(frozen=True)
class HybridConfig:
    d_model: int = 64
    d_inner: int = 64
    d_state: int = 16
    d_conv: int = 4
    window: int = 4
    attn_heads: int = 4
    delta_init: tuple[float, float] = (0.05, 0.1)

    def __post_init__(self):
        if self.window < 2 or self.window % 2:
            raise ConfigError("window size must be an even integer >= 2")
        if self.d_model % self.attn_heads:
            raise ConfigError("d_model must be divisible by attn_heads")


# ---------------------------------------------------------------------------
# zero-order hold

def _zoh_coef(a: np.ndarray, delta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(exp(delta*a), (exp(delta*a) - 1)/a) with the delta limit for tiny |a|."""
    a_bar = np.exp(delta * a)
    small = np.abs(a) <= SMALL_A
    if not np.any(small):
        return a_bar, np.expm1(delta * a) / a
    safe_a = np.where(small, 1.0, a)
    coef = np.where(small, delta, np.expm1(delta * a) / safe_a)
    return a_bar, coef


def zoh_discretize(a, b, delta):
    """Zero-order-hold discretisation of dh/dt = a h + b x over a step ``delta``."""
    delta = np.asarray(delta, dtype=float)
    if np.any(delta <= 0):
        raise DomainError("step size delta must be positive")
    a = np.asarray(a, dtype=float)
    a_bar, coef = _zoh_coef(a, delta)
    b_bar = coef * np.asarray(b, dtype=float)
    if a_bar.ndim == 0:
        return float(a_bar), float(b_bar)
    return a_bar, b_bar


# ---------------------------------------------------------------------------
# selective scan (fused forward + hand-written adjoint)

def selective_scan(x, delta, A, B, C, D) -> Tensor:
    """Diagonal selective SSM along the second-to-last axis.

    x, delta: (..., T, Dc); A: (Dc, S); B, C: (..., T, S); D: (Dc,).
    h_t = exp(delta_t A) h_{t-1} + coef(delta_t, A) B_t x_t, h_0 = 0
    y_t = sum_s C_t h_t + D x_t
    """
    x, delta, A, B, C, D = (ad.as_tensor(v) for v in (x, delta, A, B, C, D))
    lead = x.shape[:-2]
    T, Dc = x.shape[-2:]
    S = A.shape[-1]
    if delta.shape != x.shape or A.shape != (Dc, S) or B.shape != lead + (T, S) \
            or C.shape != B.shape or D.shape != (Dc,):
        raise DimensionError(
            f"scan shapes x{x.shape} delta{delta.shape} A{A.shape} B{B.shape} C{C.shape} D{D.shape}")
    if np.any(delta.data <= 0):
        raise DomainError("scan step sizes must be positive")
    P = int(np.prod(lead)) if lead else 1
    xd = x.data.reshape(P, T, Dc)
    dd = delta.data.reshape(P, T, Dc)
    Bd = B.data.reshape(P, T, S)
    Cd = C.data.reshape(P, T, S)
    Ad = A.data
    a_bar, coef = _zoh_coef(Ad[None, None], dd[..., None])  # (P, T, Dc, S)
    bx = Bd[:, :, None, :] * xd[..., None]                   # (P, T, Dc, S)
    hs = np.empty((P, T, Dc, S))
    h = np.zeros((P, Dc, S))
    for t in range(T):
        h = a_bar[:, t] * h + coef[:, t] * bx[:, t]
        hs[:, t] = h
    y = np.einsum("ptds,pts->ptd", hs, Cd) + D.data * xd

    def backward(g):
        gy = g.reshape(P, T, Dc)
        gC = np.einsum("ptd,ptds->pts", gy, hs)
        gD = np.sum(gy * xd, axis=(0, 1))
        gx = D.data * gy
        gh_all = np.empty_like(hs)
        gh = np.zeros((P, Dc, S))
        for t in range(T - 1, -1, -1):
            gh = gy[:, t, :, None] * Cd[:, t, None, :] + (a_bar[:, t + 1] * gh if t + 1 < T else 0.0)
            gh_all[:, t] = gh
        h_prev = np.concatenate([np.zeros((P, 1, Dc, S)), hs[:, :-1]], axis=1)
        g_abar = gh_all * h_prev
        g_coef = gh_all * bx
        gh_coef = gh_all * coef
        gx = gx + np.einsum("ptds,pts->ptd", gh_coef, Bd)
        gB = np.einsum("ptds,ptd->pts", gh_coef, xd)
        g_delta = np.sum(g_abar * a_bar * Ad + g_coef * a_bar, axis=-1)
        small = np.abs(Ad) <= SMALL_A
        safe = np.where(small, 1.0, Ad)
        dcoef_dA = np.where(small, 0.5 * dd[..., None] ** 2,
                            (dd[..., None] * a_bar * safe - a_bar + 1.0) / safe ** 2)
        gA = np.sum(g_abar * dd[..., None] * a_bar + g_coef * dcoef_dA, axis=(0, 1))
        return (gx.reshape(x.shape), g_delta.reshape(delta.shape), gA,
                gB.reshape(B.shape), gC.reshape(C.shape), gD)

    return ad.record("selective_scan", y.reshape(x.shape), (x, delta, A, B, C, D), backward)


def selective_scan_reference(x, delta, A, B, C, D) -> np.ndarray:
    """Unrolled oracle: y_t = sum_{s<=t} C_t (prod_{r=s+1..t} Abar_r) Bbar_s x_s + D x_t."""
    x, delta, A, B, C, D = (np.asarray(v, dtype=float) for v in (x, delta, A, B, C, D))
    T, Dc = x.shape
    S = A.shape[1]
    y = np.zeros((T, Dc))
    for t in range(T):
        for d in range(Dc):
            total = D[d] * x[t, d]
            for n in range(S):
                for s in range(t + 1):
                    prod = 1.0
                    for r in range(s + 1, t + 1):
                        prod *= math.exp(delta[r, d] * A[d, n])
                    a = A[d, n]
                    coef = delta[s, d] if abs(a) <= SMALL_A else math.expm1(delta[s, d] * a) / a
                    total += C[t, n] * prod * coef * B[s, n] * x[s, d]
            y[t, d] = total
    return y


def silu(x) -> Tensor:
    return x * ad.sigmoid(x)


def depthwise_causal_conv(x, weight, bias=None) -> Tensor:
    """Per-channel causal conv along axis -2; weight (w, C)."""
    T = x.shape[-2]
    w = weight.shape[0]
    if w > T:
        raise ConfigError(f"kernel width {w} exceeds the {T}-step window")
    out = None
    for k in range(w):
        shift = w - 1 - k
        if shift == 0:
            xs = x
        else:
            pad = list(x.shape)
            pad[-2] = shift
            xs = ad.concat([Tensor(np.zeros(pad)), x[..., : T - shift, :]], axis=-2)
        term = xs * weight[k]
        out = term if out is None else out + term
    return out + bias if bias is not None else out


class SelectiveSSM(Module):
    """Mamba-style block: in-projection, depthwise causal conv, selective scan,
    SiLU gate and out-projection, with a residual connection."""

    def __init__(self, cfg: HybridConfig, rng: np.random.Generator, label: str = BODY):
        d, di, S = cfg.d_model, cfg.d_inner, cfg.d_state
        self.in_proj = Linear(d, 2 * di, rng, label=label)
        bound = 1.0 / math.sqrt(cfg.d_conv)
        self.conv_w = Parameter(rng.uniform(-bound, bound, size=(cfg.d_conv, di)), label)
        self.conv_b = Parameter(np.zeros(di), label)
        self.delta_proj = Linear(di, di, rng, bias=False, label=label, init_scale=0.1)
        target = rng.uniform(*cfg.delta_init, size=di)
        self.delta_bias = Parameter(np.log(np.expm1(target)), label)  # softplus^-1
        self.b_proj = Linear(di, S, rng, bias=False, label=label)
        self.c_proj = Linear(di, S, rng, bias=False, label=label)
        self.A_log = Parameter(np.log(np.tile(np.arange(1, S + 1, dtype=float), (di, 1))), label)
        self.D = Parameter(np.ones(di), label)
        self.out_proj = Linear(di, d, rng, label=label)
        self.d_inner = di

    def __call__(self, x) -> Tensor:
        """x: (..., T, d_model) -> (..., T, d_model)."""
        xz = self.in_proj(x)
        di = self.d_inner
        u = silu(depthwise_causal_conv(xz[..., :di], self.conv_w, self.conv_b))
        gate = xz[..., di:]
        delta = ad.softplus(self.delta_proj(u) + self.delta_bias)
        A = -ad.exp(self.A_log)
        y = selective_scan(u, delta, A, self.b_proj(u), self.c_proj(u), self.D)
        return x + self.out_proj(y * silu(gate))


# ---------------------------------------------------------------------------
# window attention over the agent axis

def relative_index(M: int) -> np.ndarray:
    i = np.arange(M)
    return i[:, None] - i[None, :] + M - 1


def shift_region_mask(L: int, M: int, shift: int) -> np.ndarray:
    """(nW, M, M) bool: after rolling by ``shift`` only tokens from the same
    side of the wrap may attend to each other."""
    orig = (np.arange(L) + shift) % L
    wrapped = (orig < shift).reshape(L // M, M)
    return wrapped[:, :, None] == wrapped[:, None, :]


class WindowAttention(Module):
    def __init__(self, d: int, heads: int, M: int, rng: np.random.Generator, label: str = BODY):
        self.heads, self.M = heads, M
        self.dk = d // heads
        self.qkv = Linear(d, 3 * d, rng, label=label)
        self.proj = Linear(d, d, rng, label=label)
        self.bias_table = Parameter(rng.normal(0.0, 0.02, size=(heads, 2 * M - 1)), label)

    def __call__(self, x, valid: np.ndarray, shifted: bool, return_attention: bool = False):
        """x: (..., L, d) tokens already in window order; valid: (..., L) bool.

        Pads L to a multiple of M with masked tokens. Returns tokens (..., L, d)
        and optionally attention weights (..., nW, H, M, M) in unshifted order."""
        x = ad.as_tensor(x)
        lead = x.shape[:-2]
        L, d = x.shape[-2:]
        M, H, dk = self.M, self.heads, self.dk
        Lp = -(-L // M) * M
        valid = np.asarray(valid, dtype=bool)
        if Lp != L:
            pad = list(x.shape)
            pad[-2] = Lp - L
            x = ad.concat([x, Tensor(np.zeros(pad))], axis=-2)
            valid = np.concatenate([valid, np.zeros(lead + (Lp - L,), dtype=bool)], axis=-1)
        s = M // 2 if shifted else 0
        if s:
            perm = (np.arange(Lp) + s) % Lp
            x = x[..., perm, :]
            valid = valid[..., perm]
        nW = Lp // M
        qkv = self.qkv(x).reshape(*lead, nW, M, 3, H, dk)
        nd = len(lead)
        # -> (..., nW, H, M, dk)
        order = tuple(range(nd)) + (nd, nd + 2, nd + 1, nd + 3)
        q = qkv[..., 0, :, :].transpose(*order)
        k = qkv[..., 1, :, :].transpose(*order)
        v = qkv[..., 2, :, :].transpose(*order)
        scores = (q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(dk))
        scores = scores + self.bias_table[:, relative_index(M)]
        vw = valid.reshape(*lead, nW, 1, 1, M)
        allowed = np.broadcast_to(vw, lead + (nW, 1, M, M))
        if s:
            allowed = allowed & shift_region_mask(Lp, M, s)[:, None]
        attn = ad.softmax(scores, axis=-1, mask=allowed)
        out = (attn @ v).transpose(*order).reshape(*lead, Lp, H * dk)
        out = self.proj(out)
        if s:
            out = out[..., np.argsort(perm), :]
        out = out[..., :L, :]
        return (out, attn) if return_attention else out


def window_attention(tokens, layer: WindowAttention, shifted: bool, valid=None) -> Tensor:
    tokens = ad.as_tensor(tokens)
    if valid is None:
        valid = np.ones(tokens.shape[:-1], dtype=bool)
    return layer(tokens, valid, shifted)


def attention_map(attn: np.ndarray, order: np.ndarray, n: int) -> np.ndarray:
    """Head-averaged block-diagonal window attention (..., nW, H, M, M) mapped
    back to original agent slots -> (..., n, n).  ``order`` (..., n) lists the
    slot placed at each window position."""
    a = attn.mean(axis=-3)
    lead = a.shape[:-3]
    nW, M = a.shape[-3], a.shape[-1]
    full = np.zeros(lead + (nW * M, nW * M))
    for w in range(nW):
        full[..., w * M:(w + 1) * M, w * M:(w + 1) * M] = a[..., w, :, :]
    full = full[..., :n, :n]
    out = np.zeros_like(full)
    idx = np.broadcast_to(order, lead + (n,))
    # out[order[p], order[q]] = full[p, q]
    flat_lead = int(np.prod(lead)) if lead else 1
    f = full.reshape(flat_lead, n, n)
    o = out.reshape(flat_lead, n, n)
    ix = idx.reshape(flat_lead, n)
    for b in range(flat_lead):
        o[b][np.ix_(ix[b], ix[b])] = f[b]
    return o.reshape(lead + (n, n))


# ---------------------------------------------------------------------------
# gated fusion

class GatedFusion(Module):
    def __init__(self, d: int, rng: np.random.Generator, label: str = BODY):
        self.gate = Linear(2 * d, d, rng, label=label)

    def __call__(self, y_m, y_s) -> Tensor:
        return gated_fusion(y_m, y_s, self.gate.weight, self.gate.bias)


def gated_fusion(y_m, y_s, W_g, b_g=None) -> Tensor:
    y_m, y_s = ad.as_tensor(y_m), ad.as_tensor(y_s)
    if y_m.shape != y_s.shape:
        raise DimensionError(f"fusion inputs differ: {y_m.shape} vs {y_s.shape}")
    logits = ad.concat([y_m, y_s], axis=-1) @ W_g
    if b_g is not None:
        logits = logits + b_g
    g = ad.sigmoid(logits)
    return g * y_m + (1.0 - g) * y_s


# ---------------------------------------------------------------------------
# full block

def gather_slots(x, order: np.ndarray, axis: int) -> Tensor:
    """Reorder ``x`` along ``axis`` by per-batch ``order`` (B, N)."""
    x = ad.as_tensor(x)
    shape = [1] * x.ndim
    shape[0] = order.shape[0]
    shape[axis] = order.shape[1]
    idx = np.broadcast_to(order.reshape(shape), x.shape[:axis] + (order.shape[1],) + x.shape[axis + 1:])
    return ad.gather(x, idx, axis=axis)


class HybridBlock(Module):
    """Temporal scan per agent, window attention per step, gated fusion."""

    def __init__(self, cfg: HybridConfig, rng: np.random.Generator, label: str = BODY):
        self.cfg = cfg
        self.ssm = SelectiveSSM(cfg, rng, label)
        self.attn = [WindowAttention(cfg.d_model, cfg.attn_heads, cfg.window, rng, label) for _ in range(2)]
        self.fusion = GatedFusion(cfg.d_model, rng, label)

    def __call__(self, h, mask: np.ndarray, order: np.ndarray):
        """h (B, T, N, d); mask (B, T, N); order (B, N).

        Returns fused tokens (B, T, N, d) and the teacher attention map (B, T, N, N)."""
        B, T, N, d = h.shape
        y_m = self.ssm(h.transpose(0, 2, 1, 3)).transpose(0, 2, 1, 3)
        y_m = y_m * mask[..., None]
        ordered = gather_slots(y_m, order, axis=2)
        valid = np.take_along_axis(mask, np.broadcast_to(order[:, None, :], mask.shape), axis=2)
        a1, attn = self.attn[0](ordered, valid, shifted=False, return_attention=True)
        s1 = ordered + a1
        s2 = s1 + self.attn[1](s1, valid, shifted=True)
        inv = np.argsort(order, axis=1)
        y_s = gather_slots(s2, inv, axis=2) * mask[..., None]
        z = self.fusion(y_m, y_s)
        a_map = attention_map(attn.data, order[:, None, :], N)
        return z, a_map

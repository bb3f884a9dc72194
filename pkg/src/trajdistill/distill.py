"""Feature, attention and contrastive transfer losses and their weight schedules."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError

NEGATIVE_MODES = ("both", "in-batch", "in-mode", "all", "none")


@dataclass(frozen=True)
class DistillConfig:
    tau: float = 0.07
    xi0: float = 1.0
    zeta0: float = 0.5
    eta0: float = 0.5
    lambda_xi: float = 0.02
    lambda_zeta: float = 0.01
    lambda_eta: float = 0.01
    beta0: float = 1.0
    lambda_beta: float = 0.05
    alpha: float = 1.0
    psi: float = 1.0
    negatives: str = "both"

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigError("temperature tau must be positive")
        if min(self.xi0, self.zeta0, self.eta0, self.beta0) < 0:
            raise ConfigError("initial loss weights must be non-negative")
        if self.negatives not in NEGATIVE_MODES:
            raise ConfigError(f"negatives must be one of {NEGATIVE_MODES}")


@dataclass(frozen=True)
class LossWeights:
    xi: float
    zeta: float
    eta: float
    beta: float
    psi: float
    alpha: float

    def as_dict(self) -> dict:
        return asdict(self)


def schedule_weights(t: float, cfg: DistillConfig = DistillConfig()) -> LossWeights:
    if t < 0:
        raise ContractError("schedule time must be >= 0")
    return LossWeights(
        xi=cfg.xi0 * math.exp(-cfg.lambda_xi * t),
        zeta=cfg.zeta0 * math.exp(-cfg.lambda_zeta * t),
        eta=cfg.eta0 * math.exp(-cfg.lambda_eta * t),
        beta=cfg.beta0 * (1.0 - math.exp(-cfg.lambda_beta * t)),
        psi=cfg.psi,
        alpha=cfg.alpha,
    )


def loss_low(F_T, F_S, adapter=None, mask: np.ndarray | None = None) -> Tensor:
    """Mean squared difference between teacher features and adapted student features.

    ``mask`` (broadcastable to the leading axes) restricts the mean to valid rows."""
    F_T = ad.as_tensor(F_T)
    F_S = adapter(F_S) if adapter is not None else ad.as_tensor(F_S)
    if F_T.shape != F_S.shape:
        raise ContractError(f"adapted student features {F_S.shape} != teacher features {F_T.shape}")
    diff = F_S - F_T.detach()
    sq = diff * diff
    if mask is None:
        return sq.mean()
    m = np.broadcast_to(np.asarray(mask, dtype=float)[..., None], F_T.shape)
    return (sq * m).sum() * (1.0 / max(m.sum(), 1.0))


def upsample_nearest(a, shape: tuple) -> Tensor:
    """Nearest-neighbour resize of the trailing ``len(shape)`` axes."""
    a = ad.as_tensor(a)
    k = len(shape)
    src = a.shape[-k:]
    if tuple(src) == tuple(shape):
        return a
    out = a
    for i, (n_in, n_out) in enumerate(zip(src, shape)):
        idx = (np.arange(n_out) * n_in) // n_out
        axis = a.ndim - k + i
        sl = [slice(None)] * a.ndim
        sl[axis] = idx
        out = out[tuple(sl)]
    return out


def loss_att(A_T, A_S) -> Tensor:
    """Mean squared difference after resizing the student map to the teacher's
    (T, H, W) resolution."""
    A_T = ad.as_tensor(A_T)
    k = min(3, A_T.ndim)
    A_S = upsample_nearest(A_S, A_T.shape[-k:])
    if A_S.shape != A_T.shape:
        A_S = ad.broadcast_to(A_S, A_T.shape)
    diff = A_S - A_T.detach()
    return (diff * diff).mean()


def l2_normalize(z, eps: float = 1e-12) -> Tensor:
    z = ad.as_tensor(z)
    return z / ad.sqrt((z * z).sum(axis=-1, keepdims=True) + eps)


def negative_mask(groups: int, modes: int, kind: str = "both") -> np.ndarray:
    """(M, M) bool over items ordered (group, mode): which candidates are negatives."""
    if kind not in NEGATIVE_MODES:
        raise ConfigError(f"negatives must be one of {NEGATIVE_MODES}")
    g = np.repeat(np.arange(groups), modes)
    k = np.tile(np.arange(modes), groups)
    same_g = g[:, None] == g[None, :]
    same_k = k[:, None] == k[None, :]
    eye = same_g & same_k
    if kind == "none":
        return np.zeros_like(eye)
    if kind == "in-batch":
        return ~same_g & same_k
    if kind == "in-mode":
        return same_g & ~same_k
    if kind == "all":
        return ~eye
    return (same_g & ~same_k) | (~same_g & same_k)


def info_nce(z_T, z_S, negatives: np.ndarray, tau: float = 0.07) -> Tensor:
    """Mean over anchors i of -log softmax_i(sim(z_T_i, z_S_j)/tau) restricted to
    j in {i} U negatives[i]."""
    z_T = l2_normalize(ad.as_tensor(z_T).detach())
    z_S = l2_normalize(z_S)
    sim = (z_T @ z_S.transpose(1, 0)) * (1.0 / tau)
    M = sim.shape[0]
    allowed = np.asarray(negatives, dtype=bool) | np.eye(M, dtype=bool)
    logp = ad.log_softmax(sim, axis=-1, mask=allowed)
    diag = ad.gather(logp, np.arange(M)[:, None], axis=1)
    return -diag.mean()


def match_modes(traj_S: np.ndarray, traj_T: np.ndarray) -> np.ndarray:
    """For each student mode, the teacher mode with the smallest average
    displacement: traj (..., K, T, 2) -> (..., K_S) indices into K_T."""
    d = np.linalg.norm(traj_S[..., :, None, :, :] - traj_T[..., None, :, :, :], axis=-1).mean(axis=-1)
    return np.argmin(d, axis=-1)


def align_teacher_latents(z_T: np.ndarray, traj_S: np.ndarray, traj_T: np.ndarray) -> np.ndarray:
    """Reorder teacher mode latents (G, K, d) so row k is the positive for student mode k."""
    idx = match_modes(traj_S, traj_T)
    return np.take_along_axis(np.asarray(z_T), idx[..., None], axis=-2)


def loss_sem(z_T, z_S, negatives: str | np.ndarray = "both", tau: float = 0.07) -> Tensor:
    """Contrastive alignment of mode latents (G, K, d) or flat (M, d)."""
    z_T, z_S = ad.as_tensor(z_T), ad.as_tensor(z_S)
    if z_T.shape != z_S.shape:
        raise ContractError(f"latent shapes differ: {z_T.shape} vs {z_S.shape}")
    if z_T.ndim == 3:
        G, K, d = z_T.shape
        mask = negative_mask(G, K, negatives) if isinstance(negatives, str) else negatives
        z_T, z_S = z_T.reshape(G * K, d), z_S.reshape(G * K, d)
    elif isinstance(negatives, str):
        # flat latents carry no mode structure: every other item is a negative
        mask = negative_mask(z_T.shape[0], 1, "none" if negatives == "none" else "all")
    else:
        mask = negatives
    return info_nce(z_T, z_S, mask, tau)

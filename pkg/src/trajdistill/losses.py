"""Prediction losses and forecast metrics shared by teacher and student."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .scene import Batch

MISS_THRESHOLD = 2.0
# typical highway magnitudes of (accel m/s^2, steer rad); imitation errors are
# measured in these units so small steering biases are not drowned out
ACTION_SCALE = np.array([1.0, 0.02])


def winner_index(traj: np.ndarray, future: np.ndarray) -> np.ndarray:
    """Index of the mode with the smallest average displacement: traj (..., K, T, 2), future (..., T, 2)."""
    err = np.linalg.norm(traj - future[..., None, :, :], axis=-1).mean(axis=-1)
    return np.argmin(err, axis=-1)


def wta_loss(traj, logits, future: np.ndarray, weight: np.ndarray) -> dict:
    """Winner-take-all unit-variance Gaussian NLL on the closest mode plus
    cross-entropy of the mode logits toward that mode.

    traj (P, K, T, 2), logits (P, K), future (P, T, 2), weight (P,) row weights."""
    P, K = logits.shape
    weight = np.asarray(weight, dtype=float)
    denom = max(weight.sum(), 1.0)
    win = winner_index(traj.data, future)
    chosen = ad.gather(traj, np.broadcast_to(win[:, None, None, None], (P, 1) + traj.shape[2:]), axis=1)
    diff = chosen.reshape(P, *traj.shape[2:]) - future
    nll = 0.5 * (diff * diff).sum(axis=-1).mean(axis=-1)
    reg = (nll * weight).sum() * (1.0 / denom)
    logp = ad.log_softmax(logits, axis=-1)
    ce = -(ad.gather(logp, win[:, None], axis=1).reshape(P) * weight).sum() * (1.0 / denom)
    return {"reg": reg, "cls": ce, "winner": win}


def agent_weights(batch: Batch, agents: str = "all") -> np.ndarray:
    """(B, N) row weights: all agents with a ground-truth future, or the ego only."""
    w = batch.future_mask.astype(float)
    if agents == "ego":
        w = np.zeros_like(w)
        w[:, 0] = batch.future_mask[:, 0]
    return w


def task_loss(out: dict, batch: Batch, agents: str = "all", action_weight: float = 1.0) -> dict:
    """Prediction loss over valid agents; adds maneuver and action imitation
    terms when the model provides those heads."""
    B, N, K = out["logits"].shape
    w = agent_weights(batch, agents).reshape(B * N)
    traj = out["traj"].reshape(B * N, K, *out["traj"].shape[3:])
    parts = wta_loss(traj, out["logits"].reshape(B * N, K), batch.future.reshape(B * N, *batch.future.shape[2:]), w)
    total = parts["reg"] + parts["cls"]
    comps = {"reg": parts["reg"], "cls": parts["cls"]}
    if "maneuver_logits" in out:
        logp = ad.log_softmax(out["maneuver_logits"], axis=-1)
        comps["maneuver"] = -ad.gather(logp, batch.label[:, None], axis=1).mean()
        total = total + comps["maneuver"]
    if "action_mean" in out and action_weight > 0:
        d = (out["action_mean"] - batch.expert_action) * (1.0 / ACTION_SCALE)
        comps["action"] = (d * d).mean() * action_weight
        total = total + comps["action"]
    comps["total"] = total
    return comps


def output_kd_loss(out: dict, teacher_out: dict, batch: Batch) -> Tensor:
    """Output-only distillation by soft mixture matching: each teacher mode is
    assigned to its closest student mode, which is pulled toward it with the
    teacher's probability as weight; the student's mode logits are fit to the
    teacher mass collected by each student mode."""
    B, N, K = out["logits"].shape
    P = B * N
    traj = out["traj"].reshape(P, K, *out["traj"].shape[3:])
    t_traj = teacher_out["traj"].data.reshape(P, -1, *out["traj"].shape[3:])
    t_prob = teacher_out["probs"].data.reshape(P, -1)
    w = batch.agent_mask.astype(float).reshape(P)
    denom = max(w.sum(), 1.0)
    # (P, K_t, K_s) average displacement between teacher and student modes
    dist = np.linalg.norm(t_traj[:, :, None] - traj.data[:, None], axis=-1).mean(axis=-1)
    assign = np.argmin(dist, axis=-1)  # (P, K_t)
    Kt = t_traj.shape[1]
    chosen = ad.gather(traj, np.broadcast_to(assign[:, :, None, None], (P, Kt) + traj.shape[2:]), axis=1)
    diff = chosen - t_traj
    nll = 0.5 * (diff * diff).sum(axis=-1).mean(axis=-1)  # (P, K_t)
    reg = (nll * (t_prob * w[:, None])).sum() * (1.0 / denom)
    soft = np.zeros((P, K))
    np.add.at(soft, (np.repeat(np.arange(P), Kt), assign.ravel()), t_prob.ravel())
    logp = ad.log_softmax(out["logits"].reshape(P, K), axis=-1)
    ce = -(logp * (soft * w[:, None])).sum() * (1.0 / denom)
    return reg + ce


# ---------------------------------------------------------------------------
# metrics

def forecast_errors(traj: np.ndarray, probs: np.ndarray, future: np.ndarray, dt: float = 0.2,
                    threshold: float = MISS_THRESHOLD) -> dict:
    """Per-sample errors for traj (P, K, T, 2), probs (P, K), future (P, T, 2)."""
    disp = np.linalg.norm(traj - future[:, None], axis=-1)  # (P, K, T)
    ade = disp.mean(axis=-1)
    fde = disp[..., -1]
    top = np.argmax(probs, axis=-1)
    top_disp = np.take_along_axis(disp, top[:, None, None], axis=1)[:, 0]  # (P, T)
    min_fde = fde.min(axis=-1)
    return {"min_ade": ade.min(axis=-1), "min_fde": min_fde, "miss": min_fde > threshold,
            "top_sq": top_disp ** 2}


def summarize_errors(err: dict, labels: np.ndarray, dt: float = 0.2) -> dict:
    """Aggregate per-sample errors into RMSE at 1..5 s, minADE, minFDE, MR and per-maneuver RMSE."""
    steps_per_s = int(round(1.0 / dt))
    T = err["top_sq"].shape[1]
    rep = {}
    for s in range(1, T // steps_per_s + 1):
        rep[f"rmse_{s}s"] = float(np.sqrt(err["top_sq"][:, s * steps_per_s - 1].mean()))
    rep["min_ade"] = float(err["min_ade"].mean())
    rep["min_fde"] = float(err["min_fde"].mean())
    rep["miss_rate"] = float(err["miss"].mean())
    for lab, name in enumerate(("lane_keep", "left_lc", "right_lc")):
        sel = labels == lab
        # absent maneuvers report 0 with a zero count alongside
        rep[f"rmse_{name}"] = float(np.sqrt(err["top_sq"][sel].mean())) if sel.any() else 0.0
        rep[f"count_{name}"] = int(sel.sum())
    return rep

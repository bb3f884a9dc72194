"""Scenario complexity, curriculum stage advancement and elastic weight consolidation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError
from .losses import task_loss
from .scene import Batch, ObservationWindow, Scenario

COMPLEXITY_WEIGHTS = (0.3, 0.4, 0.3)
ENTROPY_BINS = 8
FLAT_HEADING = 1e-6


@dataclass(frozen=True)
class CurriculumConfig:
    initial_bound: float = 0.25
    delta_c: float = 0.1
    acc_threshold: float = 0.85
    acc_margin: float = 0.05
    stages: int = 5
    ewc_lambda: float = 400.0
    slices: str = "band"  # "band": only scenarios new to the stage; "cumulative": everything below the bound

    def __post_init__(self):
        if self.stages < 1 or self.acc_margin <= 0 or self.delta_c < 0:
            raise ConfigError("curriculum needs stages >= 1, acc_margin > 0 and delta_c >= 0")
        if self.slices not in ("band", "cumulative"):
            raise ConfigError("slices must be 'band' or 'cumulative'")


@dataclass
class CurriculumState:
    stage: int = 0
    bound: float = 0.25
    history: list = field(default_factory=list)


def trajectory_entropy(window: ObservationWindow) -> float:
    """Mean normalised Shannon entropy of neighbours' heading-change histograms.

    Bins: 8 uniform bins over [-m, m] with m the largest |delta heading| seen
    among the window's neighbours; 0 when nothing turns."""
    scenes = window.scenes
    if len(scenes) < 2:
        return 0.0
    tracks: dict[int, list[float]] = {}
    for s in scenes:
        for aid, st in s.neighbors:
            tracks.setdefault(aid, []).append(st.theta)
    changes = []
    for th in tracks.values():
        if len(th) >= 2:
            d = np.diff(np.unwrap(np.asarray(th)))
            changes.append(d)
    if not changes:
        return 0.0
    m = max(float(np.abs(c).max()) for c in changes)
    if m < FLAT_HEADING:
        return 0.0
    ents = []
    for c in changes:
        hist, _ = np.histogram(c, bins=ENTROPY_BINS, range=(-m, m))
        p = hist[hist > 0] / hist.sum()
        ents.append(float(-(p * np.log(p)).sum() / math.log(ENTROPY_BINS)))
    return float(np.mean(ents))


def histogram_entropy(values: np.ndarray, bins: int = ENTROPY_BINS) -> float:
    values = np.asarray(values, dtype=float)
    m = float(np.abs(values).max()) if values.size else 0.0
    if m < FLAT_HEADING:
        return 0.0
    hist, _ = np.histogram(values, bins=bins, range=(-m, m))
    p = hist[hist > 0] / hist.sum()
    return float(-(p * np.log(p)).sum() / math.log(bins))


def raw_features(sc: Scenario) -> np.ndarray:
    """(mean neighbour count, mean |relative speed|, trajectory entropy)."""
    scenes = sc.window.scenes
    counts = [len(s.neighbors) for s in scenes]
    rel = [abs(st.v - s.ego.v) for s in scenes for _, st in s.neighbors]
    return np.array([float(np.mean(counts)), float(np.mean(rel)) if rel else 0.0,
                     trajectory_entropy(sc.window)])


@dataclass(frozen=True)
class ComplexityStats:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    @classmethod
    def fit(cls, scenarios) -> "ComplexityStats":
        feats = np.array([raw_features(sc) for sc in scenarios])
        if feats.size == 0:
            raise ContractError("complexity statistics need at least one scenario")
        return cls(tuple(feats.min(axis=0)), tuple(feats.max(axis=0)))

    def normalize(self, f: np.ndarray) -> np.ndarray:
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        span = np.where(hi > lo, hi - lo, 1.0)
        return np.clip((np.asarray(f) - lo) / span, 0.0, 1.0)


def weighted_complexity(components) -> float:
    n, v, h = components
    w = COMPLEXITY_WEIGHTS
    return w[0] * n + w[1] * v + w[2] * h


def complexity(sc: Scenario, stats: ComplexityStats | None) -> float:
    if stats is None:
        raise ContractError("complexity needs dataset normalisation statistics")
    return weighted_complexity(stats.normalize(raw_features(sc)))


def advance(state: CurriculumState, acc: float, cfg: CurriculumConfig = CurriculumConfig()) -> float:
    """Next stage bound; the increment is capped at delta_c and never negative."""
    if not 0.0 <= acc <= 1.0:
        raise ContractError("accuracy must lie in [0, 1]")
    inc = cfg.delta_c * min(1.0, (acc - cfg.acc_threshold) / cfg.acc_margin)
    return state.bound + max(inc, 0.0)


# ---------------------------------------------------------------------------
# elastic weight consolidation

@dataclass
class EwcState:
    fisher: dict
    snapshot: dict
    lam: float = 400.0


def ewc_penalty(named_params, state: EwcState | None) -> Tensor:
    """sum_i lam/2 * F_i * (theta_i - theta*_i)^2 over the snapshotted tensors."""
    total = Tensor(0.0)
    if state is None:
        return total
    for name, p in named_params:
        if name not in state.fisher:
            continue
        F, ref = state.fisher[name], state.snapshot[name]
        if F.shape != p.shape or ref.shape != p.shape:
            raise ContractError(f"{name}: parameter {p.shape} vs snapshot {ref.shape}")
        d = p - ref
        total = total + (d * d * F).sum() * (0.5 * state.lam)
    return total


def fisher_diagonal(model, batch: Batch, named_params, max_samples: int | None = None) -> dict:
    """Empirical diagonal Fisher: mean over samples of the squared gradient of
    the per-sample prediction negative log-likelihood (winner-take-all
    regression plus mode cross-entropy against the recorded futures)."""
    named_params = list(named_params)
    acc = {name: np.zeros(p.shape) for name, p in named_params}
    n = batch.size if max_samples is None else min(batch.size, max_samples)
    for i in range(n):
        b = batch.take([i])
        with ad.Tape() as tape:
            parts = task_loss(model(b, internals=False), b, agents="all", action_weight=0.0)
            nll = parts["reg"] + parts["cls"]
        grads = ad.backward(tape, nll)
        for name, p in named_params:
            g = grads.get(p)
            if g is not None:
                acc[name] += g * g
    return {name: a / max(n, 1) for name, a in acc.items()}

"""Closed-loop highway environment: kinematic bicycle ego, replayed neighbours,
three-term reward, batched rollouts and safety summaries."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, DomainError
from .scene import (CONTEXT_DIM, DT, FEAT_DIM, NUM_TYPES, T_F, T_H, AgentState, Batch,
                    GeneratorConfig, ObservationWindow, Scenario, ScenarioSet, Scene, _CTX_SCALE,
                    _STATE_SCALE, bearing_order, wrap_angle)

SIM_DT = 0.1
WHEELBASE = 2.7
ACCEL_LIMIT = 5.0
STEER_LIMIT = 0.5
COLLISION_DIST = 1.0
TTC_INF = math.inf
TTC_CAP = 20.0  # summary statistics consider only encounters closer than this


@dataclass(frozen=True)
class BicycleState:
    x: float
    y: float
    theta: float
    v: float

    def __post_init__(self):
        if self.v < 0:
            raise DomainError("speed must be non-negative")


@dataclass(frozen=True)
class Action:
    accel: float
    steer: float

    @classmethod
    def clamped(cls, accel: float, steer: float) -> "Action":
        return cls(float(np.clip(accel, -ACCEL_LIMIT, ACCEL_LIMIT)), float(np.clip(steer, -STEER_LIMIT, STEER_LIMIT)))


@dataclass(frozen=True)
class RewardConfig:
    w_safety: float = 0.5
    w_comfort: float = 0.3
    w_efficiency: float = 0.2
    d_safe: float = 4.0
    a_max: float = 3.0
    lambda_viol: float = 2.0
    mu: float = 1.0
    nu: float = 0.0
    dt: float = SIM_DT

    def __post_init__(self):
        if min(self.w_safety, self.w_comfort, self.w_efficiency) < 0:
            raise ContractError("reward weights must be non-negative")


def step_bicycle(s: BicycleState, a: Action, dt: float = SIM_DT, wheelbase: float = WHEELBASE) -> BicycleState:
    if not dt > 0:
        raise DomainError("dt must be positive")
    a = Action.clamped(a.accel, a.steer)
    x = s.x + s.v * math.cos(s.theta) * dt
    y = s.y + s.v * math.sin(s.theta) * dt
    th = wrap_angle(s.theta + s.v / wheelbase * math.tan(a.steer) * dt)
    v = max(s.v + a.accel * dt, 0.0)
    return BicycleState(x, y, th, v)


def step_bicycle_batch(state: np.ndarray, action: np.ndarray, dt: float = SIM_DT,
                       wheelbase: float = WHEELBASE) -> np.ndarray:
    """Vectorised Euler step; state (E, 4) = (x, y, theta, v), action (E, 2)."""
    acc = np.clip(action[:, 0], -ACCEL_LIMIT, ACCEL_LIMIT)
    steer = np.clip(action[:, 1], -STEER_LIMIT, STEER_LIMIT)
    x, y, th, v = state.T
    out = np.empty_like(state)
    out[:, 0] = x + v * np.cos(th) * dt
    out[:, 1] = y + v * np.sin(th) * dt
    t = th + v / wheelbase * np.tan(steer) * dt
    out[:, 2] = np.arctan2(np.sin(t), np.cos(t))
    out[:, 3] = np.maximum(v + acc * dt, 0.0)
    return out


def body_acceleration(accel: float, steer: float, v: float, wheelbase: float = WHEELBASE) -> np.ndarray:
    """(longitudinal, lateral) acceleration produced by an action at speed v."""
    return np.array([accel, v * v * math.tan(steer) / wheelbase])


def reward(state: BicycleState, action: Action, prev_action: Action, neighbors: np.ndarray,
           cfg: RewardConfig = RewardConfig(), violation: bool = False, theta_target: float = 0.0) -> tuple[float, dict]:
    """Weighted safety + comfort + efficiency reward.

    ``neighbors`` holds valid neighbour centres (n, 2); ``violation`` marks a
    collision or road departure at this step."""
    neighbors = np.asarray(neighbors, dtype=float).reshape(-1, 2)
    if len(neighbors):
        d_min = float(np.min(np.hypot(neighbors[:, 0] - state.x, neighbors[:, 1] - state.y)))
        safety = -math.exp(-d_min / cfg.d_safe)
    else:
        d_min = math.inf
        safety = 0.0
    if violation:
        safety -= cfg.lambda_viol
    a_now = body_acceleration(action.accel, action.steer, state.v)
    a_prev = body_acceleration(prev_action.accel, prev_action.steer, state.v)
    jerk = a_now - a_prev
    comfort = -float(jerk @ jerk) - cfg.mu * max(0.0, float(np.hypot(*a_now)) - cfg.a_max)
    efficiency = state.v * math.cos(state.theta - theta_target) - cfg.nu * cfg.dt
    total = cfg.w_safety * safety + cfg.w_comfort * comfort + cfg.w_efficiency * efficiency
    return total, {"safety": safety, "comfort": comfort, "efficiency": efficiency, "d_min": d_min,
                   "violation": bool(violation)}


# ---------------------------------------------------------------------------
# scenario replay

@dataclass
class Replay:
    """0.2 s tracks for every agent over [-(T_h-1)dt, T_f dt] (ego row 0 is the recording)."""

    times: np.ndarray       # (S,)
    pos: np.ndarray         # (A, S, 2)
    speed: np.ndarray       # (A, S)
    heading: np.ndarray     # (A, S)
    accel: np.ndarray       # (A, S)
    types: np.ndarray       # (A,)
    context: np.ndarray     # (CONTEXT_DIM,)
    road: tuple[float, float]
    target_y: float

    @classmethod
    def from_scenario(cls, sc: Scenario) -> "Replay":
        scenes = sc.window.scenes
        dt = sc.window.dt
        last = scenes[-1]
        ids = [0] + [aid for aid, _ in last.neighbors]
        fut = dict(sc.future)
        ids = [a for a in ids if a in fut]
        S = T_H + T_F
        times = np.round(np.arange(-(T_H - 1), T_F + 1) * dt, 10)
        A = len(ids)
        pos = np.zeros((A, S, 2))
        speed = np.zeros((A, S))
        head = np.zeros((A, S))
        acc = np.zeros((A, S))
        types = np.zeros(A, dtype=int)
        for k, aid in enumerate(ids):
            for s, scene in enumerate(scenes):
                st = scene.ego if aid == 0 else dict(scene.neighbors).get(aid)
                if st is None:
                    st = last.ego if aid == 0 else dict(last.neighbors)[aid]
                pos[k, s] = (st.x, st.y)
                speed[k, s], head[k, s], acc[k, s] = st.v, st.theta, st.a
            types[k] = (last.ego if aid == 0 else dict(last.neighbors)[aid]).agent_type
            f = np.asarray(fut[aid])
            pos[k, T_H:] = f
            seg = np.diff(pos[k, T_H - 1:], axis=0)
            speed[k, T_H:] = np.hypot(seg[:, 0], seg[:, 1]) / dt
            head[k, T_H:] = np.arctan2(seg[:, 1], seg[:, 0])
            acc[k, T_H:] = np.diff(np.concatenate([[speed[k, T_H - 1]], speed[k, T_H:]])) / dt
        meta = sc.meta_dict()
        ctx = np.asarray(last.context, dtype=float)
        road = (meta.get("road_y_min", -np.inf), meta.get("road_y_max", np.inf))
        return cls(times, pos, speed, head, acc, types, ctx, road, meta.get("target_lane_y", 0.0))

    def neighbors_at(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Interpolated neighbour positions (n, 2) and velocities (n, 2) at time t."""
        n = self.pos.shape[0] - 1
        if n == 0:
            return np.zeros((0, 2)), np.zeros((0, 2))
        t = min(max(t, self.times[0]), self.times[-1])
        i = min(int(np.searchsorted(self.times, t, side="right")) - 1, len(self.times) - 2)
        w = (t - self.times[i]) / (self.times[i + 1] - self.times[i])
        p = (1 - w) * self.pos[1:, i] + w * self.pos[1:, i + 1]
        vel = (self.pos[1:, i + 1] - self.pos[1:, i]) / (self.times[i + 1] - self.times[i])
        return p, vel


def _interp_rows(times: np.ndarray, values: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Linear interpolation of values (A, S) at query times (Q,) -> (A, Q)."""
    q = np.clip(query, times[0], times[-1])
    i = np.clip(np.searchsorted(times, q, side="right") - 1, 0, len(times) - 2)
    w = (q - times[i]) / (times[i + 1] - times[i])
    return values[:, i] * (1 - w) + values[:, i + 1] * w


# ---------------------------------------------------------------------------
# rollouts

@dataclass
class EpisodeRollout:
    states: list = field(default_factory=list)        # BicycleState per step (before acting)
    next_states: list = field(default_factory=list)   # BicycleState after each step
    actions: list = field(default_factory=list)       # (accel, steer) as sampled
    rewards: list = field(default_factory=list)
    values: list = field(default_factory=list)
    log_probs: list = field(default_factory=list)
    dones: list = field(default_factory=list)
    components: list = field(default_factory=list)
    features: list = field(default_factory=list)      # policy features per step
    neighbor_pos: list = field(default_factory=list)  # (n, 2) per step
    neighbor_vel: list = field(default_factory=list)
    bootstrap: float = 0.0
    collision: bool = False
    offroad: bool = False
    horizon: int = 0

    def __len__(self) -> int:
        return len(self.rewards)

    @property
    def total_reward(self) -> float:
        return float(np.sum(self.rewards))

    @property
    def success(self) -> bool:
        return not (self.collision or self.offroad) and len(self) == self.horizon


class VecEnv:
    """Synchronous batch of independent environments built from scenarios."""

    def __init__(self, scenarios, n_max: int = 8, reward_cfg: RewardConfig = RewardConfig(),
                 dt: float = SIM_DT):
        self.scenarios = list(scenarios)
        self.replays = [Replay.from_scenario(sc) for sc in self.scenarios]
        self.n_max = n_max
        self.cfg = reward_cfg
        self.dt = dt
        self.reset()

    def reset(self):
        E = len(self.replays)
        self.t = 0.0
        self.steps = 0
        self.state = np.zeros((E, 4))
        self.prev_action = np.zeros((E, 2))
        self.done = np.zeros(E, dtype=bool)
        self.hist_t = []
        self.hist = []  # per env list of (x, y, v, theta, a) rows
        for e, rp in enumerate(self.replays):
            obs_t = rp.times[:T_H]
            rows = np.stack([rp.pos[0, :T_H, 0], rp.pos[0, :T_H, 1], rp.speed[0, :T_H],
                             rp.heading[0, :T_H], rp.accel[0, :T_H]], axis=1)
            self.hist.append([r for r in rows])
            self.state[e] = (rp.pos[0, T_H - 1, 0], rp.pos[0, T_H - 1, 1], rp.heading[0, T_H - 1],
                             rp.speed[0, T_H - 1])
        self.hist_t = list(np.round(self.replays[0].times[:T_H], 10)) if self.replays else []
        return self.observe()

    def observe(self) -> Batch:
        """Policy input windows re-centred on each ego's current position."""
        E = len(self.replays)
        N = self.n_max
        feats = np.zeros((E, T_H, N, FEAT_DIM))
        mask = np.zeros((E, T_H, N), dtype=bool)
        pos = np.zeros((E, T_H, N, 2))
        vel = np.zeros((E, N, 2))
        order = np.tile(np.arange(N), (E, 1))
        query = np.round(self.t - DT * np.arange(T_H - 1, -1, -1), 10)
        ht = np.asarray(self.hist_t)
        for e, rp in enumerate(self.replays):
            hist = np.asarray(self.hist[e])  # (S, 5)
            ego = _interp_rows(ht, hist.T, query)  # (5, T_H)
            ox, oy = ego[0, -1], ego[1, -1]
            n = min(rp.pos.shape[0] - 1, N - 1)
            nb_x = _interp_rows(rp.times, rp.pos[1:n + 1, :, 0], query)
            nb_y = _interp_rows(rp.times, rp.pos[1:n + 1, :, 1], query)
            nb_v = _interp_rows(rp.times, rp.speed[1:n + 1], query)
            nb_h = _interp_rows(rp.times, rp.heading[1:n + 1], query)
            nb_a = _interp_rows(rp.times, rp.accel[1:n + 1], query)
            ctx = rp.context.copy()
            for k in (0, 2, 3, 4, 5):
                ctx[k] -= oy
            ctx_f = ctx * _CTX_SCALE
            rows = [(ego[0] - ox, ego[1] - oy, ego[2], ego[3], ego[4], rp.types[0])]
            rows += [(nb_x[j] - ox, nb_y[j] - oy, nb_v[j], nb_h[j], nb_a[j], rp.types[j + 1]) for j in range(n)]
            for k, (x, y, v, th, a, typ) in enumerate(rows):
                core = np.stack([x, y, v, th, a], axis=1) * _STATE_SCALE
                onehot = np.zeros((T_H, NUM_TYPES))
                onehot[:, typ] = 1.0
                feats[e, :, k] = np.concatenate([core, onehot, np.tile(ctx_f, (T_H, 1))], axis=1)
                mask[e, :, k] = True
                pos[e, :, k, 0], pos[e, :, k, 1] = x, y
                vel[e, k] = (v[-1] * math.cos(th[-1]), v[-1] * math.sin(th[-1]))
            order[e] = bearing_order(pos[e, -1], mask[e, -1])
        return Batch(feats, mask, pos, vel, np.zeros((E, N, T_F, 2)), np.zeros((E, N), dtype=bool),
                     np.zeros(E, dtype=np.int64), np.zeros((E, 2)), order)

    def step(self, actions: np.ndarray):
        """Advance every environment; returns (rewards, dones, info list)."""
        actions = np.asarray(actions, dtype=float)
        clamped = np.stack([np.clip(actions[:, 0], -ACCEL_LIMIT, ACCEL_LIMIT),
                            np.clip(actions[:, 1], -STEER_LIMIT, STEER_LIMIT)], axis=1)
        new_state = step_bicycle_batch(self.state, clamped, self.dt)
        t_new = round(self.t + self.dt, 10)
        rewards = np.zeros(len(self.replays))
        dones = np.zeros(len(self.replays), dtype=bool)
        infos = []
        for e, rp in enumerate(self.replays):
            x, y, th, v = new_state[e]
            nb, nb_vel = rp.neighbors_at(t_new)
            d = np.hypot(nb[:, 0] - x, nb[:, 1] - y) if len(nb) else np.zeros(0)
            collision = bool(len(d) and d.min() < COLLISION_DIST)
            offroad = bool(y < rp.road[0] or y > rp.road[1])
            st = BicycleState(float(x), float(y), float(th), float(v))
            r, comp = reward(st, Action(*clamped[e]), Action(*self.prev_action[e]), nb, self.cfg,
                             collision or offroad, 0.0)
            comp.update(collision=collision, offroad=offroad)
            rewards[e] = r
            dones[e] = collision or offroad
            infos.append({"components": comp, "neighbors": nb, "neighbor_vel": nb_vel, "state": st})
            self.hist[e].append(np.array([x, y, v, th, clamped[e, 0]]))
        self.hist_t.append(t_new)
        self.state = new_state
        self.prev_action = clamped
        self.t = t_new
        self.steps += 1
        return rewards, dones, infos


class ConstantPolicy:
    """Deterministic policy emitting a fixed action (zero by default)."""

    def __init__(self, accel: float = 0.0, steer: float = 0.0):
        self.action = np.array([accel, steer])

    def act(self, obs: Batch, rng: np.random.Generator | None = None):
        E = obs.size
        return np.tile(self.action, (E, 1)), np.zeros(E), np.zeros(E), np.zeros((E, 0))

    def value(self, obs: Batch) -> np.ndarray:
        return np.zeros(obs.size)


class ReplayPolicy:
    """Tracks each scenario's recorded ego future by inverting the bicycle model."""

    def __init__(self, scenarios, dt: float = SIM_DT, wheelbase: float = WHEELBASE):
        self.tracks = []
        for sc in scenarios:
            rp = Replay.from_scenario(sc)
            t = np.round(np.arange(0, T_F * DT + 1e-9, dt), 10)
            xs = np.interp(t, rp.times, rp.pos[0, :, 0])
            ys = np.interp(t, rp.times, rp.pos[0, :, 1])
            self.tracks.append((t, xs, ys))
        self.dt, self.L, self.k = dt, wheelbase, 0
        self.env: VecEnv | None = None

    def bind(self, env: VecEnv) -> "ReplayPolicy":
        self.env = env
        return self

    def act(self, obs: Batch, rng=None):
        env = self.env
        k = env.steps
        out = np.zeros((obs.size, 2))
        for e, (t, xs, ys) in enumerate(self.tracks):
            if k + 2 >= len(t):
                continue
            x, y, th, v = env.state[e]
            # aim at the next recorded waypoint and the speed needed to reach the one after
            v_next = math.hypot(xs[k + 2] - xs[k + 1], ys[k + 2] - ys[k + 1]) / self.dt
            th_next = math.atan2(ys[k + 2] - y - v * math.sin(th) * self.dt,
                                 xs[k + 2] - x - v * math.cos(th) * self.dt)
            out[e, 0] = (v_next - v) / self.dt
            dth = math.atan2(math.sin(th_next - th), math.cos(th_next - th))
            out[e, 1] = math.atan(self.L * dth / (v * self.dt)) if v > 1.0 else 0.0
        return out, np.zeros(obs.size), np.zeros(obs.size), np.zeros((obs.size, 0))

    def value(self, obs: Batch) -> np.ndarray:
        return np.zeros(obs.size)


def run_batch(policy, scenarios, H: int, seed: int = 0, n_max: int = 8,
              reward_cfg: RewardConfig = RewardConfig()) -> list[EpisodeRollout]:
    """Roll out ``policy`` in one environment per scenario for at most H steps."""
    env = VecEnv(scenarios, n_max, reward_cfg)
    if hasattr(policy, "bind"):
        policy.bind(env)
    rng = np.random.default_rng(seed)
    E = len(env.replays)
    rollouts = [EpisodeRollout(horizon=H) for _ in range(E)]
    active = np.ones(E, dtype=bool)
    obs = env.observe()
    for _ in range(H):
        if not active.any():
            break
        actions, logp, values, feats = policy.act(obs, rng)
        states = env.state.copy()
        rewards, dones, infos = env.step(actions)
        for e in np.nonzero(active)[0]:
            ro = rollouts[e]
            x, y, th, v = states[e]
            ro.states.append(BicycleState(float(x), float(y), float(th), float(v)))
            ro.next_states.append(infos[e]["state"])
            ro.actions.append(np.asarray(actions[e], dtype=float))
            ro.rewards.append(float(rewards[e]))
            ro.values.append(float(values[e]))
            ro.log_probs.append(float(logp[e]))
            ro.dones.append(bool(dones[e]))
            ro.components.append(infos[e]["components"])
            ro.features.append(feats[e] if feats.shape[1] else None)
            ro.neighbor_pos.append(infos[e]["neighbors"])
            ro.neighbor_vel.append(infos[e]["neighbor_vel"])
            ro.collision |= infos[e]["components"]["collision"]
            ro.offroad |= infos[e]["components"]["offroad"]
            if dones[e]:
                active[e] = False
        obs = env.observe()
    if active.any():
        boot = policy.value(obs)
        for e in np.nonzero(active)[0]:
            rollouts[e].bootstrap = float(boot[e])
    return rollouts


def run_episode(policy, scenario: Scenario, H: int, seed: int = 0, **kw) -> EpisodeRollout:
    return run_batch(policy, [scenario], H, seed, **kw)[0]


# ---------------------------------------------------------------------------
# safety measures and outputs

def ttc_and_mindist(rollout: EpisodeRollout) -> tuple[np.ndarray, np.ndarray]:
    """Per-step time-to-collision (inf when no neighbour is closing) and
    minimum centre distance, both measured after each step."""
    if len(rollout) == 0:
        raise ContractError("empty rollout")
    ttc = np.full(len(rollout), TTC_INF)
    dmin = np.full(len(rollout), np.inf)
    for k in range(len(rollout)):
        st = rollout.next_states[k]
        nb = rollout.neighbor_pos[k]
        if len(nb) == 0:
            continue
        ego_p = np.array([st.x, st.y])
        ego_v = np.array([st.v * math.cos(st.theta), st.v * math.sin(st.theta)])
        rel = nb - ego_p
        rng_ = np.hypot(rel[:, 0], rel[:, 1])
        dmin[k] = rng_.min()
        relv = rollout.neighbor_vel[k] - ego_v
        closing = -np.sum(rel * relv, axis=1) / np.maximum(rng_, 1e-12)
        cand = np.where(closing > 0, rng_ / np.where(closing > 0, closing, 1.0), TTC_INF)
        ttc[k] = cand.min()
    return ttc, dmin


def time_to_collision(p_ego, v_ego, p_other, v_other) -> float:
    rel = np.asarray(p_other, float) - np.asarray(p_ego, float)
    relv = np.asarray(v_other, float) - np.asarray(v_ego, float)
    r = float(np.hypot(*rel))
    closing = -float(rel @ relv) / max(r, 1e-12)
    return r / closing if closing > 0 else TTC_INF


SUMMARY_FIELDS = ("episodes", "collision_rate", "offroad_rate", "success_rate", "mean_reward",
                  "jerk_rms", "ttc_p5", "ttc_mean", "min_dist_mean")


def summarize(rollouts: list[EpisodeRollout], dt: float = SIM_DT) -> dict:
    jerks, ttcs, dmins = [], [], []
    for ro in rollouts:
        if len(ro) == 0:
            continue
        acc = np.array([np.clip(a[0], -ACCEL_LIMIT, ACCEL_LIMIT) for a in ro.actions])
        if len(acc) > 1:
            jerks.extend(np.diff(acc) / dt)
        ttc, dmin = ttc_and_mindist(ro)
        ttcs.extend(ttc[ttc < TTC_CAP])
        dmins.extend(dmin[np.isfinite(dmin)])
    n = max(len(rollouts), 1)
    return {
        "episodes": len(rollouts),
        "collision_rate": sum(ro.collision for ro in rollouts) / n,
        "offroad_rate": sum(ro.offroad for ro in rollouts) / n,
        "success_rate": sum(ro.success for ro in rollouts) / n,
        "mean_reward": float(np.mean([ro.total_reward for ro in rollouts])) if rollouts else 0.0,
        "jerk_rms": float(np.sqrt(np.mean(np.square(jerks)))) if jerks else 0.0,
        "ttc_p5": float(np.percentile(ttcs, 5)) if ttcs else TTC_INF,
        "ttc_mean": float(np.mean(ttcs)) if ttcs else TTC_INF,
        "min_dist_mean": float(np.mean(dmins)) if dmins else TTC_INF,
    }


def summary_csv(rows: list[dict], fields=SUMMARY_FIELDS) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(fields), extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def rollout_records(rollouts: list[EpisodeRollout]):
    for e, ro in enumerate(rollouts):
        for k in range(len(ro)):
            st, a, comp = ro.states[k], ro.actions[k], ro.components[k]
            yield {"env": e, "step": k, "t": round(k * SIM_DT, 10), "x": st.x, "y": st.y, "theta": st.theta,
                   "v": st.v, "accel": float(a[0]), "steer": float(a[1]), "reward": ro.rewards[k],
                   "safety": comp["safety"], "comfort": comp["comfort"], "efficiency": comp["efficiency"],
                   "collision": comp["collision"], "offroad": comp["offroad"], "done": ro.dones[k]}


def dump_rollouts(rollouts: list[EpisodeRollout], path: str | Path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as fh:
        for rec in rollout_records(rollouts):
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
    tmp.replace(path)


# ---------------------------------------------------------------------------
# near-collision suite

def near_collision_suite(seed: int, count: int, cfg: GeneratorConfig | None = None) -> ScenarioSet:
    """Scenarios in which the lead vehicle in the ego lane brakes hard shortly
    after the last observation; the recorded ego brakes in time."""
    from .scene import _Track, _assemble, _times

    cfg = cfg or GeneratorConfig(pos_noise=0.0)
    rng = np.random.default_rng(seed)
    W = cfg.lane_width
    lanes = [(k - (cfg.num_lanes - 1) / 2) * W for k in range(cfg.num_lanes)]
    ego_lane = lanes[len(lanes) // 2]
    t = _times()
    out = []
    for _ in range(count):
        v = rng.uniform(18.0, 24.0)
        gap = rng.uniform(14.0, 22.0)
        brake_at = rng.uniform(0.2, 0.8)
        decel = rng.uniform(3.5, 4.5)
        ego = _Track(0.0, ego_lane, v, 0.0, 0, brake_at=brake_at + 0.3, brake=4.8)
        lead = _Track(gap, ego_lane, v, 0.0, 0, brake_at=brake_at, brake=decel)
        tracks = [ego, lead]
        if rng.random() < 0.5:
            side = lanes[0] if rng.random() < 0.5 else lanes[-1]
            tracks.append(_Track(rng.uniform(-30.0, -20.0), side, v + rng.uniform(-1, 1), 0.0, 0))
        samples = [tr.sample(t) for tr in tracks]
        out.append(_assemble(rng, samples, tracks, 0, "lane-keep", cfg, lanes, ego_lane, ego_lane))
    return ScenarioSet(tuple(out), seed)

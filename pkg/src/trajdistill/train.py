"""End-to-end training: teacher pretraining, curriculum distillation with EWC,
adapter-only PPO refinement and forecast evaluation."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import checkpoint
from .autodiff import Tensor
from .curriculum import (ComplexityStats, CurriculumConfig, CurriculumState, EwcState, advance,
                         complexity, ewc_penalty, fisher_diagonal)
from .distill import DistillConfig, LossWeights, align_teacher_latents, loss_att, loss_low, loss_sem, schedule_weights
from .errors import ConfigError, TrainingDivergence
from .losses import MISS_THRESHOLD, forecast_errors, output_kd_loss, summarize_errors, task_loss
from .nn import ADAPTER, BODY, AdamW, clip_grad_norm, cosine_lr
from .rl import Critic, PpoConfig, evaluate_policy, ppo_train
from .scene import Batch, ScenarioSet, generate_synthetic, tensorize
from .simulator import near_collision_suite
from .student import Student, StudentConfig
from .teacher import Teacher, TeacherConfig

DISTILL_MODES = ("full", "output", "task")
DISTILL_LABELS = (BODY, ADAPTER)


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    profile: str = "mixed"
    train_count: int = 192
    val_count: int = 64
    suite_count: int = 32
    n_max: int = 8
    batch_size: int = 32
    lr_max: float = 3e-4
    lr_min: float = 1e-5
    weight_decay: float = 1e-4
    clip_norm: float = 1.0
    teacher_epochs: int = 10
    distill_epochs: int = 8
    ppo_iterations: int = 5
    distill_mode: str = "full"
    ewc: bool = True
    fisher_samples: int = 64
    critic_hidden: int = 32
    teacher: TeacherConfig = field(default_factory=TeacherConfig)
    student: StudentConfig = field(default_factory=StudentConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    curriculum: CurriculumConfig = field(default_factory=CurriculumConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)

    def __post_init__(self):
        if not (self.lr_max > 0 and self.lr_min > 0):
            raise ConfigError("learning rates must be positive")
        if not self.clip_norm > 0:
            raise ConfigError("gradient clip norm must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.distill_mode not in DISTILL_MODES:
            raise ConfigError(f"distill_mode must be one of {DISTILL_MODES}")


# ---------------------------------------------------------------------------
# data

@dataclass
class DataBundle:
    train: ScenarioSet
    val: ScenarioSet
    train_batch: Batch
    val_batch: Batch
    stats: ComplexityStats
    train_complexity: np.ndarray
    val_complexity: np.ndarray


def make_data(cfg: TrainConfig, train: ScenarioSet | None = None, val: ScenarioSet | None = None) -> DataBundle:
    if train is None:
        train = generate_synthetic(cfg.seed, cfg.train_count, cfg.profile)
    if val is None:
        val = generate_synthetic(cfg.seed + 10_000, cfg.val_count, cfg.profile)
    stats = ComplexityStats.fit(train)
    return DataBundle(train, val, tensorize(train, cfg.n_max), tensorize(val, cfg.n_max), stats,
                      np.array([complexity(s, stats) for s in train]),
                      np.array([complexity(s, stats) for s in val]))


def minibatches(n: int, size: int, rng: np.random.Generator | None):
    order = np.arange(n) if rng is None else rng.permutation(n)
    for s in range(0, n, size):
        yield order[s:s + size]


def _check_finite(value: float, what: str, step: int) -> None:
    if not math.isfinite(value):
        raise TrainingDivergence(f"{what} became {value} at step {step}")


# ---------------------------------------------------------------------------
# teacher

def teacher_loss(out: dict, batch: Batch, balance_coef: float) -> tuple[Tensor, dict]:
    parts = task_loss(out, batch, agents="all")
    loss = parts["total"] + balance_coef * out["balance"]
    return loss, {"reg": parts["reg"].item(), "cls": parts["cls"].item(), "balance": out["balance"].item()}


def eval_loss(model, batch: Batch, size: int = 64, agents: str = "all", idx=None) -> float:
    """Mean task loss (regression + mode cross-entropy) weighted by minibatch size."""
    idx = np.arange(batch.size) if idx is None else np.asarray(idx)
    total, count = 0.0, 0
    for s in range(0, len(idx), size):
        b = batch.take(idx[s:s + size])
        out = model(b) if isinstance(model, Teacher) else model(b, internals=False)
        parts = task_loss(out, b, agents=agents, action_weight=0.0)
        total += (parts["reg"].item() + parts["cls"].item()) * b.size
        count += b.size
    return total / max(count, 1)


def train_teacher(teacher: Teacher, data: DataBundle, cfg: TrainConfig, log=None) -> list[dict]:
    rng = np.random.default_rng(cfg.seed + 1)
    params = [p for p in teacher.parameters() if p.requires_grad]
    opt = AdamW(params, lr=cfg.lr_max, weight_decay=cfg.weight_decay)
    n = data.train_batch.size
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total = cfg.teacher_epochs * steps_per_epoch
    step = 0
    rows = []
    for epoch in range(cfg.teacher_epochs):
        acc = {"loss": 0.0, "reg": 0.0, "cls": 0.0, "balance": 0.0}
        for idx in minibatches(n, cfg.batch_size, rng):
            b = data.train_batch.take(idx)
            with ad.Tape() as tape:
                out = teacher(b)
                loss, comps = teacher_loss(out, b, cfg.teacher.moe.balance_coef)
            _check_finite(loss.item(), "teacher loss", step)
            grads = ad.backward(tape, loss)
            clip_grad_norm(grads, params, cfg.clip_norm)
            opt.step(grads, lr=cosine_lr(step, total, cfg.lr_max, cfg.lr_min))
            step += 1
            acc["loss"] += loss.item() * len(idx)
            for k, v in comps.items():
                acc[k] += v * len(idx)
        row = {"epoch": epoch, "step": step, **{k: v / n for k, v in acc.items()},
               "val_loss": eval_loss(teacher, data.val_batch)}
        rows.append(row)
        if log is not None:
            log(row)
    teacher.freeze()
    return rows


def teacher_targets(teacher: Teacher, batch: Batch, size: int = 64) -> dict:
    """Frozen teacher outputs for every sample, computed once without a tape."""
    chunks: dict[str, list] = {}
    for s in range(0, batch.size, size):
        out = teacher(batch.take(np.arange(s, min(s + size, batch.size))))
        for k in ("traj", "probs", "latent", "f_low", "attention"):
            v = out[k]
            chunks.setdefault(k, []).append(v.data if isinstance(v, Tensor) else np.asarray(v))
    return {k: np.concatenate(v) for k, v in chunks.items()}


# ---------------------------------------------------------------------------
# distillation

def total_loss(parts: dict, w: LossWeights) -> tuple[Tensor, dict]:
    """alpha*task + xi*low + zeta*att + eta*sem + beta*ppo + psi*ewc over the parts present.

    ``ppo`` is the already-negated clipped objective, so adding it with a
    positive weight improves expected reward as the total decreases."""
    coef = {"task": w.alpha, "low": w.xi, "att": w.zeta, "sem": w.eta, "ppo": w.beta, "ewc": w.psi,
            "kd": w.xi}
    total = Tensor(0.0)
    logged = {}
    for name, term in parts.items():
        c = coef[name]
        total = total + term * c
        logged[name] = c * term.item()
    logged["total"] = total.item()
    return total, logged


def distill_parts(student: Student, b: Batch, tgt: dict, mode: str, cfg: DistillConfig) -> dict:
    out = student(b, internals=(mode == "full"))
    parts = {"task": task_loss(out, b, agents="all")["total"]}
    if mode in ("full", "output"):
        t_out = {"traj": Tensor(tgt["traj"]), "probs": Tensor(tgt["probs"])}
        parts["kd"] = output_kd_loss(out, t_out, b)
    if mode == "full":
        # multi-granular terms stack on top of output distillation
        parts["low"] = loss_low(tgt["f_low"], out["f_low"], mask=b.mask)
        parts["att"] = loss_att(tgt["attention"], out["attention"])
        # ego latents: groups are scenarios, candidates are modes; each student
        # mode is paired with the teacher mode whose trajectory it is closest to
        z_T = align_teacher_latents(tgt["latent"][:, 0], out["traj"].data[:, 0], tgt["traj"][:, 0])
        parts["sem"] = loss_sem(z_T, out["sem_latent"][:, 0], cfg.negatives, cfg.tau)
    return parts


def ego_accuracy(student: Student, batch: Batch, idx, size: int = 64) -> float:
    """Fraction of scenarios whose ego minFDE is below the miss threshold."""
    idx = np.asarray(idx)
    if len(idx) == 0:
        return 0.0
    hits = 0
    for s in range(0, len(idx), size):
        b = batch.take(idx[s:s + size])
        out = student(b, internals=False)
        err = forecast_errors(out["traj"].data[:, 0], out["probs"].data[:, 0], b.future[:, 0])
        hits += int(np.sum(err["min_fde"] < MISS_THRESHOLD))
    return hits / len(idx)


class Distiller:
    """Owns the student optimiser and the schedule clock across curriculum stages."""

    def __init__(self, student: Student, targets: dict | None, data: DataBundle, cfg: TrainConfig,
                 seed_offset: int = 2):
        self.student, self.targets, self.data, self.cfg = student, targets or {}, data, cfg
        self.named = [(n, p) for n, p in student.named_parameters() if p.label in DISTILL_LABELS]
        self.params = [p for _, p in self.named]
        self.opt = AdamW(self.params, lr=cfg.lr_max, weight_decay=cfg.weight_decay)
        self.rng = np.random.default_rng(cfg.seed + seed_offset)
        steps = math.ceil(data.train_batch.size / cfg.batch_size)
        self.total_steps = max(cfg.distill_epochs * steps, 1)
        self.step = 0
        self.epoch = 0
        self.ewc: EwcState | None = None

    def body_params(self):
        return [(n, p) for n, p in self.named if p.label == BODY]

    def train_epoch(self, idx, mode: str | None = None) -> dict:
        cfg = self.cfg
        mode = mode or cfg.distill_mode
        w = schedule_weights(float(self.epoch), cfg.distill)
        sums: dict[str, float] = {}
        idx = np.asarray(idx)
        for sel in minibatches(len(idx), cfg.batch_size, self.rng):
            rows = idx[sel]
            b = self.data.train_batch.take(rows)
            tgt = {k: v[rows] for k, v in self.targets.items()}
            with ad.Tape() as tape:
                parts = distill_parts(self.student, b, tgt, mode, cfg.distill)
                if self.ewc is not None:
                    parts["ewc"] = ewc_penalty(self.body_params(), self.ewc)
                loss, logged = total_loss(parts, w)
            _check_finite(loss.item(), "distillation loss", self.step)
            grads = ad.backward(tape, loss)
            clip_grad_norm(grads, self.params, cfg.clip_norm)
            lr = cosine_lr(min(self.step, self.total_steps - 1), self.total_steps, cfg.lr_max, cfg.lr_min)
            self.opt.step(grads, lr=lr)
            self.step += 1
            for k, v in logged.items():
                sums[k] = sums.get(k, 0.0) + v * len(rows)
        self.epoch += 1
        return {k: v / max(len(idx), 1) for k, v in sums.items()}

    def snapshot(self, idx) -> EwcState:
        b = self.data.train_batch.take(np.asarray(idx)[: self.cfg.fisher_samples])
        fisher = fisher_diagonal(self.student, b, self.body_params())
        snap = {n: p.data.copy() for n, p in self.body_params()}
        return EwcState(fisher, snap, self.cfg.curriculum.ewc_lambda)


def stage_indices(values: np.ndarray, bound: float, minimum: int = 1, lower: float = -math.inf) -> np.ndarray:
    """Scenarios with lower < complexity <= bound.  When fewer than ``minimum``
    qualify: the ``minimum`` easiest above ``lower``, or the hardest overall."""
    values = np.asarray(values)
    idx = np.flatnonzero((values > lower + 1e-12) & (values <= bound + 1e-12))
    if len(idx) >= minimum:
        return idx
    order = np.argsort(values, kind="stable")
    above = order[values[order] > lower + 1e-12]
    pick = above[:minimum] if len(above) >= minimum else order[-minimum:]
    return np.sort(pick)


def run_algorithm1(student: Student, targets: dict, data: DataBundle, cfg: TrainConfig, log=None,
                   events=None, distiller: Distiller | None = None) -> dict:
    """Curriculum distillation: per stage filter by complexity, train until the
    accuracy threshold (capped at three times the nominal epochs), snapshot
    Fisher information, then advance the bound."""
    cc = cfg.curriculum
    dist = distiller or Distiller(student, targets, data, cfg)
    nominal = max(1, round(cfg.distill_epochs / cc.stages))
    state = CurriculumState(stage=0, bound=cc.initial_bound)
    stages = []
    lower = -math.inf
    for k in range(cc.stages):
        state.stage = k
        tr = stage_indices(data.train_complexity, state.bound, cfg.batch_size, lower)
        va = stage_indices(data.val_complexity, state.bound, 1, lower)
        epochs, acc, reached = 0, 0.0, False
        while epochs < 3 * nominal:
            row = dist.train_epoch(tr)
            epochs += 1
            acc = ego_accuracy(student, data.val_batch, va)
            row.update({"stage": k, "epoch": dist.epoch - 1, "step": dist.step, "bound": state.bound,
                        "train_size": len(tr), "acc": acc,
                        "val_loss": eval_loss(student, data.val_batch, idx=va)})
            if log is not None:
                log(row)
            if epochs >= nominal and acc >= cc.acc_threshold:
                reached = True
                break
        if cfg.ewc:
            dist.ewc = dist.snapshot(tr)
        new_bound = advance(state, acc, cc)
        event = {"stage": k, "bound": state.bound, "next_bound": new_bound, "acc": acc, "epochs": epochs,
                 "reached": reached, "timestamp": dist.step}
        if not reached:
            event["warning"] = f"accuracy {acc:.3f} below {cc.acc_threshold} after {epochs} epochs"
        stages.append(event)
        if events is not None:
            events(event)
        state.history.append(state.bound)
        if cc.slices == "band":
            lower = max(lower, state.bound)
        state.bound = new_bound
    return {"stages": stages, "distiller": dist}


def epochs_to_target(student: Student, targets: dict, data: DataBundle, cfg: TrainConfig, mode: str,
                     target: float, max_epochs: int) -> tuple[int | None, list[float]]:
    """Train on the full set in ``mode``; first epoch (1-based) whose validation loss <= target."""
    dist = Distiller(student, targets, data, cfg)
    curve = []
    idx = np.arange(data.train_batch.size)
    for e in range(max_epochs):
        dist.train_epoch(idx, mode)
        curve.append(eval_loss(student, data.val_batch))
        if curve[-1] <= target:
            return e + 1, curve
    return None, curve


# ---------------------------------------------------------------------------
# evaluation

@dataclass
class MetricsReport:
    rmse: dict
    min_ade: float
    min_fde: float
    miss_rate: float
    maneuver_rmse: dict
    maneuver_count: dict
    parameters: dict
    timing: dict

    def as_row(self) -> dict:
        row = {**self.rmse, "min_ade": self.min_ade, "min_fde": self.min_fde, "miss_rate": self.miss_rate}
        row.update({f"rmse_{k}": v for k, v in self.maneuver_rmse.items()})
        row.update({f"count_{k}": v for k, v in self.maneuver_count.items()})
        row.update({f"params_{k}": v for k, v in self.parameters.items()})
        row.update({f"ms_{k}": v for k, v in self.timing.items()})
        return row

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        row = self.as_row()
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(row), lineterminator="\n")
        w.writeheader()
        w.writerow(row)
        return buf.getvalue()


def evaluate(model, batch: Batch, size: int = 64, timing: dict | None = None) -> MetricsReport:
    """Ego-agent forecast metrics over a held-out batch."""
    trajs, probs = [], []
    for s in range(0, batch.size, size):
        b = batch.take(np.arange(s, min(s + size, batch.size)))
        out = model(b) if isinstance(model, Teacher) else model(b, internals=False)
        trajs.append(out["traj"].data[:, 0])
        probs.append(out["probs"].data[:, 0])
    err = forecast_errors(np.concatenate(trajs), np.concatenate(probs), batch.future[:, 0], batch.dt)
    rep = summarize_errors(err, batch.label, batch.dt)
    rmse = {k: v for k, v in rep.items() if k.startswith("rmse_") and k[5:-1].isdigit()}
    names = ("lane_keep", "left_lc", "right_lc")
    params = {"total": model.num_parameters()}
    if isinstance(model, Student):
        params["deploy"] = model.deploy_parameters()
    return MetricsReport(rmse, rep["min_ade"], rep["min_fde"], rep["miss_rate"],
                         {n: rep[f"rmse_{n}"] for n in names},
                         {n: int(np.sum(batch.label == i)) for i, n in enumerate(names)},
                         params, dict(timing or {}))


# ---------------------------------------------------------------------------
# pipeline

def build_models(cfg: TrainConfig) -> tuple[Teacher, Student, Critic]:
    teacher = Teacher(cfg.teacher, np.random.default_rng(cfg.seed + 100))
    student = Student(cfg.student, np.random.default_rng(cfg.seed + 200))
    critic = Critic(cfg.student.hidden, cfg.critic_hidden, np.random.default_rng(cfg.seed + 300))
    return teacher, student, critic


def rows_csv(rows: list[dict]) -> str:
    fields: list[str] = []
    for r in rows:
        for k in r:
            if k not in fields:
                fields.append(k)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


class RunDir:
    """Fixed file names inside an output directory."""

    def __init__(self, root: str):
        self.root = root

    def path(self, name: str) -> str:
        return os.path.join(self.root, name)

    @property
    def teacher(self) -> str:
        return self.path("teacher.ckpt")

    @property
    def student(self) -> str:
        return self.path("student.ckpt")

    @property
    def policy(self) -> str:
        return self.path("student_ppo.ckpt")

    @property
    def critic(self) -> str:
        return self.path("critic.ckpt")


def _config_meta(cfg: TrainConfig) -> dict:
    return {"seed": cfg.seed, "config": json.loads(json.dumps(asdict(cfg), default=str))}


def phase_teacher(cfg: TrainConfig, run: RunDir, data: DataBundle, log=print) -> Teacher:
    teacher, _, _ = build_models(cfg)
    rows = train_teacher(teacher, data, cfg, log=lambda r: log({"phase": "teacher", **r}))
    checkpoint.save_module(run.teacher, teacher, {"kind": "teacher", **_config_meta(cfg)})
    checkpoint.atomic_write(run.path("teacher_log.csv"), rows_csv(rows))
    return teacher


def load_teacher(cfg: TrainConfig, run: RunDir) -> Teacher:
    teacher, _, _ = build_models(cfg)
    checkpoint.load_module(run.teacher, teacher)
    teacher.freeze()
    return teacher


def phase_distill(cfg: TrainConfig, run: RunDir, data: DataBundle, teacher: Teacher, log=print) -> Student:
    _, student, _ = build_models(cfg)
    targets = teacher_targets(teacher, data.train_batch)
    rows, events = [], []

    def keep(r):
        rows.append(r)
        log({"phase": "distill", **r})

    run_algorithm1(student, targets, data, cfg, log=keep, events=events.append)
    checkpoint.save_module(run.student, student, {"kind": "student", **_config_meta(cfg)})
    checkpoint.atomic_write(run.path("distill_log.csv"), rows_csv(rows))
    checkpoint.atomic_write(run.path("curriculum_events.jsonl"),
                            "".join(json.dumps(e, sort_keys=True) + "\n" for e in events))
    return student


def load_student(cfg: TrainConfig, path: str) -> Student:
    _, student, _ = build_models(cfg)
    checkpoint.load_module(path, student)
    return student


def phase_ppo(cfg: TrainConfig, run: RunDir, student: Student, log=print) -> dict:
    _, _, critic = build_models(cfg)
    suite = near_collision_suite(cfg.seed + 20_000, cfg.suite_count)
    held_out = near_collision_suite(cfg.seed + 30_000, cfg.suite_count)
    pcfg = replace(cfg.ppo, iterations=cfg.ppo_iterations)
    before = evaluate_policy(student, critic, held_out, pcfg.horizon, seed=cfg.seed)
    rows = ppo_train(student, critic, suite, pcfg, seed=cfg.seed + 3,
                     log=lambda r: log({"phase": "ppo", **r}))
    after = evaluate_policy(student, critic, held_out, pcfg.horizon, seed=cfg.seed)
    checkpoint.save_module(run.policy, student, {"kind": "student", **_config_meta(cfg)})
    checkpoint.save_module(run.critic, critic, {"kind": "critic", **_config_meta(cfg)})
    checkpoint.atomic_write(run.path("ppo_log.csv"), rows_csv(rows))
    return {"before": before, "after": after}


def run_pipeline(cfg: TrainConfig, out: str, phase: str = "all", log=print) -> dict:
    """Run ``phase`` in {teacher, distill, ppo, all}; an existing teacher
    checkpoint lets ``all`` skip pretraining."""
    run = RunDir(out)
    os.makedirs(out, exist_ok=True)
    summary: dict = {"phase": phase, "seed": cfg.seed}
    need_data = phase in ("teacher", "distill", "all")
    data = make_data(cfg) if need_data else None
    if phase in ("teacher", "all"):
        if phase == "all" and os.path.exists(run.teacher):
            summary["teacher"] = "reused"
        else:
            phase_teacher(cfg, run, data, log)
            summary["teacher"] = "trained"
    if phase in ("distill", "all"):
        if not os.path.exists(run.teacher):
            raise FileNotFoundError(f"teacher checkpoint missing: {run.teacher}")
        # always distill from the stored (float32) weights so resumed and fresh runs agree
        teacher = load_teacher(cfg, run)
        student = phase_distill(cfg, run, data, teacher, log)
        summary["teacher_metrics"] = evaluate(teacher, data.val_batch).as_row()
        summary["student_metrics"] = evaluate(load_student(cfg, run.student), data.val_batch).as_row()
    if phase in ("ppo", "all"):
        if not os.path.exists(run.student):
            raise FileNotFoundError(f"student checkpoint missing: {run.student}")
        student = load_student(cfg, run.student)
        summary["ppo"] = phase_ppo(cfg, run, student, log)
    checkpoint.atomic_write(run.path(f"summary_{phase}.json"), json.dumps(summary, indent=2, sort_keys=True))
    return summary

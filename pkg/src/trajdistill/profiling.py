"""Wall-clock scaling probes: scan vs dense attention over history length,
student forward time vs agent count, and a per-module latency breakdown."""

from __future__ import annotations

import csv
import io
import math
import time

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .hybrid import selective_scan
from .moe import decode, moe_forward, topk_gate
from .scene import FEAT_DIM, T_F, T_H, Batch
from .student import Student, StudentConfig
from .teacher import Teacher, TeacherConfig

SCAN_LENGTHS = (32, 64, 128, 256)
AGENT_COUNTS = (5, 10, 15, 20, 30)
MODULE_ROWS = ("GATv2 encoder", "Hybrid scan/window-attention block", "GRU-SE encoder",
               "MoE decoder / LoRA head", "Output projection & head", "Total")


def median_time(fn, repeats: int = 5, warmup: int = 1) -> float:
    """Median wall-clock seconds over ``repeats`` calls after ``warmup`` calls."""
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def dense_attention(x: np.ndarray, wq: np.ndarray, wk: np.ndarray, wv: np.ndarray) -> np.ndarray:
    """Full softmax self-attention over all L tokens of x (L, d): the quadratic reference."""
    q, k, v = x @ wq, x @ wk, x @ wv
    s = (q @ k.T) / math.sqrt(q.shape[-1])
    s -= s.max(axis=-1, keepdims=True)
    p = np.exp(s)
    p /= p.sum(axis=-1, keepdims=True)
    return p @ v


def scan_vs_attention(lengths=SCAN_LENGTHS, agents: int = 8, d: int = 64, d_state: int = 16,
                      repeats: int = 5, seed: int = 0) -> list[dict]:
    """Per history length T: selective scan over (agents, T, d) vs dense attention over T*agents tokens."""
    rng = np.random.default_rng(seed)
    A = -np.exp(rng.normal(0.0, 0.5, size=(d, d_state)))
    D = rng.normal(size=d)
    wq, wk, wv = (rng.normal(0.0, d ** -0.5, size=(d, d)) for _ in range(3))
    rows = []
    for T in lengths:
        x = rng.normal(size=(agents, T, d))
        delta = rng.uniform(0.05, 0.2, size=(agents, T, d))
        B = rng.normal(size=(agents, T, d_state))
        C = rng.normal(size=(agents, T, d_state))
        tokens = x.reshape(agents * T, d)
        scan_s = median_time(lambda: selective_scan(x, delta, A, B, C, D), repeats)
        attn_s = median_time(lambda: dense_attention(tokens, wq, wk, wv), repeats)
        rows.append({"T": T, "tokens": agents * T, "scan_ms": 1e3 * scan_s, "attn_ms": 1e3 * attn_s})
    return rows


def synthetic_batch(agents: int, batch: int = 1, seed: int = 0, t_h: int = T_H) -> Batch:
    """Random fully observed scene with ``agents`` slots (timing only)."""
    rng = np.random.default_rng(seed)
    pos = rng.normal(0.0, 20.0, size=(batch, t_h, agents, 2))
    return Batch(rng.normal(size=(batch, t_h, agents, FEAT_DIM)), np.ones((batch, t_h, agents), dtype=bool),
                 pos, rng.normal(size=(batch, agents, 2)), np.zeros((batch, agents, T_F, 2)),
                 np.ones((batch, agents), dtype=bool), np.zeros(batch, dtype=np.int64), np.zeros((batch, 2)),
                 np.tile(np.arange(agents), (batch, 1)))


def agents_scaling(counts=AGENT_COUNTS, batch: int = 8, repeats: int = 5, seed: int = 0,
                   student: Student | None = None) -> list[dict]:
    """Student inference time and matmul flops per agent count."""
    student = student or Student(StudentConfig(), np.random.default_rng(seed))
    rows = []
    for n in counts:
        b = synthetic_batch(n, batch, seed)
        with ad.count_flops() as fc:
            student(b, internals=False)
        sec = median_time(lambda: student(b, internals=False), repeats)
        rows.append({"N": n, "ms": 1e3 * sec, "flops": fc.matmul})
    return rows


def linear_fit_r2(x, y) -> tuple[float, float, float]:
    """Least-squares line y = a x + b; returns (a, b, R^2)."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    a, b = np.polyfit(x, y, 1)
    resid = y - (a * x + b)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return float(a), float(b), r2


def module_latency(agents: int = 20, repeats: int = 5, seed: int = 0) -> list[dict]:
    """Per-module inference time (batch 1) for teacher and student; absent modules are blank."""
    teacher = Teacher(TeacherConfig(), np.random.default_rng(seed))
    student = Student(StudentConfig(), np.random.default_rng(seed + 1))
    b = synthetic_batch(agents, 1, seed)
    B, T, N = b.mask.shape
    pos, vel = b.pos[:, -1].reshape(N, 2), b.vel.reshape(N, 2)

    f_low = teacher.encoder.encode_batch(b)
    z, _ = teacher.hybrid(f_low, b.mask, b.order)
    tok = z[:, -1]
    if teacher.cfg.raw_features:
        tok = ad.concat([tok, Tensor(b.feats[:, -1])], axis=-1)
    tok = tok.reshape(N, tok.shape[-1])
    dec = teacher.decoder

    def moe_part():
        w, sel = topk_gate(tok, dec.gate, dec.cfg.top_k, dec.cfg.renormalize)
        return tok + moe_forward(tok, dec.experts, w, sel)

    u = moe_part()
    t = {
        "GATv2 encoder": (median_time(lambda: teacher.encoder.encode_batch(b), repeats),
                          median_time(lambda: student.encoder.encode_batch(b), repeats)),
        "Hybrid scan/window-attention block": (median_time(lambda: teacher.hybrid(f_low, b.mask, b.order), repeats),
                                               None),
    }
    U, _, _ = student.body(b)
    h = U[:, :, -1].reshape(N, student.cfg.hidden)
    enc_s = median_time(lambda: student.encoder.encode_batch(b), repeats)
    body_s = median_time(lambda: student.body(b), repeats)
    t["GRU-SE encoder"] = (None, max(body_s - enc_s, 0.0))
    t["MoE decoder / LoRA head"] = (median_time(moe_part, repeats),
                                    median_time(lambda: student.policy(U[:, 0, -1]), repeats))
    t["Output projection & head"] = (median_time(lambda: decode(u, dec.head, pos, vel), repeats),
                                     median_time(lambda: student.head(h, pos, vel), repeats))
    t["Total"] = (median_time(lambda: teacher(b), repeats),
                  median_time(lambda: student(b, internals=False), repeats))
    return [{"module": name, "teacher_ms": None if t[name][0] is None else 1e3 * t[name][0],
             "student_ms": None if t[name][1] is None else 1e3 * t[name][1]} for name in MODULE_ROWS]


SWEEPS = {"scan-vs-attn": scan_vs_attention, "agents-scaling": agents_scaling, "module-latency": module_latency}


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if v is None else (f"{v:.6g}" if isinstance(v, float) else v)) for k, v in r.items()})
    return buf.getvalue()

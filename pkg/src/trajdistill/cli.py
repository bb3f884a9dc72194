"""Command-line entry point: generate, train, eval, profile, dump.

Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error.
The BLAS/OpenMP thread count comes from TRAJDISTILL_THREADS (default 1).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

THREADS_ENV = "TRAJDISTILL_THREADS"
EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


class UsageError(Exception):
    pass


def _thread_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise UsageError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from exc
    if n < 1:
        raise UsageError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


def _emit(row: dict) -> None:
    print(json.dumps(row, sort_keys=True, default=float), file=sys.stderr)


def cmd_generate(args) -> int:
    from .scene import generate_synthetic, save_scenarios
    from .simulator import near_collision_suite
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    if args.profile == "near-collision":
        ss = near_collision_suite(args.seed, args.count)
    else:
        ss = generate_synthetic(args.seed, args.count, args.profile)
    save_scenarios(ss, args.out)
    print(f"wrote {len(ss)} scenarios to {args.out}")
    return EXIT_OK


def _load_cfg(args):
    from .config import load_config
    overrides = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    return load_config(args.config, overrides)


def cmd_train(args) -> int:
    from .train import RunDir, run_pipeline
    cfg = _load_cfg(args)
    run = RunDir(args.out)
    if args.phase == "distill" and not os.path.exists(run.teacher):
        raise UsageError(f"--phase distill needs a teacher checkpoint at {run.teacher}")
    if args.phase == "ppo" and not os.path.exists(run.student):
        raise UsageError(f"--phase ppo needs a student checkpoint at {run.student}")
    summary = run_pipeline(cfg, args.out, args.phase, log=_emit if args.verbose else (lambda r: None))
    print(json.dumps({k: v for k, v in summary.items() if k in ("phase", "seed", "teacher")}, sort_keys=True))
    return EXIT_OK


def _model_from_checkpoint(path: str):
    from . import checkpoint
    from .config import from_dict
    from .train import TrainConfig, build_models
    tensors, meta = checkpoint.load(path)
    if "config" not in meta or meta.get("kind") not in ("teacher", "student"):
        raise UsageError(f"{path} is not a teacher or student checkpoint")
    cfg = from_dict(TrainConfig, meta["config"])
    teacher, student, _ = build_models(cfg)
    model = teacher if meta["kind"] == "teacher" else student
    model.load_state_dict(tensors)
    return model, cfg


def cmd_eval(args) -> int:
    from .checkpoint import atomic_write
    from .scene import load_scenarios, tensorize
    from .train import evaluate
    model, cfg = _model_from_checkpoint(args.model)
    data = load_scenarios(args.data)
    report = evaluate(model, tensorize(data, cfg.n_max))
    base = args.report[:-5] if args.report.endswith(".json") else args.report
    atomic_write(base + ".json", report.to_json())
    atomic_write(base + ".csv", report.to_csv())
    print(json.dumps(report.as_row(), sort_keys=True))
    return EXIT_OK


def cmd_profile(args) -> int:
    from .checkpoint import atomic_write
    from .profiling import SWEEPS, rows_to_csv
    rows = SWEEPS[args.what](repeats=args.repeats)
    text = rows_to_csv(rows)
    if args.out:
        atomic_write(args.out, text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_dump(args) -> int:
    """Plot-ready data: rollouts on the near-collision suite or per-step forecasts."""
    from .checkpoint import atomic_write
    from .rl import Critic, StudentPolicy
    from .scene import load_scenarios, tensorize
    from .simulator import dump_rollouts, near_collision_suite, run_batch, summarize, summary_csv
    from .student import Student
    model, cfg = _model_from_checkpoint(args.model)
    if args.what == "rollouts":
        if not isinstance(model, Student):
            raise UsageError("rollouts need a student checkpoint")
        suite = load_scenarios(args.data) if args.data else near_collision_suite(cfg.seed + 20_000, cfg.suite_count)
        critic = Critic(cfg.student.hidden, cfg.critic_hidden, np.random.default_rng(cfg.seed + 300))
        ros = run_batch(StudentPolicy(model, critic, deterministic=True), list(suite), cfg.ppo.horizon, seed=cfg.seed)
        dump_rollouts(ros, args.out)
        atomic_write(args.out + ".summary.csv", summary_csv([summarize(ros)]))
    else:
        if not args.data:
            raise UsageError("--what forecasts needs --data")
        batch = tensorize(load_scenarios(args.data), cfg.n_max)
        out = model(batch) if not isinstance(model, Student) else model(batch, internals=False)
        traj, probs = out["traj"].data[:, 0], out["probs"].data[:, 0]
        lines = ["scenario,mode,prob,step,x,y,gt_x,gt_y"]
        for s in range(batch.size):
            for k in range(traj.shape[1]):
                for t in range(traj.shape[2]):
                    lines.append(f"{s},{k},{probs[s, k]:.6g},{t + 1},{traj[s, k, t, 0]:.6g},{traj[s, k, t, 1]:.6g},"
                                 f"{batch.future[s, 0, t, 0]:.6g},{batch.future[s, 0, t, 1]:.6g}")
        atomic_write(args.out, "\n".join(lines) + "\n")
    print(f"wrote {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    from .scene import PROFILES
    p = argparse.ArgumentParser(prog="trajdistill", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write synthetic scenarios as JSONL")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--count", type=int, default=100)
    g.add_argument("--profile", default="mixed", help=f"one of {', '.join(PROFILES + ('near-collision',))}")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="run training phases")
    t.add_argument("--phase", choices=("teacher", "distill", "ppo", "all"), default="all")
    t.add_argument("--config", default=None, help="YAML config file")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config value (repeatable)")
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--out", required=True, help="output directory for checkpoints and logs")
    t.add_argument("--verbose", action="store_true", help="stream per-epoch rows to stderr")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="forecast metrics of a checkpoint on a scenario file")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--report", required=True, help="report path stem; writes .json and .csv")
    e.set_defaults(func=cmd_eval)

    pr = sub.add_parser("profile", help="timing sweeps as CSV")
    pr.add_argument("--what", choices=("scan-vs-attn", "agents-scaling", "module-latency"), required=True)
    pr.add_argument("--repeats", type=int, default=5)
    pr.add_argument("--out", default=None)
    pr.set_defaults(func=cmd_profile)

    d = sub.add_parser("dump", help="plot-ready rollouts or forecasts")
    d.add_argument("--what", choices=("rollouts", "forecasts"), required=True)
    d.add_argument("--model", required=True)
    d.add_argument("--data", default=None)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_dump)
    return p


def main(argv=None) -> int:
    from .errors import ConfigError, ParseError, TrainingDivergence, ValidationError
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        n = _thread_count()
        from threadpoolctl import threadpool_limits
        with threadpool_limits(limits=n):
            return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ParseError, ValidationError, TrainingDivergence, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

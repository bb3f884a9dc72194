import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# a tiny end-to-end configuration: seconds per full pipeline run
SMALL_OVERRIDES = (
    "train_count=24", "val_count=8", "suite_count=2", "batch_size=8", "teacher_epochs=3", "distill_epochs=2",
    "ppo_iterations=1", "fisher_samples=4", "teacher.graph.d_model=16", "teacher.graph.gat_heads=2",
    "teacher.hybrid.d_model=16", "teacher.hybrid.d_inner=16", "teacher.hybrid.d_state=4",
    "teacher.hybrid.attn_heads=2", "teacher.moe.hidden=16", "student.teacher_width=16",
    "curriculum.stages=2", "ppo.envs=2", "ppo.horizon=10", "ppo.minibatch=8", "ppo.epochs=1",
)


@pytest.fixture
def small_overrides():
    return list(SMALL_OVERRIDES)


@pytest.fixture
def small_cfg():
    from trajdistill.config import load_config
    return load_config(None, list(SMALL_OVERRIDES))


# acceptance outcomes, filled by test_acceptance.py and printed after the run
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[name]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {name}: {detail}")

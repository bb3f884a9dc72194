import numpy as np
import pytest

from trajdistill.profiling import (AGENT_COUNTS, MODULE_ROWS, SCAN_LENGTHS, agents_scaling, dense_attention,
                                   linear_fit_r2, module_latency, rows_to_csv, scan_vs_attention)


def test_linear_fit_exact_line():
    a, b, r2 = linear_fit_r2([1, 2, 3, 4], [3, 5, 7, 9])
    assert (a, b, r2) == pytest.approx((2.0, 1.0, 1.0))


def test_linear_fit_r2_known_value():
    # y = [0, 1, 0, 1] against x = 0..3: slope 0.2, R^2 = 0.2
    a, b, r2 = linear_fit_r2([0, 1, 2, 3], [0, 1, 0, 1])
    assert a == pytest.approx(0.2) and b == pytest.approx(0.2) and r2 == pytest.approx(0.2)


def test_dense_attention_rows_average_values(rng):
    x = rng.normal(size=(5, 4))
    out = dense_attention(x, np.zeros((4, 4)), np.zeros((4, 4)), np.eye(4))
    np.testing.assert_allclose(out, np.tile(x.mean(0), (5, 1)), atol=1e-12)


def test_scan_vs_attention_rows():
    rows = scan_vs_attention(repeats=1)
    assert [r["T"] for r in rows] == list(SCAN_LENGTHS)
    assert all(r["scan_ms"] > 0 and r["attn_ms"] > 0 for r in rows)
    assert len(rows_to_csv(rows).splitlines()) == 1 + len(SCAN_LENGTHS)


def test_agents_scaling_flops_grow():
    rows = agents_scaling(counts=AGENT_COUNTS[:3], batch=1, repeats=1)
    flops = [r["flops"] for r in rows]
    assert flops[0] < flops[1] < flops[2]


def test_module_latency_table():
    rows = module_latency(agents=5, repeats=1)
    assert [r["module"] for r in rows] == list(MODULE_ROWS)
    text = rows_to_csv(rows)
    assert text.splitlines()[0] == "module,teacher_ms,student_ms"
    total = rows[-1]
    assert total["teacher_ms"] > total["student_ms"] > 0

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajdistill import autodiff as ad
from trajdistill.errors import ConfigError, DomainError
from trajdistill.hybrid import (HybridBlock, HybridConfig, SelectiveSSM, WindowAttention, attention_map,
                                gated_fusion, selective_scan, selective_scan_reference, window_attention,
                                zoh_discretize)


def test_zoh_closed_form():
    a_bar, b_bar = zoh_discretize(-1.0, 1.0, 0.1)
    assert a_bar == pytest.approx(0.904837, abs=1e-6)
    assert b_bar == pytest.approx(0.095163, abs=1e-6)


@pytest.mark.parametrize("a", [-3.0, -0.5, 0.0, 1e-10, 2.0])
def test_zoh_small_step_limit(a):
    a_bar, b_bar = zoh_discretize(a, 1.0, 1e-9)
    assert a_bar == pytest.approx(1.0, abs=1e-8)
    assert b_bar == pytest.approx(0.0, abs=1e-8)


@given(st.floats(0.01, 2.0), st.floats(-5, 5))
def test_zoh_zero_a_is_delta_b(delta, b):
    _, b_bar = zoh_discretize(0.0, b, delta)
    assert b_bar == pytest.approx(delta * b, rel=1e-12, abs=1e-15)


@pytest.mark.parametrize("delta", [0.0, -0.1])
def test_zoh_rejects_nonpositive_step(delta):
    with pytest.raises(DomainError):
        zoh_discretize(-1.0, 1.0, delta)


def _scan_inputs(rng, T=8, Dc=3, S=4, lead=()):
    x = rng.normal(size=lead + (T, Dc))
    delta = rng.uniform(0.05, 0.5, size=lead + (T, Dc))
    A = -rng.uniform(0.1, 2.0, size=(Dc, S))
    B = rng.normal(size=lead + (T, S))
    C = rng.normal(size=lead + (T, S))
    D = rng.normal(size=Dc)
    return x, delta, A, B, C, D


def test_scan_zero_input_gives_zero(rng):
    x, delta, A, B, C, D = _scan_inputs(rng)
    assert (selective_scan(np.zeros_like(x), delta, A, B, C, D).data == 0).all()


def test_scan_skip_path_only(rng):
    x, delta, A, B, C, D = _scan_inputs(rng)
    y = selective_scan(x, delta, A, B, np.zeros_like(C), np.ones_like(D)).data
    np.testing.assert_array_equal(y, x)


@pytest.mark.parametrize("seed", range(10))
def test_scan_matches_unrolled_sum(seed):
    rng = np.random.default_rng(seed)
    x, delta, A, B, C, D = _scan_inputs(rng)
    np.testing.assert_allclose(selective_scan(x, delta, A, B, C, D).data,
                               selective_scan_reference(x, delta, A, B, C, D), rtol=0, atol=1e-10)


def test_scan_scalar_closed_form(rng):
    # one channel, one state, constant step: y_t = sum_s a^(t-s) b x_s + D x_t
    T = 8
    x = rng.normal(size=(T, 1))
    delta = np.full((T, 1), 0.1)
    A = np.array([[-1.0]])
    B, C = np.ones((T, 1)), np.ones((T, 1))
    D = np.array([0.5])
    a, b = zoh_discretize(-1.0, 1.0, 0.1)
    want = [sum(a ** (t - s) * b * x[s, 0] for s in range(t + 1)) + 0.5 * x[t, 0] for t in range(T)]
    np.testing.assert_allclose(selective_scan(x, delta, A, B, C, D).data[:, 0], want, atol=1e-12)


def test_scan_batched_equals_per_sequence(rng):
    x, delta, A, B, C, D = _scan_inputs(rng, lead=(2, 3))
    y = selective_scan(x, delta, A, B, C, D).data
    for i in range(2):
        for j in range(3):
            np.testing.assert_allclose(y[i, j], selective_scan_reference(x[i, j], delta[i, j], A, B[i, j],
                                                                         C[i, j], D), atol=1e-10)


def test_scan_gradcheck(rng):
    args = _scan_inputs(rng, T=5, Dc=2, S=3, lead=(2,))
    errs = ad.gradcheck(lambda *a: (selective_scan(*a) ** 2).sum(), args, eps=1e-6)
    assert max(errs) < 1e-4


def test_ssm_block_is_causal(rng):
    blk = SelectiveSSM(HybridConfig(d_model=8, d_inner=8, d_state=4), rng)
    x = rng.normal(size=(2, 10, 8))
    y = blk(x).data
    x2 = x.copy()
    x2[:, 6] += 5.0
    np.testing.assert_array_equal(blk(x2).data[:, :6], y[:, :6])


def _layer(rng, d=8, M=4):
    return WindowAttention(d, 2, M, rng)


@pytest.mark.parametrize("shifted", [False, True])
def test_window_attention_rows_sum_to_one(shifted, rng):
    layer = _layer(rng)
    x = rng.normal(size=(12, 8))
    valid = np.ones(12, dtype=bool)
    valid[[5, 9]] = False
    _, attn = layer(x, valid, shifted, return_attention=True)
    rows = attn.data.sum(axis=-1)
    np.testing.assert_allclose(rows[rows > 0], 1.0, atol=1e-6)


def test_unshifted_windows_are_local(rng):
    layer = _layer(rng)
    x = rng.normal(size=(12, 8))
    y = window_attention(x, layer, shifted=False).data
    x2 = x.copy()
    x2[5] += 3.0
    y2 = window_attention(x2, layer, shifted=False).data
    np.testing.assert_array_equal(y[[0, 1, 2, 3, 8, 9, 10, 11]], y2[[0, 1, 2, 3, 8, 9, 10, 11]])
    assert not np.allclose(y[4:8], y2[4:8])


def test_shifted_pair_reach(rng):
    M = 4
    l1, l2 = _layer(rng, M=M), _layer(rng, M=M)

    def run(x):
        s = x + window_attention(x, l1, shifted=False).data
        return s + window_attention(s, l2, shifted=True).data

    x = rng.normal(size=(16, 8))
    x2 = x.copy()
    x2[0] += 3.0
    changed = np.flatnonzero(np.abs(run(x2) - run(x)).max(axis=-1) > 0)
    assert changed.max() == int(1.5 * M) - 1
    np.testing.assert_array_equal(changed, np.arange(int(1.5 * M)))


def test_window_attention_pads_to_multiple(rng):
    layer = _layer(rng)
    y = window_attention(rng.normal(size=(6, 8)), layer, shifted=True).data
    assert y.shape == (6, 8)


def test_attention_map_places_slots(rng):
    attn = rng.uniform(size=(1, 2, 2, 2))  # nW=1, H=2, M=2
    attn /= attn.sum(-1, keepdims=True)
    a = attention_map(attn, np.array([1, 0]), 2)
    avg = attn.mean(axis=1)[0]
    assert a[1, 0] == pytest.approx(avg[0, 1])
    assert a[0, 0] == pytest.approx(avg[1, 1])


def test_gated_fusion_limits(rng):
    y_m, y_s = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    np.testing.assert_allclose(gated_fusion(y_m, y_s, np.zeros((8, 4))).data, 0.5 * (y_m + y_s))
    W = rng.normal(size=(8, 4))
    np.testing.assert_allclose(gated_fusion(y_m, y_m, W).data, y_m, atol=1e-15)
    np.testing.assert_allclose(gated_fusion(y_m, y_s, np.zeros((8, 4)), np.full(4, 50.0)).data, y_m, atol=1e-12)


def test_window_size_must_be_even():
    with pytest.raises(ConfigError):
        HybridConfig(window=3)


def test_block_output_and_map(rng):
    cfg = HybridConfig(d_model=8, d_inner=8, d_state=4, attn_heads=2)
    blk = HybridBlock(cfg, rng)
    B, T, N = 2, 6, 5
    mask = np.ones((B, T, N), dtype=bool)
    mask[:, :, 4] = False
    order = np.tile(np.arange(N), (B, 1))
    z, amap = blk(ad.Tensor(rng.normal(size=(B, T, N, 8))), mask, order)
    assert z.shape == (B, T, N, 8) and amap.shape == (B, T, N, N)
    assert (amap[..., 4] == 0).all()

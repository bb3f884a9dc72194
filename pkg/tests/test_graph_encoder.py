import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from trajdistill import autodiff as ad
from trajdistill.autodiff import Tensor
from trajdistill.errors import ConfigError
from trajdistill.graph_encoder import (GatLayer, GraphConfig, GraphEncoder, build_adjacency, causal_conv, rmsnorm,
                                       scene_adjacency)
from trajdistill.scene import FEAT_DIM, AgentState, Scene


def _pair(d):
    return np.array([[0.0, 0.0], [d, 0.0]])


@pytest.mark.parametrize("d,expected", [(0.0, 1.0), (30.0, math.exp(-4.5)), (49.999, math.exp(-49.999 ** 2 / 200)),
                                        (50.0, 0.0), (80.0, 0.0)])
def test_adjacency_kernel(d, expected):
    adj = build_adjacency(_pair(d), None, GraphConfig())
    assert adj[0, 1] == pytest.approx(expected, rel=1e-12, abs=0.0)
    assert adj[1, 0] == adj[0, 1]


def test_adjacency_thirty_metres_about_one_percent():
    assert build_adjacency(_pair(30.0), None, GraphConfig())[0, 1] == pytest.approx(0.011109, abs=1e-6)


def test_adjacency_masks_padded_agents():
    pos = np.zeros((3, 2))
    adj = build_adjacency(pos, np.array([True, True, False]), GraphConfig())
    assert (adj[2] == 0).all() and (adj[:, 2] == 0).all()
    np.testing.assert_array_equal(np.diag(adj), [1.0, 1.0, 0.0])


def test_scene_adjacency_includes_ego():
    ego = AgentState(0.0, 0.0, 10.0, 0.0)
    sc = Scene(ego, ((3, AgentState(10.0, 0.0, 10.0, 0.0)),))
    adj = scene_adjacency(sc, GraphConfig())
    assert adj.shape == (2, 2)
    assert adj[0, 1] == pytest.approx(math.exp(-0.5))


def test_causal_conv_identity_kernel(rng):
    x = rng.normal(size=(5, 3))
    np.testing.assert_array_equal(causal_conv(x, np.eye(3)[None]).data, x)


def test_causal_conv_hand_example():
    w = np.array([[[0.5]], [[0.5]]])
    np.testing.assert_allclose(causal_conv(np.array([[0.0], [2.0], [4.0]]), w).data.ravel(), [0.0, 1.0, 3.0])


@pytest.mark.parametrize("t", [0, 3, 6])
def test_causal_conv_is_causal(t, rng):
    x = rng.normal(size=(2, 8, 4))
    w = rng.normal(size=(3, 4, 5))
    y = causal_conv(x, w, time_axis=1).data
    x2 = x.copy()
    x2[:, t + 1] += 10.0
    y2 = causal_conv(x2, w, time_axis=1).data
    np.testing.assert_array_equal(y[:, : t + 1], y2[:, : t + 1])
    assert not np.allclose(y[:, t + 1], y2[:, t + 1])


def test_causal_conv_kernel_too_wide():
    with pytest.raises(ConfigError):
        causal_conv(np.zeros((2, 1)), np.zeros((3, 1, 1)))


def test_rmsnorm_examples():
    np.testing.assert_allclose(rmsnorm(np.ones(4), np.ones(4), 1e-12).data, np.ones(4))
    np.testing.assert_allclose(rmsnorm(np.array([3.0, 4.0]), np.ones(2), 0.0).data, [0.848528, 1.131371], atol=1e-6)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (3, 6), elements=st.floats(-50, 50)))
def test_rmsnorm_unit_rms(x):
    y = rmsnorm(x + 1.0, np.ones(6), 1e-12).data
    rms = np.sqrt((y * y).mean(axis=-1))
    ok = np.sqrt(((x + 1.0) ** 2).mean(axis=-1)) > 1e-3
    np.testing.assert_allclose(rms[ok], 1.0, rtol=1e-6)


def _gat(rng, n=5, d=8, heads=2):
    layer = GatLayer(d, d, heads, rng)
    h = Tensor(rng.normal(size=(n, d)))
    return layer, h


def test_gat_attention_normalised_and_masked(rng):
    layer, h = _gat(rng)
    pos = rng.uniform(-20, 20, size=(5, 2))
    mask = np.array([True, True, True, True, False])
    adj = build_adjacency(pos, mask, GraphConfig())
    _, alpha = layer(h, adj, return_attention=True)
    a = alpha.data
    np.testing.assert_allclose(a[:4].sum(axis=1), 1.0, atol=1e-6)
    assert (a[:, 4] == 0).all()


def test_gat_singleton_neighbourhood(rng):
    layer, h = _gat(rng)
    adj = np.eye(5)
    _, alpha = layer(h, adj, return_attention=True)
    np.testing.assert_allclose(np.einsum("iih->ih", alpha.data), 1.0)


def test_encoder_shape_and_ego_isolation(rng):
    cfg = GraphConfig()
    enc = GraphEncoder(cfg, rng)
    B, T, N = 2, 15, 6
    feats = rng.normal(size=(B, T, N, FEAT_DIM))
    pos = rng.uniform(-10, 10, size=(B, T, N, 2))
    mask = np.zeros((B, T, N), dtype=bool)
    mask[..., 0] = True
    out = enc(feats, pos, mask).data
    assert out.shape == (B, T, N, cfg.d_model)
    feats2 = feats.copy()
    feats2[..., 1:, :] = rng.normal(size=feats2[..., 1:, :].shape)
    np.testing.assert_array_equal(enc(feats2, pos, mask).data[..., 0, :], out[..., 0, :])


def test_encoder_gradcheck(rng):
    cfg = GraphConfig(d_model=8, gat_heads=2, d_in=4)
    enc = GraphEncoder(cfg, rng)
    pos = rng.uniform(-10, 10, size=(1, 4, 3, 2))
    mask = np.ones((1, 4, 3), dtype=bool)
    x = rng.normal(size=(1, 4, 3, 4))
    err = ad.gradcheck(lambda f: (enc(f, pos, mask) ** 2).sum(), [x], eps=1e-6)
    assert max(err) < 1e-4


def test_config_head_divisibility():
    with pytest.raises(ConfigError):
        GraphConfig(d_model=10, gat_heads=4)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from trajdistill import autodiff as ad
from trajdistill.autodiff import Tensor
from trajdistill.errors import ConfigError, ContractError
from trajdistill.moe import (Expert, MoeConfig, MoeDecoder, MultimodalHead, decode, load_balance_loss, moe_dense,
                             moe_forward, topk_gate)


def test_topk_gate_closed_form():
    w, sel = topk_gate(np.array([[2.0, 1.0, 0.0, -1.0]]), None, 2)
    np.testing.assert_allclose(w.data[0], [0.643914, 0.236883, 0.0, 0.0], atol=1e-6)
    Z = sum(np.exp([2.0, 1.0, 0.0, -1.0]))
    assert Z == pytest.approx(11.475217, abs=1e-6)
    assert sel[0].tolist() == [True, True, False, False]


def test_topk_gate_full_is_dense_softmax(rng):
    x = rng.normal(size=(5, 4))
    w, sel = topk_gate(x, None, 4)
    assert sel.all()
    np.testing.assert_allclose(w.data.sum(-1), 1.0)


def test_topk_gate_ties_pick_lowest_index():
    w, sel = topk_gate(np.zeros((1, 4)), None, 2)
    assert sel[0].tolist() == [True, True, False, False]
    np.testing.assert_allclose(w.data[0], [0.25, 0.25, 0.0, 0.0])


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (6, 4), elements=st.floats(-10, 10)), st.integers(1, 4))
def test_topk_gate_support_size(x, k):
    w, sel = topk_gate(x, None, k)
    assert (sel.sum(-1) == k).all()
    assert ((w.data > 0).sum(-1) <= k).all()
    assert (w.data[~sel] == 0).all()


def test_topk_renormalized_sums_to_one(rng):
    w, _ = topk_gate(rng.normal(size=(5, 4)), None, 2, renormalize=True)
    np.testing.assert_allclose(w.data.sum(-1), 1.0)


def test_topk_rejects_bad_k():
    with pytest.raises(ConfigError):
        topk_gate(np.zeros((1, 4)), None, 5)
    with pytest.raises(ConfigError):
        MoeConfig(top_k=0)


def _experts(rng, d=6, n=4, hidden=8):
    return [Expert(d, hidden, rng) for _ in range(n)]


@pytest.mark.parametrize("seed", range(5))
def test_sparse_equals_dense_bitwise(seed):
    rng = np.random.default_rng(seed)
    experts = _experts(rng)
    x = rng.normal(size=(9, 6))
    w, sel = topk_gate(x, rng.normal(size=(6, 4)), 2)
    sparse = moe_forward(x, experts, w, sel).data
    dense = moe_dense(x, experts, w).data
    np.testing.assert_array_equal(sparse, dense)


def test_identical_experts_scale_by_gate_mass(rng):
    e = Expert(6, 8, rng)
    experts = [e] * 4
    x = rng.normal(size=(5, 6))
    w, sel = topk_gate(x, rng.normal(size=(6, 4)), 2)
    mass = w.data.sum(-1, keepdims=True)
    np.testing.assert_allclose(moe_forward(x, experts, w, sel).data, e(x).data * mass, atol=1e-12)


def test_one_hot_gate_selects_single_expert(rng):
    experts = _experts(rng)
    x = rng.normal(size=(3, 6))
    w = np.zeros((3, 4))
    w[:, 2] = 0.7
    sel = w > 0
    np.testing.assert_allclose(moe_forward(x, experts, Tensor(w), sel).data, 0.7 * experts[2](x).data)


def test_moe_gradcheck(rng):
    experts = _experts(rng, d=3, hidden=4)
    Wg = rng.normal(size=(3, 4))

    def f(x):
        w, sel = topk_gate(x, Wg, 2)
        return (moe_forward(x, experts, w, sel) ** 2).sum()

    assert max(ad.gradcheck(f, [rng.normal(size=(4, 3))], eps=1e-6)) < 1e-4


def test_load_balance_examples():
    assert load_balance_loss(np.full((4, 4), 0.25)).item() == pytest.approx(0.0)
    one = np.zeros((5, 4))
    one[:, 0] = 1.0
    assert load_balance_loss(one).item() == pytest.approx(3.0)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (5, 4), elements=st.floats(0.01, 1.0)))
def test_load_balance_matches_cv_squared(w):
    mass = w.sum(0)
    assert load_balance_loss(w).item() == pytest.approx(mass.var() / mass.mean() ** 2, rel=1e-9)


def test_load_balance_empty_batch():
    with pytest.raises(ContractError):
        load_balance_loss(np.zeros((0, 4)))
    with pytest.raises(ContractError):
        load_balance_loss(np.ones((2, 4)), mask=np.zeros(2, dtype=bool))


def test_decode_uniform_probs_and_zero_offsets(rng):
    head = MultimodalHead(8, 6, 4, 25, rng, cv_prior=False)
    head.prob.weight.data[:] = 0.0
    head.prob.bias.data[:] = 0.0
    head.traj_w.data[:] = 0.0
    out = decode(Tensor(rng.normal(size=(3, 8))), head, np.zeros((3, 2)), np.ones((3, 2)))
    np.testing.assert_allclose(out["probs"].data, 1 / 6)
    assert (out["traj"].data == 0).all()


def test_constant_velocity_prior(rng):
    head = MultimodalHead(8, 6, 4, 25, rng)
    head.traj_w.data[:] = 0.0
    out = decode(Tensor(rng.normal(size=(1, 8))), head, np.array([[1.0, 2.0]]), np.array([[10.0, 0.0]]), dt=0.2)
    np.testing.assert_allclose(out["traj"].data[0, 3, -1], [1.0 + 10.0 * 5.0, 2.0])


def test_decoder_masks_padded_rows(rng):
    dec = MoeDecoder(8, MoeConfig(hidden=16), 6, 4, rng)
    mask = np.array([True, False, True])
    out = dec(Tensor(rng.normal(size=(3, 8))), np.zeros((3, 2)), np.zeros((3, 2)), mask)
    assert not out["gate_selected"][1].any()
    np.testing.assert_allclose(out["probs"].data.sum(-1), 1.0)
    assert out["balance"].item() >= 0

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from trajdistill import autodiff as ad
from trajdistill.errors import ConfigError, ContractError
from trajdistill.distill import (DistillConfig, align_teacher_latents, info_nce, loss_att, loss_low, loss_sem,
                                 match_modes, negative_mask, schedule_weights, upsample_nearest)
from trajdistill.nn import Linear


def test_schedule_at_start():
    w = schedule_weights(0)
    assert (w.xi, w.zeta, w.eta) == (1.0, 0.5, 0.5)
    assert w.beta == 0.0


@pytest.mark.parametrize("t", [1, 10, 50, 200])
def test_schedule_closed_form(t):
    w = schedule_weights(t)
    assert w.xi == pytest.approx(math.exp(-0.02 * t))
    assert w.zeta == pytest.approx(0.5 * math.exp(-0.01 * t))
    assert w.eta == pytest.approx(0.5 * math.exp(-0.01 * t))
    assert 0.0 < w.beta < 1.0


def test_schedule_rejects_negative_time():
    with pytest.raises(ContractError):
        schedule_weights(-1)


def test_config_validation():
    with pytest.raises(ConfigError):
        DistillConfig(tau=0.0)
    with pytest.raises(ConfigError):
        DistillConfig(negatives="some")


def test_loss_low_zero_when_adapted_match(rng):
    ad_layer = Linear(4, 6, rng)
    F_S = rng.normal(size=(3, 4))
    assert loss_low(ad_layer(ad.Tensor(F_S)).data, F_S, ad_layer).item() == 0.0


def test_loss_low_unit_difference():
    F_T = np.zeros((2, 5))
    F_S = F_T.copy()
    F_S[1, 3] = 1.0
    assert loss_low(F_T, F_S).item() == pytest.approx(1 / 10)


def test_loss_low_shape_mismatch():
    with pytest.raises(ContractError):
        loss_low(np.zeros((2, 5)), np.zeros((2, 4)))


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (3, 4), elements=st.floats(-10, 10)), arrays(np.float64, (3, 4), elements=st.floats(-10, 10)))
def test_loss_low_nonnegative(a, b):
    assert loss_low(a, b).item() >= 0.0


def test_loss_low_mask_ignores_rows():
    F_T = np.zeros((2, 3))
    F_S = np.array([[1.0, 1.0, 1.0], [9.0, 9.0, 9.0]])
    assert loss_low(F_T, F_S, mask=np.array([1.0, 0.0])).item() == pytest.approx(1.0)


def test_loss_att_examples(rng):
    A = rng.uniform(size=(2, 4, 4))
    assert loss_att(A, A).item() == 0.0
    assert loss_att(A, A + 0.1).item() == pytest.approx(0.01)
    one = np.full((1, 1, 1), 0.3)
    assert loss_att(A, one).item() == pytest.approx(((A - 0.3) ** 2).mean())


def test_upsample_nearest_indices():
    a = np.arange(4.0).reshape(2, 2)
    np.testing.assert_array_equal(upsample_nearest(a, (4, 4)).data,
                                  [[0, 0, 1, 1], [0, 0, 1, 1], [2, 2, 3, 3], [2, 2, 3, 3]])


def test_loss_sem_positive_only_is_zero(rng):
    z = rng.normal(size=(2, 3, 4))
    assert loss_sem(z, rng.normal(size=(2, 3, 4)), "none").item() == pytest.approx(0.0, abs=1e-12)


def test_loss_sem_one_orthogonal_negative():
    z = np.eye(2)
    want = math.log1p(math.exp(-1 / 0.07))
    assert loss_sem(z, z, "all").item() == pytest.approx(want, rel=1e-9)
    assert want == pytest.approx(6.2e-7, rel=0.02)


def test_info_nce_gradcheck(rng):
    zT = rng.normal(size=(6, 4))
    neg = negative_mask(2, 3, "both")
    assert max(ad.gradcheck(lambda zs: info_nce(zT, zs, neg, 0.5), [rng.normal(size=(6, 4))], eps=1e-6)) < 1e-4


@pytest.mark.parametrize("kind,count", [("both", 1 + 2), ("in-batch", 1), ("in-mode", 2), ("all", 5), ("none", 0)])
def test_negative_mask_counts(kind, count):
    m = negative_mask(2, 3, kind)
    assert not m.diagonal().any()
    assert (m.sum(axis=1) == count).all()


def test_loss_sem_shape_mismatch():
    with pytest.raises(ContractError):
        loss_sem(np.zeros((2, 3, 4)), np.zeros((2, 3, 5)))


def test_match_and_align_modes(rng):
    traj_T = rng.normal(size=(2, 3, 5, 2)) * 10
    perm = np.array([2, 0, 1])
    traj_S = traj_T[:, perm] + 0.01
    np.testing.assert_array_equal(match_modes(traj_S, traj_T), np.tile(perm, (2, 1)))
    z_T = rng.normal(size=(2, 3, 4))
    np.testing.assert_array_equal(align_teacher_latents(z_T, traj_S, traj_T), z_T[:, perm])

import numpy as np
import pytest

from trajdistill import autodiff as ad
from trajdistill.autodiff import Tape, Tensor
from trajdistill.errors import ConfigError
from trajdistill.nn import ADAPTER, BODY, FROZEN, LORA
from trajdistill.scene import T_F, generate_synthetic, tensorize
from trajdistill.student import (GRU, LoraHead, SqueezeExcite, Student, StudentConfig, interaction_attention,
                                 lora_forward)
from trajdistill.teacher import Teacher, TeacherConfig


@pytest.fixture(scope="module")
def batch():
    return tensorize(generate_synthetic(21, 3, "mixed"), n_max=6)


def test_gru_zero_weights_stays_at_zero(rng):
    gru = GRU(3, 4, 2, rng)
    for p in gru.parameters():
        p.data[:] = 0.0
    seq, finals = gru(Tensor(rng.normal(size=(2, 5, 3))))
    assert (seq.data == 0).all() and (finals.data == 0).all()


def test_gru_saturated_update_gate_carries_state(rng):
    gru = GRU(3, 4, 1, rng)
    H = 4
    gru.b_x[0].data[:H] = 1e3  # update gate -> 1
    seq, _ = gru(Tensor(rng.normal(size=(2, 5, 3))))
    # the state starts at zero and is carried unchanged
    np.testing.assert_allclose(seq.data, 0.0, atol=1e-12)


def test_gru_gradcheck(rng):
    gru = GRU(2, 3, 2, rng)
    assert max(ad.gradcheck(lambda x: (gru(x)[0] ** 2).sum(), [rng.normal(size=(2, 4, 2))], eps=1e-6)) < 1e-4


def test_se_constant_input_mean(rng):
    se = SqueezeExcite(8, 4, rng)
    U = np.tile(rng.normal(size=(1, 1, 8)), (2, 6, 1))
    np.testing.assert_allclose(Tensor(U).mean(axis=-2).data, U[:, 0])
    se.fc2.bias.data[:] = 1e3
    np.testing.assert_allclose(se(Tensor(U)).data, U)


def test_se_divisibility():
    with pytest.raises(ConfigError):
        SqueezeExcite(10, 4, np.random.default_rng(0))
    with pytest.raises(ConfigError):
        StudentConfig(hidden=30, se_reduction=4)


def test_lora_init_equals_base(rng):
    head = LoraHead(8, 2, 4, 16.0, rng)
    h = rng.normal(size=(5, 8))
    np.testing.assert_array_equal(lora_forward(Tensor(h), head).data, h @ head.W0.data.T)


def test_lora_base_receives_no_gradient(rng):
    head = LoraHead(8, 2, 4, 16.0, rng)
    head.B.data = rng.normal(size=head.B.shape)
    with Tape() as tape:
        loss = (lora_forward(Tensor(rng.normal(size=(5, 8))), head) ** 2).sum()
    grads = ad.backward(tape, loss)
    assert head.W0 not in grads or not np.any(grads[head.W0])
    assert np.any(grads[head.A]) and np.any(grads[head.B])


def test_lora_update_rank_bounded(rng):
    head = LoraHead(32, 16, 8, 32.0, rng)
    head.A.data = rng.normal(size=head.A.shape)
    head.B.data = rng.normal(size=head.B.shape)
    sv = np.linalg.svd(head.effective_weight() - head.W0.data, compute_uv=False)
    assert (sv[8:] < 1e-10).all()


def test_interaction_attention_rows(rng):
    mask = np.ones((1, 2, 4), dtype=bool)
    mask[..., 3] = False
    a = interaction_attention(Tensor(rng.normal(size=(1, 2, 4, 5))), mask).data
    np.testing.assert_allclose(a[..., :3, :].sum(-1), 1.0)
    assert (a[..., 3] == 0).all()


def test_student_outputs(batch):
    st = Student(StudentConfig(), np.random.default_rng(0))
    with Tape():
        out = st(batch)
    B, _, N = batch.mask.shape
    assert out["traj"].shape == (B, N, 6, T_F, 2)
    np.testing.assert_allclose(out["probs"].data.sum(-1), 1.0)
    np.testing.assert_allclose(out["maneuver"].data.sum(-1), 1.0)
    assert out["action_mean"].shape == (B, 2)
    assert {"f_low", "attention", "sem_latent"} <= set(out)
    assert "f_low" not in st(batch, internals=False)


def test_equal_maneuver_logits_uniform(batch):
    st = Student(StudentConfig(), np.random.default_rng(0))
    st.maneuver.weight.data[:] = 0.0
    np.testing.assert_allclose(st(batch, internals=False)["maneuver"].data, 1 / 3)


def test_parameter_budget():
    st = Student(StudentConfig(), np.random.default_rng(0))
    te = Teacher(TeacherConfig(), np.random.default_rng(0))
    assert te.num_parameters() / st.deploy_parameters() >= 5.0
    assert st.lora_fraction() < 0.01
    labels = {p.label for p in st.parameters()}
    assert labels <= {BODY, FROZEN, LORA, ADAPTER, "policy-logstd"}


def test_teacher_outputs(batch):
    te = Teacher(TeacherConfig(), np.random.default_rng(0))
    out = te(batch)
    B, _, N = batch.mask.shape
    assert out["traj"].shape == (B, N, 6, T_F, 2)
    np.testing.assert_allclose(out["probs"].data.sum(-1), 1.0, atol=1e-12)
    assert out["attention"].shape == (B, batch.mask.shape[1], N, N)
    sel = out["gate_selected"]
    assert (sel.sum(-1) <= 2).all()


def test_forward_is_deterministic(batch):
    a = Student(StudentConfig(), np.random.default_rng(5))(batch, internals=False)["traj"].data
    b = Student(StudentConfig(), np.random.default_rng(5))(batch, internals=False)["traj"].data
    np.testing.assert_array_equal(a, b)

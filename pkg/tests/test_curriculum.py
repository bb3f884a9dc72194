import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from trajdistill.autodiff import Tensor
from trajdistill.curriculum import (ComplexityStats, CurriculumConfig, CurriculumState, EwcState, advance,
                                    complexity, ewc_penalty, fisher_diagonal, histogram_entropy, raw_features,
                                    trajectory_entropy, weighted_complexity)
from trajdistill.errors import ConfigError, ContractError
from trajdistill.nn import Parameter
from trajdistill.scene import T_H, AgentState, ObservationWindow, Scene, generate_synthetic, tensorize
from trajdistill.student import Student, StudentConfig


def window_with_headings(*heading_tracks):
    scenes = []
    for t in range(T_H):
        nbs = tuple((i + 1, AgentState(10.0 * (i + 1), 0.0, 20.0, float(th[t])))
                    for i, th in enumerate(heading_tracks))
        scenes.append(Scene(AgentState(0.0, 0.0, 20.0, 0.0), nbs))
    return ObservationWindow(tuple(scenes))


def test_straight_neighbours_zero_entropy():
    assert trajectory_entropy(window_with_headings(np.zeros(T_H), np.full(T_H, 0.1))) == 0.0


def test_two_equal_bins_entropy_one_third():
    zigzag = np.where(np.arange(T_H) % 2 == 0, 0.0, 0.05)
    assert trajectory_entropy(window_with_headings(zigzag)) == pytest.approx(1 / 3)
    assert math.log(2) / math.log(8) == pytest.approx(1 / 3)


def test_uniform_bins_entropy_one():
    assert histogram_entropy(np.linspace(-1.0, 1.0, 8)) == pytest.approx(1.0)
    assert histogram_entropy(np.zeros(5)) == 0.0


def test_entropy_without_neighbours():
    assert trajectory_entropy(window_with_headings()) == 0.0


@given(st.lists(st.floats(-0.3, 0.3), min_size=T_H, max_size=T_H))
def test_entropy_in_unit_interval(track):
    assert 0.0 <= trajectory_entropy(window_with_headings(np.array(track))) <= 1.0 + 1e-12


@pytest.mark.parametrize("comps,expected", [((0, 0, 0), 0.0), ((1, 1, 1), 1.0), ((1, 0, 0), 0.3),
                                            ((0, 1, 0), 0.4), ((0, 0, 1), 0.3)])
def test_weighted_complexity(comps, expected):
    assert weighted_complexity(comps) == pytest.approx(expected)


def test_complexity_needs_statistics():
    sc = generate_synthetic(0, 1, "lane-keep")[0]
    with pytest.raises(ContractError):
        complexity(sc, None)


def test_complexity_range_and_ordering():
    ss = list(generate_synthetic(0, 6, "lane-keep")) + list(generate_synthetic(0, 6, "dense-merge"))
    stats = ComplexityStats.fit(ss)
    c = np.array([complexity(sc, stats) for sc in ss])
    assert ((0 <= c) & (c <= 1)).all()
    assert c[6:].mean() > c[:6].mean()
    assert raw_features(ss[0]).shape == (3,)


@pytest.mark.parametrize("acc,inc", [(0.85, 0.0), (0.95, 0.1), (0.875, 0.05), (0.5, 0.0), (1.0, 0.1)])
def test_advance_increment(acc, inc):
    assert advance(CurriculumState(bound=0.3), acc) - 0.3 == pytest.approx(inc)


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_advance_non_decreasing_and_capped(acc, bound):
    nxt = advance(CurriculumState(bound=bound), acc)
    assert bound <= nxt <= bound + 0.1 + 1e-12


def test_advance_rejects_bad_accuracy():
    with pytest.raises(ContractError):
        advance(CurriculumState(), 1.5)


def test_config_validation():
    with pytest.raises(ConfigError):
        CurriculumConfig(stages=0)
    with pytest.raises(ConfigError):
        CurriculumConfig(slices="random")


def _ewc(theta, ref, F, lam=400.0):
    p = Parameter(theta)
    return ewc_penalty([("w", p)], EwcState({"w": np.asarray(F, float)}, {"w": np.asarray(ref, float)}, lam)).item()


def test_ewc_examples():
    assert _ewc([1.0, 2.0], [1.0, 2.0], [1.0, 1.0]) == 0.0
    assert _ewc([0.1], [0.0], [1.0]) == pytest.approx(2.0)
    assert _ewc([5.0, -3.0], [0.0, 0.0], [0.0, 0.0]) == 0.0
    assert ewc_penalty([("w", Parameter([1.0]))], None).item() == 0.0


def test_ewc_shape_mismatch():
    with pytest.raises(ContractError):
        _ewc([1.0, 2.0], [1.0], [1.0])


@pytest.fixture(scope="module")
def small_student():
    return Student(StudentConfig(), np.random.default_rng(3))


@pytest.fixture(scope="module")
def batch():
    return tensorize(generate_synthetic(8, 4, "mixed"))


def test_fisher_nonnegative_and_deterministic(small_student, batch):
    named = list(small_student.named_parameters())
    F1 = fisher_diagonal(small_student, batch, named, max_samples=3)
    F2 = fisher_diagonal(small_student, batch, named, max_samples=3)
    for name in F1:
        assert (F1[name] >= 0).all()
        np.testing.assert_array_equal(F1[name], F2[name])
    assert (F1["maneuver.weight"] == 0).all()  # not part of the forecast likelihood
    assert (F1["policy.B"] == 0).all()
    assert F1["gru.w_x.0"].sum() > 0


def test_fisher_is_mean_of_per_sample_squares(small_student, batch):
    named = [("head.prob.bias", small_student.head.prob.bias)]
    both = fisher_diagonal(small_student, batch, named, max_samples=2)["head.prob.bias"]
    a = fisher_diagonal(small_student, batch.take([0]), named)["head.prob.bias"]
    b = fisher_diagonal(small_student, batch.take([1]), named)["head.prob.bias"]
    np.testing.assert_allclose(both, 0.5 * (a + b), rtol=1e-12)

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajdistill.errors import ConfigError, ParseError, ValidationError
from trajdistill.scene import (DT, FEAT_DIM, PROFILES, T_F, T_H, AgentState, GeneratorConfig,
                               MultimodalForecast, ObservationWindow, Scene, bearing_order, dumps_set,
                               generate_synthetic, lane_change_offset, load_scenarios, save_scenarios,
                               scenario_to_record, tensorize, with_forecast, wrap_angle)


@pytest.mark.parametrize("theta,expected", [(0.0, 0.0), (math.pi, math.pi), (-math.pi, math.pi),
                                            (3 * math.pi, math.pi), (2 * math.pi + 0.5, 0.5)])
def test_wrap_angle(theta, expected):
    assert wrap_angle(theta) == pytest.approx(expected)


@given(st.floats(-100, 100))
def test_wrap_angle_range(theta):
    w = wrap_angle(theta)
    assert -math.pi < w <= math.pi
    assert math.cos(w) == pytest.approx(math.cos(theta), abs=1e-9)


@pytest.mark.parametrize("kwargs,field", [({"v": -1.0}, "v"), ({"theta": 4.0}, "theta"),
                                          ({"agent_type": 3}, "type")])
def test_agent_state_validation(kwargs, field):
    base = dict(x=0.0, y=0.0, v=1.0, theta=0.0)
    base.update(kwargs)
    with pytest.raises(ValidationError, match=field):
        AgentState(**base)


def test_scene_rejects_duplicate_ids():
    a = AgentState(0.0, 0.0, 1.0, 0.0)
    with pytest.raises(ValidationError, match="neighbors"):
        Scene(a, ((1, a), (1, a)))
    with pytest.raises(ValidationError, match="neighbors"):
        Scene(a, ((0, a),))


def test_window_length_enforced():
    s = Scene(AgentState(0.0, 0.0, 1.0, 0.0))
    with pytest.raises(ValidationError, match="obs"):
        ObservationWindow((s,) * (T_H - 1))
    assert len(ObservationWindow((s,) * T_H).scenes) == T_H


def test_forecast_probabilities_must_sum_to_one():
    traj = np.zeros((2, T_F, 2))
    with pytest.raises(ValidationError, match="probabilities"):
        MultimodalForecast.from_arrays(traj, np.array([0.5, 0.4]))
    fc = MultimodalForecast.from_arrays(traj, np.array([0.5, 0.5]))
    np.testing.assert_array_equal(fc.arrays()[0], traj)


def test_lane_keep_heading_small():
    ss = generate_synthetic(7, 10, "lane-keep")
    assert len(ss) == 10
    for sc in ss:
        for s in sc.window.scenes:
            assert abs(s.ego.theta) <= 0.02


def test_generation_is_deterministic():
    assert dumps_set(generate_synthetic(3, 5, "mixed")) == dumps_set(generate_synthetic(3, 5, "mixed"))
    assert dumps_set(generate_synthetic(3, 5, "mixed")) != dumps_set(generate_synthetic(4, 5, "mixed"))


def test_left_lane_change_displacement_equals_lane_width():
    cfg = GeneratorConfig(pos_noise=0.0)
    sc = generate_synthetic(7, 1, "left-LC", cfg)[0]
    ego_future = np.asarray(dict(sc.future)[0])
    meta = sc.meta_dict()
    assert sc.label == 1
    lateral = ego_future[-1, 1] - meta["start_lane_y"]
    assert lateral == pytest.approx(cfg.lane_width, abs=1e-9)


def test_lane_change_offset_closed_form():
    t = np.array([-1.0, 0.0, 2.0, 4.0, 9.0])
    off = lane_change_offset(t, 0.0, 4.0, 3.7)
    np.testing.assert_allclose(off, [0.0, 0.0, 1.85, 3.7, 3.7])


def test_unknown_profile_rejected():
    with pytest.raises(ConfigError, match="lane-keep"):
        generate_synthetic(0, 1, "roundabout")


@pytest.mark.parametrize("profile", PROFILES)
def test_every_profile_generates_valid_scenarios(profile):
    ss = generate_synthetic(11, 3, profile)
    for sc in ss:
        assert len(sc.window.scenes) == T_H
        assert sc.window.dt == DT
        assert all(len(traj) == T_F for _, traj in sc.future)
        ego = sc.window.scenes[-1].ego
        assert abs(ego.x) < 0.2 and abs(ego.y) < 0.2  # origin is the last observed ego position


def test_round_trip(tmp_path):
    ss = generate_synthetic(5, 4, "mixed")
    path = tmp_path / "s.jsonl"
    save_scenarios(ss, path)
    back = load_scenarios(path)
    assert back == ss


def test_round_trip_with_forecast(tmp_path):
    sc = generate_synthetic(5, 1, "lane-keep")[0]
    traj = np.ones((6, T_F, 2))
    sc = with_forecast(sc, traj, np.full(6, 1 / 6))
    path = tmp_path / "f.jsonl"
    path.write_text(json.dumps(scenario_to_record(sc)) + "\n")
    back = load_scenarios(path)
    assert len(back) == 1 and back[0] == sc


def test_bad_probabilities_in_file(tmp_path):
    sc = generate_synthetic(5, 1, "lane-keep")[0]
    rec = scenario_to_record(sc)
    rec["forecast"] = {"trajectories": [[[0.0, 0.0]] * T_F] * 2, "probabilities": [0.5, 0.4]}
    path = tmp_path / "bad.jsonl"
    path.write_text(json.dumps(rec) + "\n")
    with pytest.raises(ValidationError, match="probabilities") as exc:
        load_scenarios(path)
    assert exc.value.line == 1


def test_malformed_line_reports_line_number(tmp_path):
    good = dumps_set(generate_synthetic(5, 1, "lane-keep"))
    path = tmp_path / "m.jsonl"
    path.write_text(good + "{not json\n")
    with pytest.raises(ParseError) as exc:
        load_scenarios(path)
    assert exc.value.line == 2


def test_missing_field_named(tmp_path):
    rec = scenario_to_record(generate_synthetic(5, 1, "lane-keep")[0])
    del rec["label"]
    path = tmp_path / "x.jsonl"
    path.write_text(json.dumps(rec) + "\n")
    with pytest.raises(ValidationError, match="label"):
        load_scenarios(path)


def test_tensorize_shapes_and_masks():
    ss = generate_synthetic(2, 3, "dense-merge")
    b = tensorize(ss, n_max=8)
    assert b.feats.shape == (3, T_H, 8, FEAT_DIM)
    assert b.future.shape == (3, 8, T_F, 2)
    assert b.mask[:, :, 0].all()
    assert (b.feats[~b.mask] == 0).all()
    assert (b.order[:, 0] == 0).all()
    for row in b.order:
        assert sorted(row) == list(range(8))


def test_tensorize_truncates_to_nearest_neighbours():
    sc = generate_synthetic(2, 1, "dense-merge")[0]
    small = tensorize([sc], n_max=3)
    last = sc.window.scenes[-1]
    d = sorted(math.hypot(s.x, s.y) for _, s in last.neighbors)
    got = sorted(float(np.hypot(*small.pos[0, -1, k])) for k in (1, 2))
    np.testing.assert_allclose(got, d[:2], atol=0.1)


def test_bearing_order_padding_last():
    pos = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 0.0], [-5.0, 1.0], [3.0, 0.1]])
    valid = np.array([True, True, False, True, True])
    order = bearing_order(pos, valid)
    assert order[0] == 0 and order[-1] == 2
    assert list(order[1:3]) == [4, 1]  # same sector, nearer first

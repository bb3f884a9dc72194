import json
import os

import pytest

from trajdistill import cli
from trajdistill.scene import load_scenarios


def test_generate_deterministic(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert cli.main(["generate", "--seed", "42", "--count", "100", "--out", str(a)]) == 0
    assert cli.main(["generate", "--seed", "42", "--count", "100", "--out", str(b)]) == 0
    assert len(a.read_text().splitlines()) == 100
    assert a.read_bytes() == b.read_bytes()
    assert len(load_scenarios(str(a))) == 100


def test_generate_bad_profile_names_choices(tmp_path, capsys):
    code = cli.main(["generate", "--profile", "highway", "--count", "3", "--out", str(tmp_path / "x.jsonl")])
    assert code == 2
    err = capsys.readouterr().err
    for name in ("lane-keep", "dense-merge", "mixed"):
        assert name in err


def test_generate_near_collision_suite(tmp_path):
    out = tmp_path / "nc.jsonl"
    assert cli.main(["generate", "--profile", "near-collision", "--count", "4", "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 4


@pytest.mark.parametrize("argv", [["train", "--out", "X", "--set", "nosuchkey=1"],
                                  ["train", "--out", "X", "--phase", "distill"],
                                  ["train", "--out", "X", "--phase", "ppo"],
                                  ["bogus-command"]])
def test_usage_errors_exit_2(argv, tmp_path):
    argv = [str(tmp_path / "run") if a == "X" else a for a in argv]
    assert cli.main(argv) == 2


def test_bad_thread_count(monkeypatch, tmp_path):
    monkeypatch.setenv(cli.THREADS_ENV, "zero")
    assert cli.main(["generate", "--count", "1", "--out", str(tmp_path / "g.jsonl")]) == 2


def test_malformed_data_exits_1(tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{not json\n")
    model = tmp_path / "m.ckpt"
    model.write_bytes(b"MVNTgarbage")
    assert cli.main(["eval", "--model", str(model), "--data", str(bad), "--report", str(tmp_path / "r")]) == 1


def test_train_eval_dump(tmp_path, small_overrides, capsys):
    run = tmp_path / "run"
    sets = [x for o in small_overrides for x in ("--set", o)]
    assert cli.main(["train", "--phase", "teacher", "--out", str(run)] + sets) == 0
    assert cli.main(["train", "--phase", "distill", "--out", str(run)] + sets) == 0
    data = tmp_path / "val.jsonl"
    assert cli.main(["generate", "--seed", "5", "--count", "6", "--out", str(data)]) == 0
    report = tmp_path / "report"
    assert cli.main(["eval", "--model", str(run / "student.ckpt"), "--data", str(data),
                     "--report", str(report)]) == 0
    metrics = json.loads((tmp_path / "report.json").read_text())
    assert {"min_ade", "min_fde", "miss_rate"} <= set(metrics)
    assert (tmp_path / "report.csv").read_text().count("\n") == 2
    fc = tmp_path / "fc.csv"
    assert cli.main(["dump", "--what", "forecasts", "--model", str(run / "student.ckpt"), "--data", str(data),
                     "--out", str(fc)]) == 0
    assert len(fc.read_text().splitlines()) == 1 + 6 * 6 * 25
    ro = tmp_path / "ro.jsonl"
    assert cli.main(["dump", "--what", "rollouts", "--model", str(run / "student.ckpt"), "--out", str(ro)]) == 0
    assert os.path.exists(str(ro) + ".summary.csv")


def test_profile_scan_rows(tmp_path, capsys):
    out = tmp_path / "p.csv"
    assert cli.main(["profile", "--what", "scan-vs-attn", "--repeats", "1", "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 5

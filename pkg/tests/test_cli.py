import csv
import io
import json

import numpy as np
import pytest

from ctcm.cli import main
from ctcm.validate import DETERMINISM_YAML

SMALL = """\
params:
  theta_a: 0.05
  theta_d: [0.2, 0.05]
  n: [1, 3]
  dim: 2
  eta: {kind: uniform-box, mean: [1, 1], half_width: 1}
engines:
  - distribution: exponential
  - distribution: truncated-normal
    scale_s: 1
horizon_h: 0.5
burn_in_h: 0.1
window_end_h: 0.5
ensemble_size: 8
seed: 11
"""


@pytest.fixture
def small(tmp_path):
    path = tmp_path / "small.yaml"
    path.write_text(SMALL)
    return path


def read_csv(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("#") and "per second" in lines[0]
    return list(csv.DictReader(lines[1:]))


def test_simulate_writes_one_row_per_grid_point(small, tmp_path):
    out = tmp_path / "out.csv"
    assert main(["simulate", "--config", str(small), "--out", str(out), "--threads", "1"]) == 0
    rows = read_csv(out)
    assert len(rows) == 8
    assert list(rows[0]) == [
        "n", "theta_a", "theta_d", "engine", "distribution", "M", "burn_in_s", "window_s",
        "est_vx", "est_vy", "se_vx", "se_vy", "theory_vx", "theory_vy", "tv_to_sigma",
    ]
    assert {(r["engine"], r["distribution"]) for r in rows} == {("markov", "exponential"), ("semi-markov", "truncated-normal")}
    assert rows[0]["M"] == "8" and float(rows[0]["burn_in_s"]) == 360.0 and float(rows[0]["window_s"]) == 1440.0
    for r in rows:
        assert np.isfinite(float(r["est_vx"])) and 0.0 <= float(r["tv_to_sigma"]) <= 1.0


def test_single_member_smoke(tmp_path):
    cfg = tmp_path / "one.yaml"
    cfg.write_text("params: {theta_a: 0.05, theta_d: 0.2, n: 2}\nhorizon_h: 0.01\nburn_in_h: 0\nensemble_size: 1\n")
    out = tmp_path / "one.csv"
    assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
    (row,) = read_csv(out)
    assert row["se_vx"] == "nan"


def test_simulate_is_byte_deterministic(small, tmp_path):
    a, b, c = tmp_path / "a.csv", tmp_path / "b.csv", tmp_path / "c.csv"
    main(["simulate", "--config", str(small), "--out", str(a), "--threads", "1"])
    main(["simulate", "--config", str(small), "--out", str(b), "--threads", "3"])
    main(["simulate", "--config", str(small), "--out", str(c), "--seed", "12"])
    assert a.read_bytes() == b.read_bytes()
    assert a.read_bytes() != c.read_bytes()


def test_trajectory_dump(small, tmp_path):
    dump = tmp_path / "members.jsonl"
    text = SMALL + f"output: {{trajectories: {dump}}}\n"
    small.write_text(text)
    out = tmp_path / "out.csv"
    assert main(["simulate", "--config", str(small), "--out", str(out)]) == 0
    records = [json.loads(line) for line in dump.read_text().splitlines()]
    assert len(records) == 8 * 8
    r = records[0]
    assert set(r) >= {"trajectory_id", "t_burn_centroid", "t_end_centroid", "jump_count", "occupancy"}
    assert len(r["occupancy"]) == r["n"] + 1 and sum(r["occupancy"]) == pytest.approx(1.0)


def test_theory_matches_simulate_column(small, tmp_path, capsys):
    out = tmp_path / "sim.csv"
    main(["simulate", "--config", str(small), "--out", str(out)])
    sim = read_csv(out)
    assert main(["theory", "--config", str(small)]) == 0
    theory = list(csv.DictReader(capsys.readouterr().out.splitlines()[1:]))
    assert len(theory) == 4
    by_key = {(t["n"], t["theta_d"]): t for t in theory}
    for r in sim:
        t = by_key[(r["n"], r["theta_d"])]
        assert (r["theory_vx"], r["theory_vy"]) == (t["theory_vx"], t["theory_vy"])


def test_theory_from_flags(capsys):
    assert main(["theory", "--n", "2", "--theta-a", "0.05", "--theta-d", "0.05"]) == 0
    (row,) = csv.DictReader(capsys.readouterr().out.splitlines()[1:])
    assert [float(x) for x in row["sigma"].split()] == pytest.approx([0.25, 0.5, 0.25], abs=1e-15)
    assert main(["theory", "--n", "3", "--theta-a", "0.05", "--theta-d", "0.2", "--eta-mean", "0", "0"]) == 0
    (row,) = csv.DictReader(capsys.readouterr().out.splitlines()[1:])
    assert float(row["theory_vx"]) == 0.0 and float(row["theory_vy"]) == 0.0


def test_invalid_config_exit_code(tmp_path, capsys):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("params:\n  theta_a: 0.05\n  theta_d: 0\n")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "x.csv")]) == 2
    err = capsys.readouterr().err
    assert "line 3" in err and "params.theta_d" in err


def test_missing_files(tmp_path, capsys):
    assert main(["simulate", "--config", str(tmp_path / "nope.yaml")]) == 2
    cfg = tmp_path / "ok.yaml"
    cfg.write_text(DETERMINISM_YAML)
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "no" / "dir.csv")]) == 2


def test_theory_requires_inputs(capsys):
    assert main(["theory", "--n", "2"]) == 2


def test_validate_fault_injection(tmp_path, capsys):
    cfg = tmp_path / "fault.yaml"
    cfg.write_text(
        "params: {theta_a: 0.05, theta_d: 0.2, n: [3], support_radius: 1.0,"
        " eta: {kind: uniform-box, mean: [1, 1], half_width: 1}}\n"
    )
    assert main(["validate", "--config", str(cfg), "--checks", "path-bounds"]) == 1
    assert "FAIL path-bounds" in capsys.readouterr().out
    cfg.write_text("params: {theta_a: 0.05, theta_d: 0.2, n: [3]}\n")
    assert main(["validate", "--config", str(cfg), "--checks", "path-bounds"]) == 0


def test_validate_unknown_check(capsys):
    assert main(["validate", "--checks", "nonsense"]) == 2


def test_validate_quick_subset(capsys):
    assert main(["validate", "--checks", "drift-identity,one-step"]) == 0
    out = capsys.readouterr().out
    assert "PASS drift-identity" in out and "PASS one-step" in out and "2/2 checks passed" in out

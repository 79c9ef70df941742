import json

import pytest

from optimist import cli
from optimist.core import read_trajectory_csv

PLAN = """
[plan]
name = cli_mini
kind = power
seed = 5
replications = 6
T = 100
B = 30

[design]
name = etc

[target]
theta0 = 0.95

[setup.null]
arms = bernoulli:0.5,0.5

[thresholds]
min_power = {min_power}
"""


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def data(tmp_path, capsys):
    path = tmp_path / "h.csv"
    code, _, _ = run(["simulate", "--design", "etc", "--T", "100", "--arms", "bernoulli:0.5,0.5", "--seed", "7",
                      "--out", str(path)], capsys)
    assert code == 0
    return path


class TestSimulate:
    def test_writes_csv_and_manifest(self, data):
        h = read_trajectory_csv(data)
        assert h.T == 100 and h.K == 2
        manifest = json.loads(data.with_name("h.csv.manifest.json").read_text())
        assert manifest["seed"] == 7 and manifest["T"] == 100 and manifest["design"]["design.kind"] == "etc"

    def test_byte_identical(self, data, tmp_path, capsys):
        other = tmp_path / "g.csv"
        run(["simulate", "--design", "etc", "--T", "100", "--arms", "bernoulli:0.5,0.5", "--seed", "7",
             "--out", str(other)], capsys)
        assert other.read_bytes() == data.read_bytes()

    def test_zero_horizon(self, tmp_path, capsys):
        path = tmp_path / "e.csv"
        code, _, _ = run(["simulate", "--design", "ucb", "--T", "0", "--arms", "bernoulli:0.5,0.5", "--seed", "1",
                          "--out", str(path)], capsys)
        assert code == 0 and path.read_text() == "t,arm,outcome\n"

    def test_seed_is_reported_when_omitted(self, tmp_path, capsys):
        code, _, err = run(["simulate", "--design", "etc", "--T", "10", "--arms", "bernoulli:0.5,0.5",
                            "--out", str(tmp_path / "s.csv")], capsys)
        assert code == 0 and "seed: " in err

    def test_config_errors_exit_2(self, tmp_path, capsys):
        assert run(["simulate", "--design", "etc", "--T", "10", "--seed", "1"], capsys)[0] == 2
        assert run(["simulate", "--design", "nope", "--T", "10", "--arms", "bernoulli:0.5", "--seed", "1"], capsys)[0] == 2
        code, _, err = run(["simulate", "--design", "etc", "--T", "10", "--arms", "bernoulli:2", "--seed", "1"], capsys)
        assert code == 2 and "config error" in err

    def test_param_override(self, tmp_path, capsys):
        path = tmp_path / "p.csv"
        code, _, _ = run(["simulate", "--design", "etc", "--param", "explore_fraction=0.2", "--T", "50",
                          "--arms", "bernoulli:0.5,0.5", "--seed", "3", "--out", str(path)], capsys)
        assert code == 0
        manifest = json.loads(path.with_name("p.csv.manifest.json").read_text())
        assert manifest["design"]["design.params.explore_fraction"] == "0.2"


class TestInference:
    def test_test_json(self, data, capsys):
        code, out, _ = run(["test", str(data), "--design", "etc", "--theta0", "0.5", "--seed", "2", "--B", "50"],
                           capsys)
        j = json.loads(out)
        assert code == 0 and j["B_effective"] == 50 and j["theta0"] == 0.5 and 0 <= j["cdf_value"] <= 1
        assert j["reject"] == (j["cdf_value"] < 0.05 or j["cdf_value"] > 0.95)

    def test_ci_agrees_with_point_tests(self, data, tmp_path, capsys):
        out_path = tmp_path / "ci.json"
        code, out, _ = run(["ci", str(data), "--design", "etc", "--seed", "4", "--B", "40", "--grid", "0.3:0.7:5",
                            "--out", str(out_path)], capsys)
        assert code == 0
        ci = json.loads(out)
        assert json.loads(out_path.read_text()) == ci
        assert ci["interval"][0] <= ci["estimate"] <= ci["interval"][1]
        for row in ci["per_null"]:
            _, t_out, _ = run(["test", str(data), "--design", "etc", "--seed", "4", "--B", "40",
                               "--theta0", repr(row["theta0"])], capsys)
            assert json.loads(t_out)["cdf_value"] == row["cdf_value"]

    def test_grid_values_and_streams(self, data, capsys):
        code, out, _ = run(["ci", str(data), "--design", "etc", "--seed", "4", "--B", "30",
                            "--grid-values", "0.4,0.5,0.6", "--independent-streams"], capsys)
        j = json.loads(out)
        assert code == 0 and [r["theta0"] for r in j["per_null"]] == [0.4, 0.5, 0.6]
        assert j["common_random_numbers"] is False

    def test_config_file_and_flag_precedence(self, data, tmp_path, capsys):
        cfg = tmp_path / "run.ini"
        cfg.write_text("[design]\nname = etc\n[target]\ntheta0 = 0.4\n[inference]\nB = 25\n[run]\nseed = 9\n")
        _, out, _ = run(["test", str(data), "--config", str(cfg)], capsys)
        j = json.loads(out)
        assert j["theta0"] == 0.4 and j["B"] == 25 and j["seed"] == 9
        _, out, _ = run(["test", str(data), "--config", str(cfg), "--B", "35", "--theta0", "0.6"], capsys)
        j = json.loads(out)
        assert j["theta0"] == 0.6 and j["B"] == 35

    def test_malformed_csv_exit_3(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("t,arm,outcome\n1,1,0.5\n2,1,oops\n")
        code, _, err = run(["test", str(bad), "--design", "etc", "--theta0", "0.5", "--seed", "1"], capsys)
        assert code == 3 and ":3:" in err
        bad.write_text("1,1,0.5\n")
        assert run(["test", str(bad), "--design", "etc", "--theta0", "0.5", "--seed", "1"], capsys)[0] == 3

    def test_arm_beyond_K(self, data, capsys):
        code, _, err = run(["test", str(data), "--design", "etc", "--theta0", "0.5", "--seed", "1", "--K", "1"],
                           capsys)
        assert code == 3 and "outside" in err

    def test_bad_worker_env(self, data, capsys, monkeypatch):
        monkeypatch.setenv("OPTIMIST_WORKERS", "many")
        assert run(["test", str(data), "--design", "etc", "--theta0", "0.5", "--seed", "1"], capsys)[0] == 2


class TestExperiment:
    @pytest.mark.parametrize("min_power, code", [("0.0", 0), ("1.01", 4)])
    def test_exit_codes(self, tmp_path, capsys, min_power, code):
        plan = tmp_path / "mini.plan"
        plan.write_text(PLAN.format(min_power=min_power))
        got, out, _ = run(["experiment", str(plan), "--out-root", str(tmp_path / "res")], capsys)
        assert got == code
        assert ("PASS" if code == 0 else "FAIL") in out
        runs = list((tmp_path / "res" / "cli_mini").iterdir())
        assert len(runs) == 1 and (runs[0] / "metrics.csv").exists()

    def test_overrides(self, tmp_path, capsys):
        plan = tmp_path / "mini.plan"
        plan.write_text(PLAN.format(min_power="0.0"))
        code, _, err = run(["experiment", str(plan), "--seed", "99", "--replications", "2",
                            "--out-root", str(tmp_path / "res")], capsys)
        assert code == 0 and "seed 99" in err
        run_dir = next((tmp_path / "res" / "cli_mini").iterdir())
        assert json.loads((run_dir / "plan.json").read_text())["plan"]["R"] == 2

    def test_unknown_plan(self, capsys):
        assert run(["experiment", "nope"], capsys)[0] == 2


def test_designs_listing(capsys):
    code, out, _ = run(["designs"], capsys)
    assert code == 0 and "clipped_ucb" in out and "bias1" in out


def test_help_lists_exit_codes(capsys):
    with pytest.raises(SystemExit):
        cli.main(["--help"])
    assert "exit codes" in capsys.readouterr().out

import csv
import json
from pathlib import Path

import numpy as np
import pytest

from trialoffer.cli import main
from trialoffer.experiments import fixture_path

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

TWO_ITEM = {"visibility": [1.0, 1.0], "quality": [0.8, 0.2], "feedback": 0.5}


def write_config(tmp_path, body, name="cfg.json"):
    body = {"schema_version": 1, **body}
    path = tmp_path / name
    path.write_text(json.dumps(body))
    return str(path)


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


class TestEquilibrium:
    def test_two_item(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {"market": TWO_ITEM})
        code, out, _ = run(capsys, "equilibrium", "--config", cfg, "--output", str(tmp_path / "o"))
        assert code == 0
        assert "0.941176 0.058824" in out
        tome = json.loads((tmp_path / "o" / "tome.json").read_text())
        np.testing.assert_allclose(tome["shares"], [16 / 17, 1 / 17], atol=1e-10)
        assert tome["method"] == "ClosedForm"

    def test_symmetric_uniform(self, tmp_path, capsys):
        market = {"visibility": [0.5] * 4, "quality": [0.6] * 4, "feedback": 0.3}
        cfg = write_config(tmp_path, {"market": market})
        code, _, _ = run(capsys, "equilibrium", "--config", cfg, "--output", str(tmp_path / "o"))
        tome = json.loads((tmp_path / "o" / "tome.json").read_text())
        assert code == 0
        np.testing.assert_allclose(tome["shares"], 0.25, atol=1e-15)

    def test_heterogeneous_config(self, tmp_path, capsys):
        code, out, _ = run(capsys, "equilibrium", "--config", str(CONFIGS / "heterogeneous.json"),
                           "--output", str(tmp_path))
        assert code == 0 and "[FixedPointIteration]" in out
        tome = json.loads((tmp_path / "tome.json").read_text())
        assert tome["residual"] <= 1e-10

    def test_missing_feedback(self, tmp_path, capsys):
        market = {"visibility": [1.0, 1.0], "quality": [0.8, 0.2]}
        cfg = write_config(tmp_path, {"market": market})
        code, _, err = run(capsys, "equilibrium", "--config", cfg, "--output", str(tmp_path))
        assert code == 1 and "feedback" in err
        assert not (tmp_path / "tome.json").exists()

    def test_unknown_key(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {"market": TWO_ITEM, "sedes": [1]})
        code, _, err = run(capsys, "equilibrium", "--config", cfg, "--output", str(tmp_path))
        assert code == 1 and "sedes" in err

    def test_bad_schema_version(self, tmp_path, capsys):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"schema_version": 2, "market": TWO_ITEM}))
        code, _, err = run(capsys, "equilibrium", "--config", str(path))
        assert code == 1 and "schema_version" in err

    def test_missing_file(self, tmp_path, capsys):
        code, _, _ = run(capsys, "equilibrium", "--config", str(tmp_path / "nope.json"))
        assert code == 1

    def test_no_subcommand(self, capsys):
        assert run(capsys)[0] == 1

    def test_nonconvergence_exit(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {"market": json.loads((CONFIGS / "heterogeneous.json").read_text())["market"]
                                      | {"quality": [[0.7, 0.4, 0.5, 0.9], [0.2, 0.9, 0.5, 0.3]]},
                                      "max_iter": 2})
        code, _, err = run(capsys, "equilibrium", "--config", cfg, "--output", str(tmp_path))
        assert code == 2


class TestSimulate:
    def test_three_seeds(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {"market": TWO_ITEM, "T": 2000, "record_every": 500})
        out = tmp_path / "o"
        code, _, _ = run(capsys, "simulate", "--config", cfg, "--seeds", "1,2,3", "--output", str(out))
        assert code == 0
        for s in (1, 2, 3):
            rows = list(csv.reader(open(out / f"trajectory_seed{s}.csv")))
            assert rows[0] == ["t", "phi_1", "phi_2", "efficiency", "entropy", "objective", "residual"]
            assert [int(r[0]) for r in rows[1:]] == [0, 500, 1000, 1500, 2000]
        agg = list(csv.reader(open(out / "aggregate.csv")))
        assert agg[0][:4] == ["t", "dist_p25", "dist_p50", "dist_p75"]
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["seeds"] == [1, 2, 3]

    def test_byte_identical_reruns(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {"market": TWO_ITEM, "T": 1000, "record_every": 100,
                                      "log_events": True})
        run(capsys, "simulate", "--config", cfg, "--seeds", "5,6", "--output", str(tmp_path / "a"))
        run(capsys, "simulate", "--config", cfg, "--seeds", "5,6", "--output", str(tmp_path / "b"),
            "--jobs", "2")
        for name in ("trajectory_seed5.csv", "trajectory_seed6.csv", "events_seed5.csv", "aggregate.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_deterministic_mode(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {"market": TWO_ITEM, "T": 200, "record_every": 50,
                                      "dynamics": "deterministic"})
        code, _, _ = run(capsys, "simulate", "--config", cfg, "--output", str(tmp_path))
        assert code == 0
        rows = list(csv.reader(open(tmp_path / "trajectory_deterministic.csv")))
        assert float(rows[-1][-1]) <= 1e-10
        np.testing.assert_allclose([float(rows[-1][1]), float(rows[-1][2])], [16 / 17, 1 / 17], atol=1e-10)

    def test_bad_dynamics(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {"market": TWO_ITEM, "dynamics": "chaotic"})
        assert run(capsys, "simulate", "--config", cfg, "--output", str(tmp_path))[0] == 1

    def test_bad_seeds(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {"market": TWO_ITEM})
        assert run(capsys, "simulate", "--config", cfg, "--seeds", "a,b", "--output", str(tmp_path))[0] == 1


class TestVerify:
    def test_stock_config_passes(self, tmp_path, capsys):
        code, out, _ = run(capsys, "verify", "--config", str(CONFIGS / "two_item.json"),
                           "--output", str(tmp_path))
        assert code == 0
        report = json.loads((tmp_path / "verify.json").read_text())
        assert report["passed"] and report["failed"] == []
        assert set(report["checks"]) >= {"gradient", "md_step_equality", "ct_bound", "nash_kkt"}

    def test_feedback_above_one_skip_reason(self, tmp_path, capsys):
        market = {"visibility": [1.0, 1.0, 1.0], "quality": [0.8, 0.5, 0.2], "feedback": 1.2}
        cfg = write_config(tmp_path, {"market": market, "n_random_markets": 0})
        code, _, _ = run(capsys, "verify", "--config", cfg, "--output", str(tmp_path))
        report = json.loads((tmp_path / "verify.json").read_text())
        assert code == 0
        for name in ("nash_kkt", "spending_round_trip", "ct_bound"):
            assert "feedback exponent" in report["checks"][name]["skipped"]

    def test_corrupt_gradient(self, tmp_path, capsys):
        code, _, err = run(capsys, "verify", "--config", str(CONFIGS / "two_item.json"),
                           "--output", str(tmp_path), "--corrupt-gradient")
        assert code == 2 and "gradient" in err
        report = json.loads((tmp_path / "verify.json").read_text())
        assert report["failed"] == ["gradient"]


def experiment_config(tmp_path, **extra):
    body = {"preferences": str(fixture_path("synthetic_2x20.csv")), "r": 0.5, "T": 2000,
            "record_every": 500, "seeds": [0, 1]}
    body.update(extra)
    return write_config(tmp_path, body)


class TestExperiment:
    def test_three_strategies(self, tmp_path, capsys):
        cfg = experiment_config(tmp_path, groups=str(fixture_path("synthetic_2x20_groups.csv")))
        out = tmp_path / "o"
        code, stdout, _ = run(capsys, "experiment", "--config", cfg, "--output", str(out))
        assert code == 0
        rows = list(csv.DictReader(open(out / "aggregate.csv")))
        assert {r["strategy"] for r in rows} == {"Random", "Popularity", "Quality"}
        for s in ("random", "popularity", "quality"):
            assert (out / f"{s}_seed0.csv").exists() and (out / f"{s}_seed1.csv").exists()
        resolved = json.loads((out / "manifest.json").read_text())["resolved"]
        assert resolved["M"] == 2 and resolved["setting"] == "heterogeneous"

    def test_default_iota_recorded(self, tmp_path, capsys):
        cfg = experiment_config(tmp_path, strategies=["Popularity"])
        code, _, _ = run(capsys, "experiment", "--config", cfg, "--output", str(tmp_path))
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert code == 0
        assert "iota" in manifest["defaults_applied"]
        assert manifest["resolved"]["iota"][:3] == [1.0, 0.5, pytest.approx(1 / 3)]
        assert manifest["resolved"]["iota_source"].startswith("default")

    def test_single_group_homogeneous(self, tmp_path, capsys):
        cfg = experiment_config(tmp_path, M=1, strategies=["Quality"])
        code, _, _ = run(capsys, "experiment", "--config", cfg, "--output", str(tmp_path))
        resolved = json.loads((tmp_path / "manifest.json").read_text())["resolved"]
        assert code == 0 and resolved["setting"] == "homogeneous" and resolved["M"] == 1

    def test_missing_r(self, tmp_path, capsys):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"schema_version": 1,
                                    "preferences": str(fixture_path("synthetic_2x20.csv"))}))
        code, _, err = run(capsys, "experiment", "--config", str(path), "--output", str(tmp_path))
        assert code == 1 and "'r'" in err

    def test_bad_preferences(self, tmp_path, capsys):
        bad = tmp_path / "p.csv"
        bad.write_text("user,item,value\n0,0,oops\n")
        cfg = experiment_config(tmp_path, preferences=str(bad))
        code, _, err = run(capsys, "experiment", "--config", cfg, "--output", str(tmp_path))
        assert code == 1 and "row 2" in err

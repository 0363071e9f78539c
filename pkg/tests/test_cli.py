import json

import numpy as np
import pytest
import yaml
from click.testing import CliRunner

from origamirc.cli import main, resolve_config
from origamirc.errors import ConfigError

FAST = {
    "design": {"n_rows": 5, "n_cols": 5},
    "pattern": {
        "teacher_duration": 2.0,
        "washout": 0.5,
        "train_window": 1.0,
        "eval_duration": 0.5,
        "eval_window": 100,
        "clean_tail": 0.2,
    },
    "emulation": {
        "duration": 3.0,
        "washout": 1.0,
        "train_window": 1.5,
        "test_window": 0.5,
    },
    "crawler": {
        "train_duration": 2.0,
        "washout": 0.5,
        "clean_tail": 0.2,
    },
    "modulation": {
        "segments": [[0.0, 1.0], [1.2, 0.5]],
        "teacher_duration": 2.0,
        "washout": 0.5,
        "train_window": 1.0,
        "eval_duration": 0.5,
        "eval_window": 100,
    },
}


@pytest.fixture(scope="module")
def config_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "fast.yaml"
    path.write_text(yaml.safe_dump(FAST))
    return str(path)


@pytest.fixture()
def runner():
    return CliRunner()


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def csv_rows(path):
    with open(path) as fh:
        return fh.read().strip().splitlines()


class TestResolveConfig:
    def test_defaults_standalone(self):
        cfg = resolve_config()
        assert cfg["design"]["n_rows"] == 9
        assert cfg["sim"]["dt"] == 1e-3
        assert cfg["seed"] == 0

    def test_file_overlays_defaults(self, config_file):
        cfg = resolve_config(config_file)
        assert cfg["design"]["n_rows"] == 5
        assert cfg["design"]["a"] == 0.016          # untouched default
        assert cfg["pattern"]["teacher_duration"] == 2.0

    def test_flag_overrides_win(self, config_file):
        cfg = resolve_config(config_file, {"seed": 7, "sim": {"dt": 5e-4}})
        assert cfg["seed"] == 7
        assert cfg["sim"]["dt"] == 5e-4

    def test_unknown_key_names_path(self):
        with pytest.raises(ConfigError, match="design.gama"):
            resolve_config(None, {"design": {"gama": 0.5}})

    def test_non_mapping_section_rejected(self):
        with pytest.raises(ConfigError, match="design"):
            resolve_config(None, {"design": 3})


class TestSimulate:
    def test_writes_trace_and_manifest(self, runner, config_file, tmp_path):
        out = tmp_path / "run"
        res = runner.invoke(main, ["simulate", "--config", config_file,
                                   "--duration", "0.2",
                                   "--out-dir", str(out)])
        assert res.exit_code == 0
        manifest = read_json(out / "manifest.json")
        assert manifest["command"] == "simulate"
        assert "trace.csv" in manifest["outputs"]
        rows = csv_rows(out / "trace.csv")
        # 201 records decimated by the default written-trace stride of 10
        assert len(rows) == 1 + 21
        assert rows[0].startswith("t,phi_")

    def test_dt_override_doubles_rows(self, runner, config_file, tmp_path):
        out = tmp_path / "run"
        res = runner.invoke(main, ["simulate", "--config", config_file,
                                   "--duration", "0.2", "--dt", "5e-4",
                                   "--out-dir", str(out)])
        assert res.exit_code == 0
        assert len(csv_rows(out / "trace.csv")) == 1 + 41

    def test_invalid_design_exit_2(self, runner, tmp_path):
        bad = tmp_path / "bad.yaml"
        bad.write_text("design: {gamma: 0.0}\n")
        res = runner.invoke(main, ["simulate", "--config", str(bad),
                                   "--out-dir", str(tmp_path / "r")])
        assert res.exit_code == 2
        assert "design.gamma" in res.output

    def test_unknown_field_exit_2(self, runner, tmp_path):
        bad = tmp_path / "bad.yaml"
        bad.write_text("design: {gama: 0.5}\n")
        res = runner.invoke(main, ["simulate", "--config", str(bad),
                                   "--out-dir", str(tmp_path / "r")])
        assert res.exit_code == 2
        assert "design.gama" in res.output


class TestPattern:
    def test_run_and_report(self, runner, config_file, tmp_path):
        out = tmp_path / "run"
        res = runner.invoke(main, ["pattern", "--config", config_file,
                                   "--task", "quad_lc",
                                   "--out-dir", str(out)])
        assert res.exit_code == 0
        report = read_json(out / "mse_report.json")
        assert report["task"] == "quad_lc"
        assert report["failed"] is False
        assert np.isfinite(report["closed_mse"])
        rows = csv_rows(out / "outputs.csv")
        assert rows[0] == "t,out0,out1,ref0,ref1"
        assert (out / "weights.json").exists()

    def test_rerun_bit_identical(self, runner, config_file, tmp_path):
        first = tmp_path / "first"
        res = runner.invoke(main, ["pattern", "--config", config_file,
                                   "--task", "quad_lc",
                                   "--out-dir", str(first)])
        assert res.exit_code == 0
        second = tmp_path / "second"
        res = runner.invoke(main, ["rerun", "--manifest",
                                   str(first / "manifest.json"),
                                   "--out-dir", str(second)])
        assert res.exit_code == 0
        for name in ("outputs.csv", "weights.json", "mse_report.json"):
            assert (first / name).read_bytes() == (second / name).read_bytes()

    def test_diverged_loop_exit_3(self, runner, tmp_path):
        cfg = dict(FAST, pattern={**FAST["pattern"], "bound_factor": 1e-6})
        path = tmp_path / "tight.yaml"
        path.write_text(yaml.safe_dump(cfg))
        out = tmp_path / "run"
        res = runner.invoke(main, ["pattern", "--config", str(path),
                                   "--out-dir", str(out)])
        assert res.exit_code == 3
        report = read_json(out / "mse_report.json")
        assert report["failed"] is True
        assert not (out / "outputs.csv").exists()

    def test_outage_recorded_in_report(self, runner, config_file, tmp_path):
        out = tmp_path / "run"
        res = runner.invoke(main, ["pattern", "--config", config_file,
                                   "--task", "quad_lc",
                                   "--outage", "0.1,0.2",
                                   "--out-dir", str(out)])
        assert res.exit_code in (0, 3)
        report = read_json(out / "mse_report.json")
        assert report["outage"] == [0.1, 0.2]
        assert "recovery_mse" in report

    def test_bad_outage_exit_2(self, runner, config_file, tmp_path):
        res = runner.invoke(main, ["pattern", "--config", config_file,
                                   "--outage", "1,2,3",
                                   "--out-dir", str(tmp_path / "r")])
        assert res.exit_code == 2


class TestEmulate:
    def test_outputs(self, runner, config_file, tmp_path):
        out = tmp_path / "run"
        res = runner.invoke(main, ["emulate", "--config", config_file,
                                   "--out-dir", str(out)])
        assert res.exit_code == 0
        report = read_json(out / "mse_report.json")
        assert set(report["test_mse"]) == {"order2", "order10", "volterra"}
        for task in report["test_mse"]:
            assert (out / f"weights_{task}.json").exists()
        assert (out / "trace.csv").exists()


class TestModulate:
    def test_outputs_include_eps(self, runner, config_file, tmp_path):
        out = tmp_path / "run"
        res = runner.invoke(main, ["modulate", "--config", config_file,
                                   "--out-dir", str(out)])
        assert res.exit_code in (0, 3)
        report = read_json(out / "mse_report.json")
        assert report["task"] == "modulated_quad"
        if res.exit_code == 0:
            rows = csv_rows(out / "outputs.csv")
            assert rows[0] == "t,out0,out1,ref0,ref1,eps"


class TestSweep:
    def test_feedback_search_outputs(self, runner, config_file, tmp_path):
        out = tmp_path / "run"
        res = runner.invoke(main, ["sweep", "--config", config_file,
                                   "--kind", "feedback", "--n", "2",
                                   "--out-dir", str(out)])
        assert res.exit_code == 0
        rows = csv_rows(out / "results.csv")
        assert len(rows) == 1 + 2
        agg = read_json(out / "aggregates.json")
        assert agg["n_designs"] == 2
        assert "best_seed" in agg
        assert (out / "best_weights.json").exists()

    def test_jobs_do_not_change_results(self, runner, config_file,
                                        tmp_path):
        serial = tmp_path / "serial"
        parallel = tmp_path / "parallel"
        for out, jobs in ((serial, "1"), (parallel, "2")):
            res = runner.invoke(main, ["sweep", "--config", config_file,
                                       "--kind", "feedback", "--n", "2",
                                       "--jobs", jobs,
                                       "--out-dir", str(out)])
            assert res.exit_code == 0
        assert (serial / "results.csv").read_bytes() \
            == (parallel / "results.csv").read_bytes()

    def test_all_failed_exit_4(self, runner, tmp_path):
        cfg = dict(FAST, pattern={**FAST["pattern"], "bound_factor": 1e-6})
        path = tmp_path / "tight.yaml"
        path.write_text(yaml.safe_dump(cfg))
        res = runner.invoke(main, ["sweep", "--config", str(path),
                                   "--kind", "feedback", "--n", "2",
                                   "--out-dir", str(tmp_path / "r")])
        assert res.exit_code == 4

    def test_geometry_landscape_files(self, runner, config_file, tmp_path):
        cfg = dict(FAST)
        cfg["sweep"] = {"kind": "geometry", "ab_ratios": [1.6],
                        "gammas_deg": [48.0]}
        path = tmp_path / "geo.yaml"
        path.write_text(yaml.safe_dump(cfg))
        out = tmp_path / "run"
        res = runner.invoke(main, ["sweep", "--config", str(path),
                                   "--thetas", "60",
                                   "--out-dir", str(out)])
        assert res.exit_code == 0
        assert (out / "landscape_theta60.csv").exists()
        rows = csv_rows(out / "landscape_theta60.csv")
        assert len(rows) == 2                        # header + one gamma row

    def test_fraction_files(self, runner, config_file, tmp_path):
        cfg = dict(FAST)
        cfg["sweep"] = {"kind": "fraction", "fractions": [0.3],
                        "n_designs": 2}
        path = tmp_path / "frac.yaml"
        path.write_text(yaml.safe_dump(cfg))
        out = tmp_path / "run"
        res = runner.invoke(main, ["sweep", "--config", str(path),
                                   "--out-dir", str(out)])
        assert res.exit_code == 0
        assert (out / "results_frac30.csv").exists()
        assert (out / "aggregates_frac30.json").exists()


class TestCrawl:
    def test_train_only(self, runner, config_file, tmp_path):
        out = tmp_path / "run"
        res = runner.invoke(main, ["crawl", "--config", config_file,
                                   "--duration", "0",
                                   "--out-dir", str(out)])
        assert res.exit_code == 0
        report = read_json(out / "crawl_report.json")
        assert np.isfinite(report["train_mse"])
        assert not (out / "crawl_log.csv").exists()

    def test_crawl_log_and_no_anchors(self, runner, config_file, tmp_path):
        out = tmp_path / "run"
        res = runner.invoke(main, ["crawl", "--config", config_file,
                                   "--duration", "0.5", "--no-anchors",
                                   "--out-dir", str(out)])
        assert res.exit_code == 0
        report = read_json(out / "crawl_report.json")
        assert report["use_anchors"] is False
        assert "displacement" in report
        rows = csv_rows(out / "crawl_log.csv")
        assert rows[0].startswith("t,centroid_x")


class TestRerun:
    def test_missing_manifest_keys_exit_2(self, runner, tmp_path):
        path = tmp_path / "manifest.json"
        path.write_text(json.dumps({"command": "simulate"}))
        res = runner.invoke(main, ["rerun", "--manifest", str(path),
                                   "--out-dir", str(tmp_path / "r")])
        assert res.exit_code == 2

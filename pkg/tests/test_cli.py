"""Command-line behavior: flag plumbing, error JSON, artifact layout."""

import json

import numpy as np
import pytest

from protofed.cli import main
from protofed.datagen import load_feature_files


def _run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def _fast_run_args(tmp_path, *extra):
    return ["run", "--n-samples", "160", "--n-classes", "3", "--n-clients", "4",
            "--rounds", "2", "--participation", "0.5", "--beta", "1.0",
            "--lr", "0.005", "--min-samples", "4", *extra,
            "--out", str(tmp_path / "run")]


def test_gen_data_round_trips(tmp_path, capsys):
    out = tmp_path / "data"
    code, stdout, _ = _run(capsys, "gen-data", "--out", str(out),
                           "--n-samples", "50", "--n-classes", "3", "--seed", "9")
    assert code == 0
    info = json.loads(stdout)
    assert info["n_samples"] == 50 and info["n_classes"] == 3
    ds = load_feature_files(info["manifest"])
    assert ds.n_samples == 50 and len(ds.features) == 2


def test_run_writes_artifacts_and_config_echo(tmp_path, capsys):
    code, stdout, _ = _run(capsys, *_fast_run_args(tmp_path))
    assert code == 0
    info = json.loads(stdout)
    run_dir = tmp_path / "run"
    assert info["out_dir"] == str(run_dir)
    echo = json.loads((run_dir / "config.json").read_text())
    assert echo["n_samples"] == 160 and echo["rounds"] == 2
    summary = json.loads((run_dir / "summary.json").read_text())
    assert summary["config"] == echo


def test_run_without_out_prints_summary(tmp_path, capsys):
    args = _fast_run_args(tmp_path)
    args = args[:-2]                       # drop --out
    code, stdout, _ = _run(capsys, *args)
    assert code == 0
    summary = json.loads(stdout)
    assert len(summary["rounds"]) == 2


def test_run_config_file_with_flag_override(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"n_samples": 160, "n_classes": 3,
                                    "n_clients": 4, "rounds": 5, "min_samples": 4,
                                    "participation": 0.5, "lr": 0.005}))
    code, stdout, _ = _run(capsys, "run", "--config", str(cfg_path),
                           "--rounds", "1")
    assert code == 0
    assert json.loads(stdout)["config"]["rounds"] == 1    # flag beats file


def test_unknown_config_key_rejected_with_json_error(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"learning_rate": 0.1}))
    code, _, stderr = _run(capsys, "run", "--config", str(cfg_path))
    assert code == 2
    err = json.loads(stderr)
    assert err["error"] == "ConfigError" and "learning_rate" in err["message"]


def test_invalid_value_rejected_with_json_error(tmp_path, capsys):
    code, _, stderr = _run(capsys, "run", "--q", "1.5")
    assert code == 2
    assert json.loads(stderr)["error"] == "ConfigError"


def test_usage_error_is_json(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["sweep", "--out", "x", "--axis", "bogus"])
    assert exc.value.code == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "UsageError"


def test_repeat_run_is_bit_identical(tmp_path, capsys):
    _run(capsys, *_fast_run_args(tmp_path / "a"))
    _run(capsys, *_fast_run_args(tmp_path / "b"))
    a = (tmp_path / "a" / "run" / "summary.json").read_bytes()
    b = (tmp_path / "b" / "run" / "summary.json").read_bytes()
    assert a == b


def test_sweep_over_q(tmp_path, capsys):
    code, stdout, _ = _run(capsys, "sweep", "--out", str(tmp_path / "sw"),
                           "--axis", "q", "--values", "0.0,1.0", "--seeds", "0,1",
                           "--n-samples", "160", "--n-classes", "3",
                           "--n-clients", "4", "--rounds", "1", "--min-samples", "4",
                           "--participation", "0.5", "--lr", "0.005")
    assert code == 0
    info = json.loads(stdout)
    assert info["runs"] == 4
    rows = (tmp_path / "sw" / "sweep.csv").read_text().splitlines()
    assert len(rows) == 5 and rows[0] == "q,seed,accuracy,macro_f1,uar"
    means = (tmp_path / "sw" / "sweep_summary.csv").read_text().splitlines()
    assert len(means) == 3
    assert (tmp_path / "sw" / "q_1.0_seed1" / "summary.json").exists()


def test_sweep_toggles_default_five_variants(tmp_path, capsys):
    code, stdout, _ = _run(capsys, "sweep", "--out", str(tmp_path / "tg"),
                           "--axis", "toggles", "--seeds", "0",
                           "--n-samples", "160", "--n-classes", "3",
                           "--n-clients", "4", "--rounds", "1", "--min-samples", "4",
                           "--participation", "0.5", "--lr", "0.005")
    assert code == 0
    assert json.loads(stdout)["runs"] == 5
    rows = (tmp_path / "tg" / "sweep.csv").read_text().splitlines()
    variants = [r.split(",")[0] for r in rows[1:]]
    assert variants == ["full", "no_cmpr", "no_cmpc", "no_cma", "none"]


def test_report_tabulates_runs(tmp_path, capsys):
    _run(capsys, *_fast_run_args(tmp_path))
    code, stdout, _ = _run(capsys, "report", str(tmp_path / "run"))
    assert code == 0
    lines = stdout.strip().splitlines()
    assert lines[0].startswith("run_dir,algorithm,seed")
    assert len(lines) == 2 and ",mfcpl," in lines[1]
    out_csv = tmp_path / "report.csv"
    code, stdout, _ = _run(capsys, "report", str(tmp_path / "run"),
                           "--out", str(out_csv))
    assert code == 0 and out_csv.exists()


def test_report_missing_dir_is_io_error_json(tmp_path, capsys):
    code, _, stderr = _run(capsys, "report", str(tmp_path / "nope"))
    assert code == 2
    assert json.loads(stderr)["error"] == "IOError"


def test_toggles_none_equals_fedavg(tmp_path, capsys):
    base = ["--n-samples", "160", "--n-classes", "3", "--n-clients", "4",
            "--rounds", "2", "--participation", "0.5", "--lr", "0.005",
            "--min-samples", "4", "--beta", "1.0"]
    _run(capsys, "run", *base, "--algorithm", "mfcpl", "--use-cmpr", "false",
         "--use-cmpc", "false", "--use-cma", "false", "--out", str(tmp_path / "m"))
    _run(capsys, "run", *base, "--algorithm", "fedavg", "--out", str(tmp_path / "f"))
    a = json.loads((tmp_path / "m" / "summary.json").read_text())
    b = json.loads((tmp_path / "f" / "summary.json").read_text())
    assert a["rounds"] == b["rounds"]
    am = np.fromfile(tmp_path / "m" / "checkpoint.bin")
    bm = np.fromfile(tmp_path / "f" / "checkpoint.bin")
    assert np.array_equal(am, bm)


def test_q_one_singleton_run_completes(tmp_path, capsys):
    code, stdout, _ = _run(capsys, *_fast_run_args(tmp_path, "--q", "1.0"))
    assert code == 0

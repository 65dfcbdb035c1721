from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np
import pytest
from typer.testing import CliRunner

import cli.cli as cli_module
from core.parser import SeriesReader

runner = CliRunner()
ANSI_ESCAPE_RE = re.compile(r"\x1b\[[0-9;?]*[ -/]*[@-~]")


def _normalize_terminal_output(text: str) -> str:
    # Rich/Click can inject ANSI styling differently across environments.
    return ANSI_ESCAPE_RE.sub("", text)


def _invoke(*args: str, **kwargs):
    return runner.invoke(cli_module.app, ["--no-progress", *args], **kwargs)


@pytest.fixture(scope="module")
def simulated(tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("sim") / "x.csv"
    result = _invoke(
        "simulate", "--design", "example1", "--p", "2", "--q", "3", "--T", "200",
        "--seed", "4", "--output", str(out), "--truth",
    )
    assert result.exit_code == 0, result.output
    return out


def test_help_includes_commands() -> None:
    result = runner.invoke(cli_module.app, ["--help"], color=False)
    output = _normalize_terminal_output(result.output)
    assert result.exit_code == 0
    for command in ("simulate", "segment", "transform", "forecast", "bench"):
        assert command in output
    assert re.search(r"-+\s*debug\b", output, flags=re.IGNORECASE)
    assert re.search(r"-+\s*progress\b", output, flags=re.IGNORECASE)
    assert re.search(r"-+\s*no-progress\b", output, flags=re.IGNORECASE)
    assert re.search(r"-+\s*threads\b", output, flags=re.IGNORECASE)


def test_version_flag_shows_project_version(monkeypatch) -> None:
    monkeypatch.setattr(cli_module, "_project_version", lambda: "9.9.9")
    result = runner.invoke(cli_module.app, ["--version"])
    all_output = result.output + getattr(result, "stderr", "")
    assert result.exit_code == 0
    assert "9.9.9" in all_output


def test_simulate_writes_series_and_truth(simulated: Path) -> None:
    series = SeriesReader().read(simulated)
    assert series.dims == (200, 2, 3)
    truth = json.loads(simulated.with_name("x_truth.json").read_text(encoding="utf-8"))
    assert truth["kind"] == "truth"
    assert truth["config"]["design"] == "example1"
    # example1 has no closed-form conditional mean
    assert not simulated.with_name("x_cond_mean.csv").exists()


def test_simulate_is_deterministic(tmp_path: Path) -> None:
    for name in ("a.csv", "b.csv"):
        result = _invoke(
            "simulate", "--design", "example2", "--p", "1", "--q", "5", "--T", "30",
            "--seed", "9", "--output", str(tmp_path / name),
        )
        assert result.exit_code == 0, result.output
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_segment_reports_groups(simulated: Path, tmp_path: Path) -> None:
    out = tmp_path / "seg.json"
    result = _invoke(
        "segment", "--input", str(simulated), "--output", str(out), "--tau1", "5",
        "--selector", "threshold:0.5",
    )
    assert result.exit_code == 0, result.output
    assert "Segmentation" in _normalize_terminal_output(result.output)
    doc = json.loads(out.read_text(encoding="utf-8"))
    assert doc["schema"] == "matseg/1"
    assert doc["config"]["selector"] == "threshold:0.5"
    assert sorted(k for g in doc["col_groups"] for k in g) == [0, 1, 2]
    assert doc["columns"]["eig_transform"] == "identity"


def test_transform_round_trip_through_saved_pair(simulated: Path, tmp_path: Path) -> None:
    latent, pair, back = tmp_path / "u.csv", tmp_path / "pair.json", tmp_path / "back.csv"
    result = _invoke(
        "transform", "--input", str(simulated), "--output", str(latent),
        "--save-pair", str(pair), "--tau1", "5",
    )
    assert result.exit_code == 0, result.output
    result = _invoke(
        "transform", "--input", str(latent), "--output", str(back),
        "--pair", str(pair), "--inverse",
    )
    assert result.exit_code == 0, result.output
    reader = SeriesReader()
    np.testing.assert_allclose(reader.read(back).values, reader.read(simulated).values, atol=1e-6)


def test_inverse_without_pair_is_a_validation_error(simulated: Path, tmp_path: Path) -> None:
    result = _invoke(
        "transform", "--input", str(simulated), "--output", str(tmp_path / "o.csv"), "--inverse"
    )
    assert result.exit_code == 2
    assert "--pair" in _normalize_terminal_output(result.output)


def test_forecast_against_conditional_means(tmp_path: Path) -> None:
    series = tmp_path / "x3.csv"
    result = _invoke(
        "simulate", "--design", "example3", "--p", "6", "--q", "6", "--T", "90",
        "--seed", "1", "--output", str(series),
    )
    assert result.exit_code == 0, result.output
    cond_mean = tmp_path / "x3_cond_mean.csv"
    assert cond_mean.exists()

    out = tmp_path / "fc.json"
    result = _invoke(
        "forecast", "--input", str(series), "--truth-mean", str(cond_mean),
        "--holdout", "3", "--baselines", "ar1", "--tau1", "5", "--output", str(out),
    )
    assert result.exit_code == 0, result.output
    doc = json.loads(out.read_text(encoding="utf-8"))
    assert set(doc["mse"]) == {"segmentation", "ar1"}
    assert doc["reports"]["segmentation"]["truth_kind"] == "conditional-mean"
    assert doc["reports"]["segmentation"]["targets"] == [87, 88, 89]
    assert (tmp_path / "fc_steps.csv").exists()
    assert (tmp_path / "fc_weekly.csv").exists()


def test_bench_is_reproducible(tmp_path: Path) -> None:
    docs = []
    for name in ("one.json", "two.json"):
        out = tmp_path / name
        result = _invoke(
            "bench", "--table", "1", "--cell", "q3p2,T150", "--reps", "2",
            "--seed", "5", "--output", str(out),
        )
        assert result.exit_code == 0, result.output
        docs.append(json.loads(out.read_text(encoding="utf-8")))
    assert docs[0] == docs[1]
    assert docs[0]["report"]["n_reps"] == 2
    assert docs[0]["config"]["q"] == 3
    assert (tmp_path / "one_summary.csv").exists()
    assert (tmp_path / "one_summary.xlsx").exists()


def test_invalid_parameter_exits_with_validation_code(simulated: Path) -> None:
    result = _invoke("segment", "--input", str(simulated), "--c-r", "1.5")
    assert result.exit_code == 2
    assert "Validation error" in _normalize_terminal_output(result.output)


def test_malformed_csv_exits_with_data_code(tmp_path: Path) -> None:
    bad = tmp_path / "bad.csv"
    bad.write_text("t,row,col,value\n1,1,1,0\n1,1,1,1\n", encoding="utf-8")
    result = _invoke("segment", "--input", str(bad))
    assert result.exit_code == 3
    assert "Data error" in _normalize_terminal_output(result.output)


def test_missing_input_file_is_a_usage_error(tmp_path: Path) -> None:
    result = _invoke("segment", "--input", str(tmp_path / "absent.csv"))
    assert result.exit_code == 2


def test_config_file_overrides_flags(simulated: Path, tmp_path: Path) -> None:
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"c_r": 2.0}), encoding="utf-8")
    result = runner.invoke(
        cli_module.app,
        ["--no-progress", "--config", str(cfg), "segment", "--input", str(simulated), "--c-r", "0.5"],
    )
    assert result.exit_code == 2


def test_threads_env_var_is_validated(simulated: Path) -> None:
    result = _invoke("segment", "--input", str(simulated), env={"MATSEG_THREADS": "0"})
    assert result.exit_code == 2

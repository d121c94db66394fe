"""Integration tests for the ``splitloc`` command line."""

import csv
import json
from pathlib import Path

import pytest

from src.cli import EXIT_CONFIG, EXIT_FAILURE, EXIT_INSUFFICIENT, EXIT_OK, main
from src.services.dnn_graph import CUT_NAMES

ROOT = Path(__file__).resolve().parents[2]
MEASUREMENTS = ROOT / "data" / "split_measurements.csv"
SCENARIOS = ROOT / "scenarios"


def run(tmp_path: Path, *args: str) -> int:
    return main(["--output-dir", str(tmp_path), *args])


def read_csv(path: Path) -> list[dict[str, str]]:
    with path.open() as fh:
        return list(csv.DictReader(fh))


def last_line(capsys) -> str:
    return capsys.readouterr().out.strip().splitlines()[-1]


def test_describe_model(tmp_path):
    """Test the model table has one row per cut."""
    assert run(tmp_path, "describe-model") == EXIT_OK
    rows = read_csv(tmp_path / "model.csv")
    assert [r["cut"] for r in rows] == list(CUT_NAMES)
    assert rows[0]["payload_bytes"] == "602112"
    assert rows[0]["prefix_flops"] == "0"


def test_flags_after_subcommand(tmp_path):
    """Test model flags are accepted after the subcommand too."""
    out = tmp_path / "small.csv"
    code = main(["describe-model", "--res", "56", "--out", str(out)])
    assert code == EXIT_OK
    assert read_csv(out)[0]["out_shape"] == "3x56x56"


def test_bad_resolution(tmp_path):
    """Test unsupported resolutions are configuration errors."""
    assert run(tmp_path, "--res", "57", "describe-model") == EXIT_CONFIG


def test_unknown_flag(tmp_path):
    """Test argparse usage errors exit with code 2."""
    with pytest.raises(SystemExit) as exc_info:
        run(tmp_path, "describe-model", "--bogus")
    assert exc_info.value.code == 2


def test_calibrate_bundled_measurements(tmp_path, capsys):
    """Test calibrating on the bundled measurements picks full offload."""
    assert run(tmp_path, "calibrate", "--measurements", str(MEASUREMENTS)) == EXIT_OK
    assert last_line(capsys) == "null"

    fit = json.loads((tmp_path / "profile.json").read_text())
    assert fit["profile"]["c_client"] > fit["profile"]["c_server"]
    plan_rows = read_csv(tmp_path / "plan.csv")
    assert len(plan_rows) == len(CUT_NAMES)
    assert next(r for r in plan_rows if r["rank"] == "1")["cut"] == "null"


def test_plan_from_measurements(tmp_path, capsys):
    """Test plan can calibrate first."""
    code = run(tmp_path, "plan", "--measurements", str(MEASUREMENTS), "--single-frame")
    assert code == EXIT_OK
    assert last_line(capsys) == "null"


def test_plan_from_profile(tmp_path, capsys):
    """Test plan with an explicit profile on a slow link."""
    profile = tmp_path / "profile.json"
    profile.write_text(json.dumps({"c_client": 0.1, "c_server": 0.1, "bandwidth": 1000.0}))
    assert run(tmp_path, "plan", "--profile", str(profile)) == EXIT_OK
    assert last_line(capsys) == "avgpool"

    profile.write_text(json.dumps({"c_client": 0.1, "c_server": 0.1}))
    assert run(tmp_path, "plan", "--profile", str(profile)) == EXIT_CONFIG


def test_calibrate_too_few_cuts(tmp_path):
    """Test four measured cuts are not enough to calibrate."""
    short = tmp_path / "short.csv"
    lines = MEASUREMENTS.read_text().splitlines()[:5]
    short.write_text("\n".join(lines) + "\n")
    assert run(tmp_path, "calibrate", "--measurements", str(short)) == EXIT_INSUFFICIENT


def test_calibrate_missing_file(tmp_path):
    """Test a missing measurement file is a configuration error."""
    missing = tmp_path / "missing.csv"
    assert run(tmp_path, "calibrate", "--measurements", str(missing)) == EXIT_CONFIG


def test_simulate_frame_drop(tmp_path, capsys):
    """Test the bundled frame-drop scenarios."""
    assert run(tmp_path, "simulate", str(SCENARIOS / "frame_drop.json")) == EXIT_OK
    out = capsys.readouterr().out
    assert "local_drop: 10 poses, 290 dropped" in out
    assert "offload_drop: 38 poses, 262 dropped" in out
    assert "local_block: 20 poses, 0 dropped" in out
    assert (tmp_path / "local_jitter_report.csv").exists()


def test_simulate_route_coverage(tmp_path):
    """Test offloading covers about four times the route in the same wall time."""
    assert run(tmp_path, "simulate", str(SCENARIOS / "route_coverage.json")) == EXIT_OK
    rows = read_csv(tmp_path / "coverage.csv")
    at_300 = {r["label"]: float(r["covered_distance_m"]) for r in rows
              if float(r["wall_time_s"]) == 300.0}
    assert at_300["offload"] > at_300["local"]
    assert at_300["offload"] / at_300["local"] == pytest.approx(1199 / 299, rel=1e-6)


def test_simulate_rejects_empty_config(tmp_path):
    """Test an empty simulation config exits with code 2."""
    empty = tmp_path / "empty.json"
    empty.write_text("{}")
    assert run(tmp_path, "simulate", str(empty)) == EXIT_CONFIG


def test_fuse(tmp_path):
    """Test the bundled averaging study improves on both streams."""
    assert run(tmp_path, "fuse", str(SCENARIOS / "pose_averaging.json")) == EXIT_OK
    summary = {r["stream"]: float(r["mean"]) for r in read_csv(tmp_path / "summary.csv")}
    assert summary["fused"] < summary["gps"]
    assert summary["fused"] < summary["dnn"]


def test_fuse_rejects_bad_configs(tmp_path):
    """Test empty files, empty objects and unknown fields exit with code 2."""
    empty = tmp_path / "empty.json"
    empty.write_text("")
    assert run(tmp_path, "fuse", str(empty)) == EXIT_CONFIG

    empty.write_text("{}")
    assert run(tmp_path, "fuse", str(empty)) == EXIT_CONFIG
    assert not (tmp_path / "summary.csv").exists()

    unknown = tmp_path / "unknown.json"
    unknown.write_text(json.dumps({"gps": {"sigma_m": 7.0, "noise": 1}}))
    assert run(tmp_path, "fuse", str(unknown)) == EXIT_CONFIG


def test_golden_is_reproducible(tmp_path):
    """Test checksums are identical across runs."""
    first, second = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run(tmp_path, "--res", "56", "golden", "--out", str(first)) == EXIT_OK
    assert run(tmp_path, "--res", "56", "golden", "--out", str(second)) == EXIT_OK
    assert first.read_bytes() == second.read_bytes()
    cuts = [r["cut"] for r in read_csv(first)]
    assert cuts == [*CUT_NAMES, "end", "conv1.weight"]
    frozen = read_csv(ROOT / "data" / "golden.csv")[0]
    assert read_csv(first)[-1] == frozen


def test_bench_local(tmp_path):
    """Test the local benchmark writes a calibration-ready CSV."""
    out = tmp_path / "bench.csv"
    code = run(tmp_path, "--res", "56", "bench-local", "--frames", "1",
               "--cut", "null", "--cut", "fc", "--out", str(out))
    assert code == EXIT_OK
    assert [r["cut"] for r in read_csv(out)] == ["null", "fc"]

    assert run(tmp_path, "--res", "56", "bench-local", "--cut", "layer9") == EXIT_CONFIG


def test_client_without_server(tmp_path, monkeypatch, dead_url):
    """Test a client run against a dead server ends incomplete with code 1."""
    monkeypatch.setenv("SPLITLOC_RETRY_BACKOFF_S", "0.01")
    server = dead_url.removeprefix("http://")
    code = run(tmp_path, "--res", "56", "client", "--server", server, "--frames", "1")
    assert code == EXIT_FAILURE
    assert (tmp_path / "client_timings.csv").exists()

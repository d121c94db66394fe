"""Tests for latency prediction, calibration and cut selection."""

import math
from pathlib import Path

import numpy as np
import pytest

from src.core.errors import InsufficientDataError, InvalidArgumentError, ParseError
from src.schemas.planner import CostProfile, CutMeasurement
from src.services.dnn_graph import CUT_NAMES, build_backbone
from src.services.split_planner import (
    calibrate,
    load_measurements_csv,
    plan,
    predict_latency,
    write_measurements_csv,
    write_plan_csv,
)

MEASUREMENTS_CSV = Path(__file__).resolve().parents[2] / "data" / "split_measurements.csv"


@pytest.fixture(scope="module")
def graph():
    return build_backbone(224, 2048)


@pytest.fixture
def profile() -> CostProfile:
    """Slow device, fast server, 10 MB/s link."""
    return CostProfile(
        c_client=0.25,
        c_server=0.02,
        bandwidth=1e7,
        rtt_overhead=0.005,
        preprocess=0.01,
        response_bytes=56,
    )


def test_predict_latency_null(graph, profile):
    """Test the full-offload prediction for the reference profile."""
    assert predict_latency(graph, profile, "null") == pytest.approx(0.2213, rel=0.01)


def test_predict_latency_conv1_slower(graph, profile):
    """Test shipping the conv1 activation costs more than shipping the frame."""
    assert predict_latency(graph, profile, "conv1") > predict_latency(graph, profile, "null")


def test_predict_latency_unknown_cut(graph, profile):
    """Test unknown cuts are rejected."""
    with pytest.raises(InvalidArgumentError):
        predict_latency(graph, profile, "layer9")


def test_predict_latency_monotone_without_link(graph):
    """Test with a free link, later cuts cost more when the device is slower."""
    profile = CostProfile(c_client=0.3, c_server=0.01, bandwidth=math.inf)
    latencies = [predict_latency(graph, profile, cut) for cut in CUT_NAMES]
    assert all(b > a for a, b in zip(latencies, latencies[1:]))


def test_plan_reference_profile(graph, profile):
    """Test full offload wins for the reference profile."""
    split_plan = plan(graph, profile)
    assert split_plan.best_cut == "null"
    assert sorted(split_plan.ranking) == sorted(CUT_NAMES)
    assert split_plan.predicted[split_plan.best_cut] == min(split_plan.predicted.values())


def test_plan_slow_link(graph):
    """Test a slow link with equal compute picks the smallest activation."""
    profile = CostProfile(c_client=0.1, c_server=0.1, bandwidth=1e3)
    split_plan = plan(graph, profile)
    # avgpool ships 2048 bytes, fc ships 8192
    assert split_plan.best_cut == "avgpool"
    assert split_plan.ranking[1] == "fc"


def test_plan_free_server(graph):
    """Test a free server and link make full offload optimal."""
    profile = CostProfile(c_client=0.2, c_server=0.0, bandwidth=math.inf)
    assert plan(graph, profile).best_cut == "null"


def test_plan_ties_prefer_earlier_cut(graph):
    """Test equal predictions keep cut order."""
    profile = CostProfile(c_client=0.0, c_server=0.0, bandwidth=math.inf, rtt_overhead=0.01)
    assert plan(graph, profile).ranking == list(CUT_NAMES)


@pytest.mark.parametrize("factor", [0.5, 3.0, 17.0])
def test_plan_ranking_scale_invariant(graph, profile, factor):
    """Test uniform scaling of every time term keeps the ranking."""
    assert plan(graph, profile.scaled(factor)).ranking == plan(graph, profile).ranking


def synthetic_measurements(graph, profile, noise: float = 0.0, seed: int = 0):
    rng = np.random.default_rng(seed)
    return [
        CutMeasurement(
            cut_name=cut,
            mean_latency=predict_latency(graph, profile, cut) * (1 + noise * rng.standard_normal()),
        )
        for cut in CUT_NAMES
    ]


def test_calibrate_recovers_profile(graph, profile):
    """Test noise-free measurements recover the generating profile."""
    overhead = profile.rtt_overhead + profile.preprocess
    result = calibrate(graph, synthetic_measurements(graph, profile), overhead_s=overhead)

    fitted = result.profile
    assert fitted.c_client == pytest.approx(profile.c_client, rel=0.01)
    assert fitted.c_server == pytest.approx(profile.c_server, rel=0.01)
    assert fitted.bandwidth == pytest.approx(profile.bandwidth, rel=0.01)
    assert fitted.rtt_overhead + fitted.preprocess == pytest.approx(overhead)
    assert result.residual_norm < 1e-8
    assert result.spearman_rho == pytest.approx(1.0)
    for cut in CUT_NAMES:
        assert predict_latency(graph, fitted, cut) == pytest.approx(
            predict_latency(graph, profile, cut), rel=1e-6
        )


def test_calibrate_noisy_keeps_best_cut(graph, profile):
    """Test 5% multiplicative noise rarely changes the chosen cut."""
    overhead = profile.rtt_overhead + profile.preprocess
    agree = 0
    for seed in range(100):
        measurements = synthetic_measurements(graph, profile, noise=0.05, seed=seed)
        result = calibrate(graph, measurements, overhead_s=overhead)
        agree += plan(graph, result.profile).best_cut == "null"
    assert agree >= 95


def test_calibrate_bundled_measurements(graph):
    """Test the bundled split measurements fit with full offload as the best cut."""
    measurements = load_measurements_csv(MEASUREMENTS_CSV)
    assert len(measurements) == 11

    result = calibrate(graph, measurements)
    assert plan(graph, result.profile).best_cut == "null"
    assert result.spearman_rho >= 0.8
    assert set(result.residuals) == set(CUT_NAMES)
    assert result.notes

    weighted = calibrate(graph, measurements, include_single_frame=True)
    assert weighted.residual_norm > 0
    assert plan(graph, weighted.profile).best_cut == "null"


def test_calibrate_needs_five_cuts(graph, profile):
    """Test fewer than five distinct cuts is insufficient data."""
    measurements = synthetic_measurements(graph, profile)[:4]
    with pytest.raises(InsufficientDataError):
        calibrate(graph, measurements)
    repeated = measurements + measurements
    with pytest.raises(InsufficientDataError):
        calibrate(graph, repeated)


def test_calibrate_rejects_bad_input(graph, profile):
    """Test negative overheads and unknown cuts are rejected."""
    measurements = synthetic_measurements(graph, profile)
    with pytest.raises(InvalidArgumentError):
        calibrate(graph, measurements, overhead_s=-1.0)
    bad = [*measurements, CutMeasurement(cut_name="layer9", mean_latency=1.0)]
    with pytest.raises(InvalidArgumentError):
        calibrate(graph, bad)


def test_measurements_csv_roundtrip(tmp_path, graph, profile):
    """Test measurement files round-trip and tolerate a missing header."""
    measurements = load_measurements_csv(MEASUREMENTS_CSV)
    path = tmp_path / "nested" / "measurements.csv"
    write_measurements_csv(measurements, path)
    assert load_measurements_csv(path) == measurements

    headerless = tmp_path / "headerless.csv"
    headerless.write_text("NULL,0.5\nconv1,1.0,\n")
    loaded = load_measurements_csv(headerless)
    assert [m.cut_name for m in loaded] == ["null", "conv1"]
    assert loaded[1].single_frame is None


def test_measurements_csv_errors(tmp_path):
    """Test malformed rows report their line."""
    path = tmp_path / "bad.csv"
    path.write_text("cut,mean_latency_s\nnull,fast\n")
    with pytest.raises(ParseError) as exc_info:
        load_measurements_csv(path)
    assert exc_info.value.line == 2

    path.write_text("cut,mean_latency_s\nnull,0.5,0.6,0.7\n")
    with pytest.raises(ParseError):
        load_measurements_csv(path)


def test_write_plan_csv(tmp_path, graph, profile):
    """Test the plan report has one ranked row per cut."""
    path = tmp_path / "plan.csv"
    write_plan_csv(plan(graph, profile), path)
    lines = path.read_text().splitlines()
    assert lines[0] == "cut,predicted_s,rank"
    assert [line.split(",")[0] for line in lines[1:]] == list(CUT_NAMES)
    assert lines[1].endswith(",1")

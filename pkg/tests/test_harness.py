import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twostage.config import campaign_from_config, parse_grid, read_config, ts_config_from_config
from twostage.core import ConfigurationError
from twostage.harness import (
    CampaignSpec,
    RunRecord,
    TimingRecord,
    aggregate_runs,
    read_runs,
    run_bench,
    run_consistency,
    run_normality,
    summarize_timings,
    write_runs,
    write_summary,
)


def small_consistency(**kw):
    base = dict(grid=((200, 200), (400, 400)), runs=20, crb_records=2000)
    base.update(kw)
    return CampaignSpec("consistency", **base)


def runs_from_errors(errors):
    return [RunRecord(0, 10, 100, r, "ts", 5.0, 5.0 + e, e, 10 * e) for r, e in enumerate(errors)]


def test_single_run_mse_is_squared_error():
    s = run_consistency(small_consistency(runs=1))
    for cell, run in zip(s.cells, s.runs):
        assert cell.mse == run.error**2
        assert cell.variance == 0.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=60))
def test_mse_splits_into_bias_and_variance(errors):
    (cell,) = aggregate_runs(runs_from_errors(errors), small_consistency())
    assert cell.mse == pytest.approx(cell.bias**2 + cell.variance, rel=1e-9, abs=1e-12)
    assert cell.variance >= 0


def test_failed_runs_are_excluded_from_moments():
    runs = runs_from_errors([0.5, -0.5])
    runs.append(RunRecord(0, 10, 100, 2, "ts", 5.0, math.nan, math.nan, math.nan, "failed:DomainError"))
    (cell,) = aggregate_runs(runs, small_consistency())
    assert (cell.n_ok, cell.n_failed, cell.mse, cell.bias) == (2, 1, 0.25, 0.0)


def test_summary_is_reaggregated_from_runs_file(tmp_path):
    s = run_consistency(small_consistency())
    write_summary(tmp_path, s)
    again = aggregate_runs(read_runs(tmp_path / "runs.csv"), s.spec)
    assert again == s.cells
    assert read_runs(tmp_path / "runs.csv") == s.runs


def test_failed_cell_is_recorded():
    s = run_consistency(small_consistency(grid=((50, 3), (200, 200)), runs=5))
    assert s.cells[0].n_failed == 5 and s.cells[0].n_ok == 0
    assert all(r.status.startswith("failed:") for r in s.runs if r.cell == 0)
    assert s.cells[1].n_ok == 5


def test_campaign_is_deterministic():
    a = run_consistency(small_consistency())
    b = run_consistency(small_consistency())
    assert a.runs == b.runs and a.cells == b.cells


def test_worker_count_does_not_change_results():
    a = run_consistency(small_consistency(jobs=1))
    b = run_consistency(small_consistency(jobs=3))
    assert a.runs == b.runs and a.cells == b.cells


def test_crb_columns_present_for_snr_campaigns():
    cell = run_consistency(small_consistency(runs=2)).cells[0]
    assert cell.crb_paper == 500 / 200
    assert cell.crb_independent == pytest.approx(50 / 200, rel=0.15)


class ConstantEstimator:
    def predict_one(self, record):
        return np.array([5.0])


def test_normality_with_constant_estimator_is_degenerate():
    spec = CampaignSpec("normality", grid=((100, 200),), runs=30, crb_records=1000)
    s = run_normality(spec, estimator=ConstantEstimator())
    stats = {row[0]: row[1] for row in s.statistics}
    assert stats["degenerate"] == 1.0
    assert math.isnan(stats["skewness"]) and math.isnan(stats["ks_distance"])


def test_timing_summary_counts_outliers():
    xs = [10.0] * 20 + [1000.0]
    (t,) = summarize_timings([TimingRecord("x", 1, i, v) for i, v in enumerate(xs)])
    assert t.n == 21 and t.median_us == 10.0 and t.n_outliers == 1


def test_bench_latency_scales_with_record_length():
    spec = CampaignSpec("bench", grid=((1000, 10_000),), runs=1,
                        bench_methods=("ts-quantile", "ts-quantile-2n"), warmup=30, repeats=300)
    table = {t.method: t for t in run_bench(spec).timing_table()}
    ratio = table["ts-quantile-2n"].median_us / table["ts-quantile"].median_us
    assert 1.5 <= ratio <= 3.0, ratio


def test_bench_requires_enough_repetitions():
    with pytest.raises(ConfigurationError):
        CampaignSpec("bench", warmup=5)
    with pytest.raises(ConfigurationError):
        CampaignSpec("bench", bench_methods=("magic",))


def test_spec_validation():
    with pytest.raises(ConfigurationError):
        CampaignSpec("consistency", runs=0)
    with pytest.raises(ConfigurationError):
        CampaignSpec("nope")
    with pytest.raises(ConfigurationError):
        CampaignSpec("consistency", grid=())


def test_runs_file_roundtrip_keeps_nan(tmp_path):
    runs = [RunRecord(1, 2, 3, 0, "ts", 0.25, math.nan, math.nan, math.nan, "failed:X")]
    write_runs(tmp_path / "r.csv", runs)
    (back,) = read_runs(tmp_path / "r.csv")
    assert back.status == "failed:X" and math.isnan(back.theta_hat) and back.theta0 == 0.25


def test_parse_grid():
    assert parse_grid("100x100, 1000X2000") == ((100, 100), (1000, 2000))
    with pytest.raises(ConfigurationError):
        parse_grid("100")
    with pytest.raises(ConfigurationError):
        parse_grid(" , ")


def test_config_file_overrides(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text(
        "[campaign]\ngrid = 50x60\nruns = 7  # comment\nseed = 11\n"
        "[prior]\nlower = 3\nupper = 9\n[second_stage]\ndegree = 1\n"
    )
    spec = campaign_from_config(read_config(path), "consistency", runs=9)
    assert spec.grid == ((50, 60),) and spec.runs == 9 and spec.seed == 11 and spec.degree == 1
    assert spec.prior.lower == (3.0,)
    ts = ts_config_from_config(read_config(path), m=40, N=30)
    assert (ts.m, ts.N, ts.prior.upper) == (40, 30, (9.0,))


@pytest.mark.parametrize("text", ["[bogus]\nx = 1\n", "[campaign]\nruns = many\n", "[model]\nkind = other\n"])
def test_config_errors(tmp_path, text):
    path = tmp_path / "c.ini"
    path.write_text(text)
    with pytest.raises(ConfigurationError):
        cfg = read_config(path)
        campaign_from_config(cfg, "consistency")
        ts_config_from_config(cfg)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigurationError):
        read_config(tmp_path / "absent.ini")

import math
import statistics

import pytest

from slfvlab.stats import (MeanReport, difference_z, fsum_by_key, mean_report,
                           wilson_interval)


def test_mean_report_matches_statistics_module():
    vals = [0.3, 1.7, -0.2, 4.4, 2.2, 0.0, -1.3]
    rep = mean_report(vals)
    assert rep.n == len(vals)
    assert rep.mean == pytest.approx(statistics.fmean(vals), rel=1e-15)
    expected_se = statistics.stdev(vals) / math.sqrt(len(vals))
    assert rep.stderr == pytest.approx(expected_se, rel=1e-12)


def test_mean_report_edge_cases():
    with pytest.raises(ValueError):
        mean_report([])
    single = mean_report([2.5])
    assert single == MeanReport(2.5, 0.0, 1)
    # degenerate sample: stderr 0, z is 0 on target, inf off target
    flat = mean_report([1.0, 1.0, 1.0])
    assert flat.stderr == 0.0
    assert flat.z_against(1.0) == 0.0
    assert flat.z_against(0.9) == math.inf


def test_z_against_sign_and_scale():
    rep = MeanReport(mean=1.2, stderr=0.1, n=100)
    assert rep.z_against(1.0) == pytest.approx(2.0)
    assert rep.z_against(1.5) == pytest.approx(-3.0)


def test_difference_z_pools_standard_errors():
    a = MeanReport(1.0, 0.3, 50)
    b = MeanReport(0.5, 0.4, 50)
    assert difference_z(a, b) == pytest.approx(0.5 / 0.5)
    assert difference_z(b, a) == pytest.approx(-1.0)
    same = MeanReport(1.0, 0.0, 3)
    assert difference_z(same, MeanReport(1.0, 0.0, 3)) == 0.0
    assert difference_z(same, MeanReport(0.0, 0.0, 3)) == math.inf


def test_wilson_interval_frozen_example():
    # 7 successes in 20 trials at z=1.96: textbook Wilson bounds
    iv = wilson_interval(7, 20)
    assert iv.point == pytest.approx(0.35)
    assert iv.low == pytest.approx(0.1811895478679446, rel=1e-12)
    assert iv.high == pytest.approx(0.5671494897805353, rel=1e-12)
    assert iv.low < iv.point < iv.high


def test_wilson_interval_boundary_behaviour():
    zero = wilson_interval(0, 10)
    assert zero.low == 0.0
    assert zero.high > 0.0
    full = wilson_interval(10, 10)
    assert full.high == 1.0
    assert full.low < 1.0
    with pytest.raises(ValueError):
        wilson_interval(3, 0)
    with pytest.raises(ValueError):
        wilson_interval(11, 10)


def test_fsum_by_key_sorted_and_exact():
    pairs = [("b", 0.1)] * 10 + [("a", 1.0), ("c", -2.0), ("a", 0.5)]
    out = fsum_by_key(pairs)
    assert list(out) == ["a", "b", "c"]
    assert out["a"] == 1.5
    # fsum keeps ten copies of 0.1 exact where naive addition drifts
    assert out["b"] == 1.0
    assert out["c"] == -2.0

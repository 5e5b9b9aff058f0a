"""Pivot, CDF, KS, and aggregation diagnostics against scipy oracles."""

import numpy as np
import pytest
from scipy import integrate
from scipy import stats as sps

from streamgn import stats
from streamgn.stats import (
    MSE_COLUMNS,
    PivotSample,
    chi2_2_cdf,
    ks_critical_99,
    ks_statistic,
    mse_aggregate,
    pivot_cn,
    rate_slope,
    rows_to_csv,
    rows_to_text,
)


def test_chi2_cdf_matches_scipy():
    x = np.linspace(0.0, 25.0, 100)
    assert np.abs(chi2_2_cdf(x) - sps.chi2(2).cdf(x)).max() < 1e-12


def test_chi2_cdf_matches_density_integral():
    # second independent route: integrate the density 0.5 * exp(-t/2)
    for x in (0.3, 1.7, 4.0, 9.5):
        val, _ = integrate.quad(lambda t: 0.5 * np.exp(-t / 2.0), 0.0, x)
        assert chi2_2_cdf(x) == pytest.approx(val, abs=1e-10)


def test_chi2_cdf_rejects_negative_input():
    with pytest.raises(ValueError):
        chi2_2_cdf(np.array([0.5, -0.1]))


def test_ks_statistic_exact_for_quantile_sample():
    # plugging in the (i - 1/2)/N quantiles makes both one-sided gaps 0.5/N
    n = 10
    p = (np.arange(1, n + 1) - 0.5) / n
    sample = -2.0 * np.log1p(-p)
    assert ks_statistic(sample) == pytest.approx(0.5 / n, abs=1e-12)


def test_ks_statistic_exact_for_degenerate_sample():
    assert ks_statistic(np.zeros(8)) == pytest.approx(1.0)


def test_ks_statistic_matches_scipy_kstest():
    rng = np.random.default_rng(21)
    sample = rng.chisquare(2, size=500)
    ref = sps.kstest(sample, sps.chi2(2).cdf).statistic
    assert ks_statistic(sample) == pytest.approx(ref, abs=1e-12)


def test_ks_statistic_accepts_pivot_sample():
    values = np.random.default_rng(3).chisquare(2, size=64)
    wrapped = PivotSample(values=values, n_obs=100, algorithm="asgn")
    assert ks_statistic(wrapped) == ks_statistic(values)


def test_ks_statistic_rejects_empty_sample():
    with pytest.raises(ValueError):
        ks_statistic(np.array([]))


def test_ks_critical_value():
    assert ks_critical_99(1000) == pytest.approx(0.0516, abs=1e-4)
    with pytest.raises(ValueError):
        ks_critical_99(0)


def test_ks_critical_rejection_rate_under_the_null():
    # crude coverage check: the 99% critical value rejects rarely
    rng = np.random.default_rng(8)
    rejections = 0
    for _ in range(200):
        sample = rng.chisquare(2, size=400)
        if ks_statistic(sample) > ks_critical_99(400):
            rejections += 1
    assert rejections <= 8


def test_pivot_quadratic_form_value():
    m = np.array([[2.0, 0.5], [0.5, 1.0]])
    d = np.array([1.0, -2.0])
    expected = float(d @ m @ d)
    assert pivot_cn(d + 3.0, np.full(2, 3.0), m) == pytest.approx(expected)


def test_pivot_invariant_under_orthogonal_change_of_basis():
    rng = np.random.default_rng(13)
    q, _ = np.linalg.qr(rng.standard_normal((4, 4)))
    m = rng.standard_normal((4, 4))
    m = m @ m.T + np.eye(4)
    theta_hat = rng.standard_normal(4)
    theta = rng.standard_normal(4)
    base = pivot_cn(theta_hat, theta, m)
    rotated = pivot_cn(q @ theta_hat, q @ theta, q @ m @ q.T)
    assert rotated == pytest.approx(base, rel=1e-10)


def test_pivot_clips_rounding_negatives_and_rejects_real_ones():
    d = np.array([1.0, 0.0])
    tiny_negative = np.array([[-5e-11, 0.0], [0.0, 1.0]])
    assert pivot_cn(d, np.zeros(2), tiny_negative) == 0.0
    with pytest.raises(ValueError):
        pivot_cn(d, np.zeros(2), np.array([[-1.0, 0.0], [0.0, 1.0]]))


def test_pivot_rejects_dimension_mismatch():
    with pytest.raises(ValueError):
        pivot_cn(np.ones(3), np.zeros(3), np.eye(2))


def test_pivot_sample_validation():
    with pytest.raises(ValueError):
        PivotSample(values=np.array([1.0, -0.5]), n_obs=10, algorithm="sgn")
    with pytest.raises(ValueError):
        PivotSample(values=np.ones((2, 2)), n_obs=10, algorithm="sgn")
    with pytest.raises(ValueError):
        PivotSample(values=np.array([np.nan]), n_obs=10, algorithm="sgn")


def test_mse_aggregate_known_values():
    errors = np.array([[1.0, 2.0], [3.0, 4.0]])
    mean, stderr = mse_aggregate(errors)
    assert np.array_equal(mean, [2.0, 3.0])
    assert np.allclose(stderr, np.sqrt(2.0) / np.sqrt(2.0))


def test_mse_aggregate_single_replication_has_zero_stderr():
    mean, stderr = mse_aggregate(np.array([5.0, 6.0]))
    assert np.array_equal(mean, [5.0, 6.0])
    assert np.array_equal(stderr, [0.0, 0.0])


def test_mse_aggregate_mapping_input():
    out = mse_aggregate({"a": np.ones((3, 4)), "b": 2 * np.ones((5, 4))})
    assert set(out) == {"a", "b"}
    assert np.array_equal(out["a"][0], np.ones(4))
    assert np.array_equal(out["b"][0], 2 * np.ones(4))


def test_mse_aggregate_rejects_mismatched_grids():
    with pytest.raises(ValueError):
        mse_aggregate({"a": np.ones((3, 4)), "b": np.ones((3, 5))})
    with pytest.raises(ValueError):
        mse_aggregate([np.ones(3), np.ones(4)])


def test_rate_slope_recovers_exact_power_law():
    ns = np.geomspace(100, 100_000, 12)
    pairs = [(n, 7.0 * n ** -0.66) for n in ns]
    assert rate_slope(pairs) == pytest.approx(-0.66, abs=1e-12)


def test_rate_slope_validation():
    good_ns = np.geomspace(100, 100_000, 12)
    with pytest.raises(ValueError):
        rate_slope([(n, 1.0 / n) for n in good_ns[:4]])  # too few points
    with pytest.raises(ValueError):
        rate_slope([(n, 1.0 / n) for n in np.linspace(100, 900, 9)])  # < 2 decades
    with pytest.raises(ValueError):
        rate_slope([(n, 0.0) for n in good_ns])
    with pytest.raises(ValueError):
        rate_slope([(100.0, 1.0, 3.0)])


def test_rows_render_as_csv_and_text():
    rows = [
        dict(zip(MSE_COLUMNS, ("asgn", 1.0, 0.66, 0.0, 0.0, 1000, 0.25, 0.01))),
        dict(zip(MSE_COLUMNS, ("sgd", 5.0, 0.66, 0.0, 0.0, 1000, 1.5, 0.2))),
    ]
    text = rows_to_csv(rows)
    lines = text.strip().split("\n")
    assert lines[0] == ",".join(MSE_COLUMNS)
    assert len(lines) == 3
    assert float(lines[1].split(",")[6]) == 0.25
    pretty = rows_to_text(rows)
    assert "asgn" in pretty and "sgd" in pretty

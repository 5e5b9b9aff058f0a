"""Distributional diagnostics and Monte Carlo summaries.

The normalized error pivot (theta_hat - theta)^T M (theta_hat - theta),
with M the accumulated information matrix of the run, is asymptotically
chi-squared with q degrees of freedom when the noise variance is 1. For
q = 2 the chi-squared CDF has the closed form 1 - exp(-x/2), which anchors
the Kolmogorov-Smirnov diagnostics used by the experiment harness.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "PivotSample",
    "pivot_cn",
    "chi2_2_cdf",
    "ks_statistic",
    "ks_critical_99",
    "mse_aggregate",
    "rate_slope",
    "rows_to_csv",
    "rows_to_text",
    "MSE_COLUMNS",
]

# a quadratic form may round to a tiny negative value; beyond this it is a bug
PIVOT_NEGATIVE_TOL = -1e-10

MSE_COLUMNS = ("algorithm", "c_alpha", "alpha", "c_beta", "beta", "n", "mse", "stderr")


@dataclass(frozen=True)
class PivotSample:
    """Monte Carlo sample of error pivots recorded at a common horizon."""

    values: np.ndarray
    n_obs: int
    algorithm: str

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 1:
            raise ValueError("pivot values must form a 1-d array")
        if values.size and (not np.all(np.isfinite(values)) or values.min() < 0):
            raise ValueError("pivot values must be finite and nonnegative")
        object.__setattr__(self, "values", values)


def pivot_cn(theta_hat, theta_true, m) -> float:
    """Quadratic form (theta_hat - theta_true)^T m (theta_hat - theta_true).

    m is the accumulated (not inverted) normalization matrix. Values in
    [PIVOT_NEGATIVE_TOL, 0) are clipped to 0; anything lower raises.
    """
    d = np.asarray(theta_hat, dtype=float) - np.asarray(theta_true, dtype=float)
    m = np.asarray(m, dtype=float)
    if d.ndim != 1 or m.shape != (d.size, d.size):
        raise ValueError("dimension mismatch between iterate and matrix")
    v = float(d @ m @ d)
    if not np.isfinite(v):
        raise ValueError("pivot is not finite")
    if v < PIVOT_NEGATIVE_TOL:
        raise ValueError(f"pivot {v} negative beyond tolerance")
    return max(v, 0.0)


def chi2_2_cdf(x):
    """CDF of the chi-squared law with 2 degrees of freedom, 1 - exp(-x/2)."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("chi-squared CDF is undefined for negative arguments")
    return -np.expm1(-x / 2.0)


def ks_statistic(sample) -> float:
    """One-sample Kolmogorov-Smirnov distance against chi2_2_cdf.

    sample is a PivotSample or a 1-d array of nonnegative values. For the
    sorted sample x_(1) <= ... <= x_(N) the distance is
    max_i max(|i/N - F(x_(i))|, |(i-1)/N - F(x_(i))|).
    """
    values = getattr(sample, "values", sample)
    values = np.sort(np.asarray(values, dtype=float))
    n = values.size
    if n == 0:
        raise ValueError("cannot compute a KS distance on an empty sample")
    f = chi2_2_cdf(values)
    i = np.arange(1, n + 1)
    d_plus = np.max(i / n - f)
    d_minus = np.max(f - (i - 1) / n)
    return float(max(d_plus, d_minus))


def ks_critical_99(n: int) -> float:
    """Asymptotic 99% critical value 1.63 / sqrt(n) of the KS distance."""
    if n < 1:
        raise ValueError("sample size must be positive")
    return 1.63 / np.sqrt(n)


def _aggregate_one(errors):
    errors = np.asarray(errors, dtype=float)
    if errors.ndim == 1:
        errors = errors[None, :]
    if errors.ndim != 2:
        raise ValueError("per-replication errors must form a 2-d array")
    reps = errors.shape[0]
    mean = errors.mean(axis=0)
    if reps > 1:
        stderr = errors.std(axis=0, ddof=1) / np.sqrt(reps)
    else:
        stderr = np.zeros_like(mean)
    return mean, stderr


def mse_aggregate(trajectories):
    """Mean and Monte Carlo standard error of squared errors per checkpoint.

    trajectories is either an array of shape (replications, checkpoints) or
    a mapping algorithm -> such array. Replication rows must share one
    checkpoint grid; ragged inputs raise. Returns (mean, stderr) arrays, or
    a dict of them for mapping input.
    """
    if isinstance(trajectories, dict):
        lengths = set()
        for arr in trajectories.values():
            arr = np.asarray(arr, dtype=float)
            lengths.add(arr.shape[-1])
        if len(lengths) > 1:
            raise ValueError("mismatched checkpoint grids across algorithms")
        return {k: _aggregate_one(v) for k, v in trajectories.items()}
    rows = list(trajectories)
    if rows and any(np.asarray(r).shape != np.asarray(rows[0]).shape for r in rows):
        raise ValueError("mismatched checkpoint grids across replications")
    return _aggregate_one(np.asarray(rows, dtype=float))


def rate_slope(checkpoints) -> float:
    """Log-log OLS slope of mse against n over (n, mse) pairs.

    Requires at least 5 checkpoints spanning at least two decades in n,
    with positive finite entries throughout.
    """
    pts = np.asarray(list(checkpoints), dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("expected a sequence of (n, mse) pairs")
    if pts.shape[0] < 5:
        raise ValueError("need at least 5 checkpoints to fit a rate")
    ns, mses = pts[:, 0], pts[:, 1]
    if not (np.all(np.isfinite(pts)) and np.all(ns > 0) and np.all(mses > 0)):
        raise ValueError("checkpoint pairs must be positive and finite")
    if ns.max() / ns.min() < 100.0:
        raise ValueError("checkpoints must span at least two decades")
    slope, _ = np.polyfit(np.log(ns), np.log(mses), 1)
    return float(slope)


def _format_cell(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_to_csv(rows) -> str:
    """Render MSE table rows (dicts keyed by MSE_COLUMNS) as CSV text."""
    lines = [",".join(MSE_COLUMNS)]
    for row in rows:
        lines.append(",".join(_format_cell(row[c]) for c in MSE_COLUMNS))
    return "\n".join(lines) + "\n"


def rows_to_text(rows, float_fmt: str = "{:.6g}") -> str:
    """Render MSE table rows as an aligned plain-text table."""
    table = [list(MSE_COLUMNS)]
    for row in rows:
        cells = []
        for c in MSE_COLUMNS:
            v = row[c]
            cells.append(float_fmt.format(v) if isinstance(v, float) else str(v))
        table.append(cells)
    widths = [max(len(r[j]) for r in table) for j in range(len(MSE_COLUMNS))]
    lines = []
    for i, r in enumerate(table):
        lines.append("  ".join(c.rjust(w) for c, w in zip(r, widths)))
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"

"""Monte Carlo experiment harness.

An experiment runs a set of estimator cells (algorithm tag plus step
hyperparameters) over independent replications of the benchmark stream.
Within a replication, every cell consumes the same covariates, noise, and
initialization direction, so cross-algorithm comparisons are paired.

Reporting tags and recursions: ``asgn`` and ``asgn-raw`` are the averaged
and raw iterates of one underlying recursion, and ``asgd``/``sgd`` read the
averaged and raw iterates of the gradient recursion, so shared cells are
computed once. Results are reduced in fixed replication order, which makes
reports byte-for-byte reproducible for a given master seed regardless of
the worker count.
"""

from __future__ import annotations

import concurrent.futures
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import stats
from ._engine import (
    CHUNK_SIZE,
    RECURSION_OF,
    GroupTask,
    exploration_rng,
    replication_data,
    run_group_chunk,
)
from .estimators import STEP_FUNCTIONS, Ball, HyperParams, make_state
from .model import Observation, get_model
from .stats import PivotSample

__all__ = [
    "Cell",
    "ExperimentConfig",
    "ExperimentReport",
    "default_checkpoints",
    "run_experiment",
    "run_table",
    "run_curves",
    "run_normality",
    "run_replication_sequential",
    "table1_config",
    "table2_config",
    "table3_config",
    "curves_config",
    "normality_config",
]

# fraction of failed replications beyond which a cell is flagged
FAILURE_FLAG_FRACTION = 0.05

TAGS = tuple(RECURSION_OF)

# tags whose reported iterate is the running average
_AVERAGED = {"asgn", "asgd"}


@dataclass(frozen=True)
class Cell:
    """One experiment cell: reporting tag plus step hyperparameters."""

    algorithm: str
    c_alpha: float = 1.0
    alpha: float = 0.66
    c_beta: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        if self.algorithm not in TAGS:
            raise ValueError(f"unknown algorithm tag {self.algorithm!r}")
        if self.algorithm in ("sgd", "asgd", "rls") and self.c_beta != 0:
            raise ValueError(f"{self.algorithm} does not take exploration noise")
        # reuse the estimator-level range validation
        HyperParams(c_alpha=self.c_alpha, alpha=self.alpha,
                    c_beta=self.c_beta, beta=self.beta)


def default_checkpoints(n: int, count: int = 30, lo: int = 100) -> tuple:
    """About `count` log-spaced checkpoints in [lo, n], always ending at n."""
    if n <= lo:
        return (int(n),)
    grid = np.unique(np.round(np.geomspace(lo, n, count)).astype(int))
    grid = grid[(grid >= 1) & (grid <= n)]
    if grid[-1] != n:
        grid = np.append(grid, n)
    return tuple(int(v) for v in grid)


@dataclass(frozen=True)
class ExperimentConfig:
    """Full description of one experiment run."""

    cells: tuple
    n: int = 10_000
    replications: int = 100
    init_radius: float = 10.0
    master_seed: int = 0
    checkpoints: tuple | None = None
    projection: bool = True
    projection_radius: float = 12.0
    model: str = "exp_saturation"
    theta_true: tuple = (21.0, 12.0)
    sigma: float = 1.0
    covariate: str = "uniform"
    noise: str = "normal"
    collect_pivots: bool = False
    jobs: int = 1

    def __post_init__(self):
        cells = tuple(self.cells)
        if not cells:
            raise ValueError("an experiment needs at least one cell")
        for cell in cells:
            if not isinstance(cell, Cell):
                raise ValueError("cells must be Cell instances")
        object.__setattr__(self, "cells", cells)
        theta = tuple(float(v) for v in self.theta_true)
        if not all(np.isfinite(theta)):
            raise ValueError("theta_true must be finite")
        object.__setattr__(self, "theta_true", theta)
        model = get_model(self.model, len(theta))
        if model.param_dim != len(theta):
            raise ValueError("theta_true does not match the model parameter dimension")
        if any(c.algorithm == "rls" for c in cells) and self.model != "linear":
            raise ValueError("rls requires the linear model")
        if self.n < 1 or self.replications < 1 or self.jobs < 1:
            raise ValueError("n, replications, and jobs must be positive")
        if not (np.isfinite(self.init_radius) and self.init_radius >= 0):
            raise ValueError("init_radius must be nonnegative")
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError("sigma must be positive")
        if self.projection and not (np.isfinite(self.projection_radius)
                                    and self.projection_radius > 0):
            raise ValueError("projection_radius must be positive")
        if self.checkpoints is None:
            cps = default_checkpoints(self.n)
        else:
            cps = tuple(sorted({int(c) for c in self.checkpoints}))
            if not cps or cps[0] < 1 or cps[-1] > self.n:
                raise ValueError("checkpoints must lie in [1, n]")
            if cps[-1] != self.n:
                cps = cps + (int(self.n),)
        object.__setattr__(self, "checkpoints", cps)

    def param_dim(self) -> int:
        return len(self.theta_true)


@dataclass
class ExperimentReport:
    """Results of one experiment.

    wall_clock_s is session-local diagnostics; serialized outputs contain
    only seed-determined content so runs are byte-for-byte reproducible.
    """

    config: ExperimentConfig
    rows: list = field(default_factory=list)
    curves: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    slopes: list = field(default_factory=list)
    pivots: list = field(default_factory=list)
    ks: list = field(default_factory=list)
    wall_clock_s: float = 0.0

    def flagged_cells(self) -> list:
        return [f for f in self.failures if f["flagged"]]


def _group_key(cell: Cell):
    rec = RECURSION_OF[cell.algorithm]
    if rec == "sgn":
        return (rec, cell.c_beta, cell.beta)
    if rec == "rls":
        return (rec,)
    if rec == "sgd":
        return (rec, cell.c_alpha, cell.alpha)
    return (rec, cell.c_alpha, cell.alpha, cell.c_beta, cell.beta)


def _build_groups(config: ExperimentConfig):
    """Group cells sharing a recursion; order of first appearance is stable."""
    groups = {}
    for cell_idx, cell in enumerate(config.cells):
        key = _group_key(cell)
        if key not in groups:
            groups[key] = {"group_idx": len(groups), "cell": cell, "members": []}
        groups[key]["members"].append((cell_idx, cell))
    return list(groups.values())


def _group_task(config: ExperimentConfig, group, collect_pivots: bool) -> GroupTask:
    cell = group["cell"]
    return GroupTask(
        model=config.model,
        param_dim=config.param_dim(),
        theta_true=config.theta_true,
        recursion=RECURSION_OF[cell.algorithm],
        c_alpha=cell.c_alpha,
        alpha=cell.alpha,
        c_beta=cell.c_beta,
        beta=cell.beta,
        n=config.n,
        checkpoints=config.checkpoints,
        master_seed=config.master_seed,
        group_idx=group["group_idx"],
        r0=config.init_radius,
        sigma=config.sigma,
        covariate=config.covariate,
        noise=config.noise,
        proj_center=config.theta_true if config.projection else None,
        proj_radius=config.projection_radius if config.projection else None,
        s0=None,
        collect_pivots=collect_pivots,
    )


def _execute_chunk(args):
    task, lo, hi = args
    return task.group_idx, lo, run_group_chunk(task, lo, hi)


def _merge_chunks(chunks):
    """Concatenate chunk dicts along the replication axis in rep order."""
    chunks = [c for _, c in sorted(chunks, key=lambda t: t[0])]
    merged = {}
    for key in chunks[0]:
        parts = [c[key] for c in chunks]
        merged[key] = None if parts[0] is None else np.concatenate(parts, axis=0)
    return merged


def run_experiment(config: ExperimentConfig) -> ExperimentReport:
    """Run all cells of the experiment and aggregate per-cell summaries."""
    start = time.perf_counter()
    groups = _build_groups(config)
    tasks = []
    for group in groups:
        task = _group_task(config, group, config.collect_pivots)
        for lo in range(0, config.replications, CHUNK_SIZE):
            hi = min(lo + CHUNK_SIZE, config.replications)
            tasks.append((task, lo, hi))

    by_group: dict[int, list] = {}
    if config.jobs > 1 and len(tasks) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=config.jobs) as pool:
            for group_idx, lo, result in pool.map(_execute_chunk, tasks):
                by_group.setdefault(group_idx, []).append((lo, result))
    else:
        for args in tasks:
            group_idx, lo, result = _execute_chunk(args)
            by_group.setdefault(group_idx, []).append((lo, result))

    report = ExperimentReport(config=config)
    slope_lo = max(100, config.n // 100)
    for group in groups:
        merged = _merge_chunks(by_group[group["group_idx"]])
        alive = merged["alive"]
        for cell_idx, cell in group["members"]:
            tag = cell.algorithm
            errs = merged["err_theta_bar" if tag in _AVERAGED else "err_theta"]
            live_errs = errs[alive]
            failed = int((~alive).sum())
            base = {
                "algorithm": tag,
                "c_alpha": cell.c_alpha,
                "alpha": cell.alpha,
                "c_beta": cell.c_beta,
                "beta": cell.beta,
            }
            report.failures.append(dict(
                base,
                failed=failed,
                replications=config.replications,
                flagged=failed > FAILURE_FLAG_FRACTION * config.replications,
            ))
            if live_errs.shape[0] == 0:
                report.rows.append(dict(base, n=config.n, mse=float("nan"),
                                        stderr=float("nan")))
                continue
            mean, stderr = stats.mse_aggregate(live_errs)
            report.rows.append(dict(base, n=config.n, mse=float(mean[-1]),
                                    stderr=float(stderr[-1])))
            report.curves.append(dict(
                base,
                checkpoints=[int(c) for c in config.checkpoints],
                mse=[float(v) for v in mean],
                stderr=[float(v) for v in stderr],
            ))
            window = [(c, m) for c, m in zip(config.checkpoints, mean)
                      if c >= slope_lo and m > 0]
            try:
                slope = stats.rate_slope(window)
            except ValueError:
                slope = None
            if slope is not None:
                report.slopes.append(dict(base, slope=slope,
                                          window=[slope_lo, config.n]))
            if config.collect_pivots:
                key = {"sgn": "pivot_theta", "asgn": "pivot_theta_bar"}.get(tag)
                if key and merged.get(key) is not None:
                    values = merged[key][alive]
                    values = values[np.isfinite(values)]
                    sample = PivotSample(values=values, n_obs=config.n, algorithm=tag)
                    report.pivots.append(sample)
                    report.ks.append({
                        "algorithm": tag,
                        "n_obs": config.n,
                        "sample_size": int(values.size),
                        "ks": stats.ks_statistic(sample),
                        "ks_crit_99": stats.ks_critical_99(values.size),
                        "mean": float(values.mean()),
                    })
    report.wall_clock_s = time.perf_counter() - start
    return report


def run_table(config: ExperimentConfig) -> ExperimentReport:
    """Run a (hyperparameter grid x algorithm) table experiment."""
    return run_experiment(config)


def run_curves(config: ExperimentConfig) -> ExperimentReport:
    """Run an error-vs-sample-size experiment (per-checkpoint curves)."""
    return run_experiment(config)


def run_normality(config: ExperimentConfig) -> ExperimentReport:
    """Run a pivot-normality experiment; collects pivots and KS diagnostics."""
    if not config.collect_pivots:
        config = replace(config, collect_pivots=True)
    return run_experiment(config)


def run_replication_sequential(config: ExperimentConfig, rep: int) -> dict:
    """Reference path: run one replication with the per-observation steps.

    Returns the final EstimatorState per reporting tag. Exists to pin the
    batched engine to the sequential semantics; experiments use
    run_experiment.
    """
    model = get_model(config.model, config.param_dim())
    out = {}
    for group in _build_groups(config):
        task = _group_task(config, group, collect_pivots=False)
        theta0, x, y = replication_data(task, rep, model)
        cell = group["cell"]
        hp = HyperParams(
            c_alpha=cell.c_alpha, alpha=cell.alpha,
            c_beta=cell.c_beta, beta=cell.beta,
            projection=Ball(np.asarray(config.theta_true), config.projection_radius)
            if config.projection else None,
        )
        algorithm = {"gn_avg": "asgn", "sgd": "asgd",
                     "sgn": "sgn", "rls": "rls"}[task.recursion]
        rng = exploration_rng(config.master_seed, task.group_idx, rep) \
            if task.c_beta > 0 else None
        state = make_state(algorithm, hp, model, theta0, rng=rng)
        step = STEP_FUNCTIONS[algorithm]
        for k in range(config.n):
            step(state, hp, model, Observation(x[k], float(y[k])))
        for _, member in group["members"]:
            out[member.algorithm] = state
    return out


def _grid_cells(tags, c_alphas, alphas):
    return tuple(Cell(t, c_alpha=c, alpha=a)
                 for t in tags for c in c_alphas for a in alphas)


def table1_config(seed: int = 0, reps: int = 100, n: int = 10_000,
                  jobs: int = 1) -> ExperimentConfig:
    """Gauss-Newton step-sequence sweep: raw and averaged iterates."""
    return ExperimentConfig(
        cells=_grid_cells(("asgn-raw", "asgn"),
                          (0.1, 0.5, 1.0, 2.0, 5.0),
                          (0.55, 0.66, 0.75, 0.9)),
        n=n, replications=reps, init_radius=10.0, master_seed=seed, jobs=jobs,
    )


def table2_config(seed: int = 0, reps: int = 100, n: int = 10_000,
                  jobs: int = 1) -> ExperimentConfig:
    """Stochastic gradient step-sequence sweep: raw and averaged iterates."""
    return ExperimentConfig(
        cells=_grid_cells(("sgd", "asgd"),
                          (0.1, 0.5, 1.0, 2.0, 5.0),
                          (0.55, 0.66, 0.75, 0.9)),
        n=n, replications=reps, init_radius=10.0, master_seed=seed, jobs=jobs,
    )


def table3_config(seed: int = 0, reps: int = 100, n: int = 10_000,
                  jobs: int = 1) -> ExperimentConfig:
    """Exploration-noise sweep over (c_beta, beta) at c_alpha=1, alpha=0.66."""
    cells = tuple(
        Cell(t, c_alpha=1.0, alpha=0.66, c_beta=cb, beta=b)
        for t in ("asgn-raw", "asgn", "sgn")
        for cb in (1e-10, 1e-5, 1e-2, 1e-1, 1.0)
        for b in (0.01, 0.08, 0.2, 0.5)
    )
    return ExperimentConfig(cells=cells, n=n, replications=reps,
                            init_radius=5.0, master_seed=seed, jobs=jobs)


def curves_config(r0: float, seed: int = 0, reps: int = 100, n: int = 10_000,
                  jobs: int = 1) -> ExperimentConfig:
    """Error-vs-n comparison of Gauss-Newton and gradient estimators."""
    cells = (
        Cell("sgn"),
        Cell("asgn-raw", c_alpha=1.0, alpha=0.66),
        Cell("asgn", c_alpha=1.0, alpha=0.66),
        Cell("sgd", c_alpha=5.0, alpha=0.66),
        Cell("asgd", c_alpha=5.0, alpha=0.66),
    )
    return ExperimentConfig(cells=cells, n=n, replications=reps,
                            init_radius=r0, master_seed=seed, jobs=jobs)


def normality_config(seed: int = 0, reps: int = 1000, n: int = 5000,
                     jobs: int = 1) -> ExperimentConfig:
    """Pivot-normality experiment at theta0 = theta + U (unit sphere)."""
    cells = (Cell("sgn"), Cell("asgn", c_alpha=1.0, alpha=0.66))
    return ExperimentConfig(cells=cells, n=n, replications=reps,
                            init_radius=1.0, master_seed=seed, jobs=jobs,
                            collect_pivots=True)

"""Vectorized replication engine behind the experiment harness.

Advances every replication of one (recursion, hyperparameter) group in
lockstep, one observation index at a time, with all per-replication state
held in stacked arrays. Each array row evolves through exactly the float
operations of the sequential step functions in estimators.py, so results do
not depend on chunk boundaries or worker counts; agreement with the
sequential path is pinned by tests.

Stream layout: replication r draws from SeedSequence(master_seed,
spawn_key=(0, r)) in the order (initialization direction, covariates,
noise), shared by every algorithm and cell so comparisons are paired.
Exploration draws come from SeedSequence(master_seed, spawn_key=(1, g, r))
where g indexes the group, one stream per replication.

Replications whose state leaves the finite range are poisoned with NaN and
reported dead; they are never regularized back.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import covariate_sampler, get_model, noise_sampler
from .riccati import DENOMINATOR_FLOOR

__all__ = ["GroupTask", "RECURSION_OF", "replication_data", "exploration_rng",
           "run_group_chunk", "CHUNK_SIZE"]

# replications per engine task; fixed so that --jobs cannot influence results
CHUNK_SIZE = 100

# reporting tag -> underlying recursion
RECURSION_OF = {
    "sgn": "sgn",
    "asgn": "gn_avg",
    "asgn-raw": "gn_avg",
    "sgd": "sgd",
    "asgd": "sgd",
    "rls": "rls",
}

DATA_STREAM = 0
EXPLORATION_STREAM = 1


@dataclass(frozen=True)
class GroupTask:
    """Picklable description of one recursion group of an experiment."""

    model: str
    param_dim: int
    theta_true: tuple
    recursion: str
    c_alpha: float
    alpha: float
    c_beta: float
    beta: float
    n: int
    checkpoints: tuple
    master_seed: int
    group_idx: int
    r0: float
    sigma: float
    covariate: str
    noise: str
    proj_center: tuple | None
    proj_radius: float | None
    s0: tuple | None
    collect_pivots: bool


def replication_data(task: GroupTask, rep: int, model=None):
    """Streams for one replication: (theta0, X of shape (n, p), Y of shape (n,)).

    Draw order within the stream is fixed: initialization direction first,
    then covariates, then noise.
    """
    if model is None:
        model = get_model(task.model, task.param_dim)
    theta_true = np.asarray(task.theta_true, dtype=float)
    rng = np.random.default_rng(
        np.random.SeedSequence(task.master_seed, spawn_key=(DATA_STREAM, rep))
    )
    g = rng.standard_normal(model.param_dim)
    udir = g / np.linalg.norm(g)
    x = covariate_sampler(task.covariate)(rng, task.n, model.covariate_dim)
    eps = noise_sampler(task.noise)(rng, task.n, task.sigma)
    y = model.eval(x, theta_true) + eps
    theta0 = theta_true + task.r0 * udir
    return theta0, x, y


def exploration_rng(master_seed: int, group_idx: int, rep: int) -> np.random.Generator:
    """Per-replication generator for exploration draws of one group."""
    return np.random.default_rng(
        np.random.SeedSequence(master_seed, spawn_key=(EXPLORATION_STREAM, group_idx, rep))
    )


def _initial_inverse(task: GroupTask, q: int, reps: int) -> np.ndarray:
    if task.s0 is None:
        s0_inv = np.eye(q)
    else:
        s0 = np.asarray(task.s0, dtype=float).reshape(q, q)
        s0_inv = np.linalg.inv(s0)
        s0_inv = (s0_inv + s0_inv.T) / 2
    return np.tile(s0_inv, (reps, 1, 1))


def _rank1_rows(inv, u, w):
    """Sherman-Morrison update of stacked inverses; w is scalar or (R,).

    Mirrors riccati.rank_one_update row by row, including the final
    re-symmetrization. Rows whose denominator collapses come back as NaN.
    """
    au = np.einsum("rij,rj->ri", inv, u)
    den = 1.0 + w * np.einsum("ri,ri->r", u, au)
    bad = ~(den > DENOMINATOR_FLOOR)
    if bad.any():
        den = np.where(bad, 1.0, den)
    inv = inv - au[:, :, None] * au[:, None, :] * (w / den)[:, None, None]
    inv = (inv + inv.transpose(0, 2, 1)) / 2
    if bad.any():
        inv[bad] = np.nan
    return inv


def _project_rows(theta, center, radius):
    d = theta - center
    nrm = np.sqrt(np.einsum("ri,ri->r", d, d))
    mask = nrm > radius
    if not mask.any():
        return theta
    scale = radius / np.where(nrm > 0, nrm, 1.0)
    return np.where(mask[:, None], center + d * scale[:, None], theta)


class _Collector:
    """Checkpoint bookkeeping shared by the drivers."""

    def __init__(self, task, reps, theta_true, track_bar):
        self.checkpoints = tuple(task.checkpoints)
        self.theta_true = theta_true
        c = len(self.checkpoints)
        self.err_theta = np.full((reps, c), np.nan)
        self.err_bar = np.full((reps, c), np.nan) if track_bar else None
        self._next = 0

    def record(self, k, theta, theta_bar=None):
        if self._next < len(self.checkpoints) and k == self.checkpoints[self._next]:
            d = theta - self.theta_true
            self.err_theta[:, self._next] = np.einsum("ri,ri->r", d, d)
            if self.err_bar is not None:
                db = theta_bar - self.theta_true
                self.err_bar[:, self._next] = np.einsum("ri,ri->r", db, db)
            self._next += 1


def _pivot_rows(iterate, theta_true, inv, sigma):
    """Quadratic form d^T M d with M the inverse of the tracked matrix."""
    d = iterate - theta_true
    ok = np.all(np.isfinite(inv), axis=(1, 2)) & np.all(np.isfinite(d), axis=1)
    out = np.full(d.shape[0], np.nan)
    if ok.any():
        md = np.linalg.solve(inv[ok], d[ok][..., None])[..., 0]
        out[ok] = np.einsum("ri,ri->r", d[ok], md) / (sigma * sigma)
    return out


def run_group_chunk(task: GroupTask, rep_lo: int, rep_hi: int) -> dict:
    """Run replications [rep_lo, rep_hi) of one group; returns stacked arrays."""
    model = get_model(task.model, task.param_dim)
    q = model.param_dim
    reps = rep_hi - rep_lo
    theta_true = np.asarray(task.theta_true, dtype=float)

    theta0 = np.empty((reps, q))
    x = np.empty((task.n, reps, model.covariate_dim))
    y = np.empty((task.n, reps))
    for i, rep in enumerate(range(rep_lo, rep_hi)):
        t0, xr, yr = replication_data(task, rep, model)
        theta0[i] = t0
        x[:, i, :] = xr
        y[:, i] = yr

    zs = None
    if task.c_beta > 0 and task.recursion in ("sgn", "gn_avg"):
        zs = np.empty((task.n, reps, q))
        for i, rep in enumerate(range(rep_lo, rep_hi)):
            rng = exploration_rng(task.master_seed, task.group_idx, rep)
            zs[:, i, :] = rng.standard_normal((task.n, q))

    driver = {"sgn": _drive_sgn, "rls": _drive_sgn,
              "gn_avg": _drive_gn_avg, "sgd": _drive_sgd}[task.recursion]
    with np.errstate(all="ignore"):
        return driver(task, model, theta_true, theta0, x, y, zs)


def _alive(*arrays):
    mask = None
    for a in arrays:
        if a is None:
            continue
        m = np.isfinite(a)
        while m.ndim > 1:
            m = m.all(axis=-1)
        mask = m if mask is None else (mask & m)
    return mask


def _drive_gn_avg(task, model, theta_true, theta, x, y, zs):
    reps, q = theta.shape
    inv = _initial_inverse(task, q, reps)
    tbar = theta.copy()
    sse_raw = np.zeros(reps)
    sse_bar = np.zeros(reps)
    collect = _Collector(task, reps, theta_true, track_bar=True)
    center = None if task.proj_center is None else np.asarray(task.proj_center, dtype=float)
    for k in range(1, task.n + 1):
        xk, yk = x[k - 1], y[k - 1]
        e = yk - model.eval(xk, tbar)
        sse_bar += e * e
        phibar = model.grad(xk, tbar)
        r = yk - model.eval(xk, theta)
        sse_raw += r * r
        phi = model.grad(xk, theta)
        gain = task.c_alpha * float(k) ** (1.0 - task.alpha)
        sphi = np.einsum("rij,rj->ri", inv, phi)
        theta = theta + sphi * (gain * r)[:, None]
        if center is not None:
            theta = _project_rows(theta, center, task.proj_radius)
        tbar = (k * tbar + theta) / (k + 1)
        if zs is not None:
            inv = _rank1_rows(inv, zs[k - 1], task.c_beta * float(k) ** -task.beta)
        inv = _rank1_rows(inv, phibar, 1.0)
        collect.record(k, theta, tbar)
    out = {
        "theta": theta, "theta_bar": tbar, "inv": inv,
        "sse_raw": sse_raw, "sse_bar": sse_bar,
        "err_theta": collect.err_theta, "err_theta_bar": collect.err_bar,
        "alive": _alive(theta, tbar, inv, sse_raw, sse_bar),
    }
    if task.collect_pivots:
        out["pivot_theta_bar"] = _pivot_rows(tbar, theta_true, inv, task.sigma)
    return out


def _drive_sgn(task, model, theta_true, theta, x, y, zs):
    reps, q = theta.shape
    inv = _initial_inverse(task, q, reps)
    sse_raw = np.zeros(reps)
    collect = _Collector(task, reps, theta_true, track_bar=False)
    center = None if task.proj_center is None else np.asarray(task.proj_center, dtype=float)
    for k in range(1, task.n + 1):
        xk, yk = x[k - 1], y[k - 1]
        r = yk - model.eval(xk, theta)
        sse_raw += r * r
        phi = model.grad(xk, theta)
        if zs is not None:
            inv = _rank1_rows(inv, zs[k - 1], task.c_beta * float(k) ** -task.beta)
        inv = _rank1_rows(inv, phi, 1.0)
        hphi = np.einsum("rij,rj->ri", inv, phi)
        theta = theta + hphi * r[:, None]
        if center is not None:
            theta = _project_rows(theta, center, task.proj_radius)
        collect.record(k, theta)
    out = {
        "theta": theta, "theta_bar": None, "inv": inv,
        "sse_raw": sse_raw, "sse_bar": None,
        "err_theta": collect.err_theta, "err_theta_bar": None,
        "alive": _alive(theta, inv, sse_raw),
    }
    if task.collect_pivots:
        out["pivot_theta"] = _pivot_rows(theta, theta_true, inv, task.sigma)
    return out


def _drive_sgd(task, model, theta_true, theta, x, y, zs):
    reps, q = theta.shape
    tbar = theta.copy()
    sse_raw = np.zeros(reps)
    sse_bar = np.zeros(reps)
    collect = _Collector(task, reps, theta_true, track_bar=True)
    center = None if task.proj_center is None else np.asarray(task.proj_center, dtype=float)
    for k in range(1, task.n + 1):
        xk, yk = x[k - 1], y[k - 1]
        e = yk - model.eval(xk, tbar)
        sse_bar += e * e
        r = yk - model.eval(xk, theta)
        sse_raw += r * r
        phi = model.grad(xk, theta)
        gamma = task.c_alpha * float(k) ** -task.alpha
        theta = theta + (gamma * phi) * r[:, None]
        if center is not None:
            theta = _project_rows(theta, center, task.proj_radius)
        tbar = (k * tbar + theta) / (k + 1)
        collect.record(k, theta, tbar)
    return {
        "theta": theta, "theta_bar": tbar, "inv": None,
        "sse_raw": sse_raw, "sse_bar": sse_bar,
        "err_theta": collect.err_theta, "err_theta_bar": collect.err_bar,
        "alive": _alive(theta, tbar, sse_raw, sse_bar),
    }

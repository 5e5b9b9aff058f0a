"""Online estimators for nonlinear regression.

All estimators consume one observation (x, y) per step. The k-th consumed
observation (k starting at 1) uses the step size c_alpha * k**(-alpha) and
the exploration weight c_beta * k**(-beta).

Algorithms:

* ``sgn`` -- stochastic Gauss-Newton. The matrix H_n = H_0 + sum phi_i phi_i^T
  (+ exploration terms) is tracked through its inverse; the parameter moves by
  H_n^{-1} phi_n (y_n - f(x_n, theta)). The gain uses the inverse after
  absorbing phi_n, which makes the linear case coincide exactly with
  ridge-initialized recursive least squares.
* ``asgn`` -- Gauss-Newton with an explicit step sequence plus running
  average. theta moves by c_alpha k^{-alpha} * k * S^{-1} phi r with the
  gradient at theta; S absorbs the gradient evaluated at the running average
  theta_bar (before the average is updated); theta_bar is the arithmetic mean
  of theta_0..theta_k.
* ``sgd`` / ``asgd`` -- stochastic gradient theta += c_alpha k^{-alpha} phi r,
  without / with the running average.
* ``rls`` -- recursive least squares; sgn without exploration noise, intended
  for linear models.

Optional projection constrains iterates to a Euclidean ball; it is applied to
the raw iterate right after its move, before any averaging.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import riccati
from .model import Observation, RegressionModel
from .riccati import InverseState, NumericalBreakdown

__all__ = [
    "Ball",
    "HyperParams",
    "EstimatorState",
    "ALGORITHMS",
    "STEP_FUNCTIONS",
    "check_theory_ranges",
    "make_state",
    "project",
    "sigma2_update",
    "sigma2",
    "sgn_step",
    "asgn_step",
    "sgd_step",
    "asgd_step",
    "rls_step",
    "save_checkpoint",
    "load_checkpoint",
    "checkpoint_to_json",
    "checkpoint_from_json",
    "NumericalBreakdown",
]

ALGORITHMS = ("sgn", "asgn", "sgd", "asgd", "rls")


@dataclass(frozen=True)
class Ball:
    """Euclidean ball used for iterate projection."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        center = np.array(self.center, dtype=float)
        if center.ndim != 1 or not np.all(np.isfinite(center)):
            raise ValueError("projection center must be a finite vector")
        object.__setattr__(self, "center", center)
        if not (np.isfinite(self.radius) and self.radius > 0):
            raise ValueError("projection radius must be positive")


@dataclass(frozen=True)
class HyperParams:
    """Step and exploration hyperparameters shared by the estimators.

    c_alpha > 0 and alpha in (1/2, 1) drive the explicit step sequence;
    c_beta >= 0 and beta >= 0 drive the exploration noise added to the
    tracked matrix. s0 is the initial matrix (identity when None) and
    projection an optional Ball. Theoretical guarantees put beta in
    (0, 1/2) for sgn and (0, alpha - 1/2) for asgn when c_beta > 0; those
    ranges are checked by check_theory_ranges, not at construction, so that
    wider empirical sweeps remain expressible.
    """

    c_alpha: float = 1.0
    alpha: float = 0.66
    c_beta: float = 0.0
    beta: float = 0.0
    s0: np.ndarray | None = None
    projection: Ball | None = None

    def __post_init__(self):
        if not (np.isfinite(self.c_alpha) and self.c_alpha > 0):
            raise ValueError("c_alpha must be positive")
        if not (0.5 < self.alpha < 1.0):
            raise ValueError("alpha must lie in (1/2, 1)")
        if not (np.isfinite(self.c_beta) and self.c_beta >= 0):
            raise ValueError("c_beta must be nonnegative")
        if not (np.isfinite(self.beta) and 0 <= self.beta <= 1):
            raise ValueError("beta must lie in [0, 1]")
        if self.s0 is not None:
            # init() validates symmetry and positive definiteness
            object.__setattr__(self, "s0", riccati.init(self.s0).inv)


def check_theory_ranges(hp: HyperParams, algorithm: str) -> None:
    """Raise if (c_beta, beta) leave the range with convergence guarantees."""
    if hp.c_beta == 0:
        return
    if algorithm == "sgn":
        if not (0 < hp.beta < 0.5):
            raise ValueError("sgn exploration requires beta in (0, 1/2)")
    elif algorithm == "asgn":
        if not (0 < hp.beta < hp.alpha - 0.5):
            raise ValueError("asgn exploration requires beta in (0, alpha - 1/2)")


@dataclass
class EstimatorState:
    """Mutable per-replication estimator state.

    theta_bar is None for non-averaged algorithms, inverse is None for
    gradient algorithms. sse accumulates squared prediction errors of the
    pre-update predictor iterate (theta_bar when present, theta otherwise),
    which feeds the recursive noise-variance estimate sigma2().
    """

    algorithm: str
    theta: np.ndarray
    theta_bar: np.ndarray | None = None
    inverse: InverseState | None = None
    n: int = 0
    sse: float = 0.0
    rng: np.random.Generator | None = None


def make_state(
    algorithm: str,
    hp: HyperParams,
    model: RegressionModel,
    theta0,
    rng: np.random.Generator | None = None,
) -> EstimatorState:
    """Build a fresh state for one replication starting at theta0.

    rng supplies the exploration draws and is required when c_beta > 0 for
    the matrix-tracking algorithms.
    """
    algorithm = algorithm.lower()
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    theta = np.array(theta0, dtype=float)
    if theta.shape != (model.param_dim,) or not np.all(np.isfinite(theta)):
        raise ValueError(f"theta0 must be a finite vector of length {model.param_dim}")
    needs_matrix = algorithm in ("sgn", "asgn", "rls")
    if needs_matrix:
        if hp.s0 is None:
            inverse = riccati.init(np.eye(model.param_dim))
        else:
            if hp.s0.shape != (model.param_dim, model.param_dim):
                raise ValueError("s0 shape does not match the model parameter dimension")
            s0_inv = np.linalg.inv(hp.s0)
            inverse = riccati.init((s0_inv + s0_inv.T) / 2)
    else:
        inverse = None
    if hp.c_beta > 0 and algorithm in ("sgn", "asgn") and rng is None:
        raise ValueError("c_beta > 0 requires an rng for exploration draws")
    theta_bar = theta.copy() if algorithm in ("asgn", "asgd") else None
    return EstimatorState(
        algorithm=algorithm,
        theta=theta,
        theta_bar=theta_bar,
        inverse=inverse,
        rng=rng,
    )


def project(theta: np.ndarray, center: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection of theta onto the closed ball B(center, radius)."""
    if not (np.isfinite(radius) and radius > 0):
        raise ValueError("projection radius must be positive")
    d = theta - center
    nrm = float(np.linalg.norm(d))
    if nrm <= radius:
        return theta
    return center + d * (radius / nrm)


def _projected(theta: np.ndarray, hp: HyperParams) -> np.ndarray:
    if hp.projection is None:
        return theta
    return project(theta, hp.projection.center, hp.projection.radius)


def sigma2_update(state: EstimatorState, model: RegressionModel, obs: Observation):
    """Accumulate the squared prediction error of the pre-update predictor.

    The predictor is theta_bar when the algorithm averages and theta
    otherwise, both taken before the observation is consumed. Step functions
    call this internally; it is exposed for standalone prediction streams.
    """
    ref = state.theta_bar if state.theta_bar is not None else state.theta
    e = float(obs.y) - float(model.eval(obs.x, ref))
    if not np.isfinite(e):
        raise NumericalBreakdown("non-finite prediction residual")
    state.sse += e * e
    return state


def sigma2(state: EstimatorState) -> float:
    """Running noise-variance estimate sse / n. Undefined before any step."""
    if state.n == 0:
        raise ValueError("sigma2 is undefined before the first observation")
    return state.sse / state.n


def _residual_and_grad(state, model, obs, at):
    yhat = float(model.eval(obs.x, at))
    phi = np.asarray(model.grad(obs.x, at), dtype=float)
    r = float(obs.y) - yhat
    if not (np.isfinite(r) and np.all(np.isfinite(phi))):
        raise NumericalBreakdown("non-finite residual or gradient")
    return r, phi


def sgn_step(state: EstimatorState, hp: HyperParams, model: RegressionModel,
             obs: Observation) -> EstimatorState:
    """One stochastic Gauss-Newton step. Mutates and returns state.

    Order: absorb the exploration draw (weight c_beta k^{-beta}, skipped when
    c_beta == 0) and phi into the tracked matrix, then move theta by
    H^{-1} phi r with the updated inverse, then project. In the linear model
    this reproduces ridge-initialized recursive least squares exactly.
    """
    sigma2_update(state, model, obs)
    r, phi = _residual_and_grad(state, model, obs, state.theta)
    k = state.n + 1
    if hp.c_beta > 0:
        z = state.rng.standard_normal(state.inverse.dim)
        riccati.double_update(state.inverse, z, hp.c_beta * float(k) ** -hp.beta, phi)
    else:
        riccati.rank_one_update(state.inverse, phi, 1.0)
    state.theta = _projected(state.theta + state.inverse.inv @ phi * r, hp)
    state.n = k
    return state


def rls_step(state: EstimatorState, hp: HyperParams, model: RegressionModel,
             obs: Observation) -> EstimatorState:
    """Recursive least squares step (no exploration noise).

    Identical to sgn_step with c_beta == 0; rejects configurations with
    exploration noise because plain RLS tracks only sum phi phi^T.
    """
    if hp.c_beta != 0:
        raise ValueError("rls does not take exploration noise (c_beta must be 0)")
    sigma2_update(state, model, obs)
    r, phi = _residual_and_grad(state, model, obs, state.theta)
    riccati.rank_one_update(state.inverse, phi, 1.0)
    state.theta = _projected(state.theta + state.inverse.inv @ phi * r, hp)
    state.n += 1
    return state


def asgn_step(state: EstimatorState, hp: HyperParams, model: RegressionModel,
              obs: Observation) -> EstimatorState:
    """One averaged Gauss-Newton step. Mutates and returns state.

    The parameter moves by c_alpha k^{-alpha} * k S^{-1} phi r with the
    gradient and residual at theta and the pre-update inverse (k S^{-1}
    estimates the inverse of the average per-observation matrix). The raw
    iterate is projected before entering the running average. S then absorbs
    the exploration draw and the gradient at the pre-update theta_bar.
    """
    sigma2_update(state, model, obs)
    phibar = np.asarray(model.grad(obs.x, state.theta_bar), dtype=float)
    if not np.all(np.isfinite(phibar)):
        raise NumericalBreakdown("non-finite residual or gradient")
    r, phi = _residual_and_grad(state, model, obs, state.theta)
    k = state.n + 1
    gain = hp.c_alpha * float(k) ** (1.0 - hp.alpha)
    state.theta = _projected(state.theta + state.inverse.inv @ phi * (gain * r), hp)
    state.theta_bar = (k * state.theta_bar + state.theta) / (k + 1)
    if hp.c_beta > 0:
        z = state.rng.standard_normal(state.inverse.dim)
        riccati.double_update(state.inverse, z, hp.c_beta * float(k) ** -hp.beta, phibar)
    else:
        riccati.rank_one_update(state.inverse, phibar, 1.0)
    state.n = k
    return state


def sgd_step(state: EstimatorState, hp: HyperParams, model: RegressionModel,
             obs: Observation) -> EstimatorState:
    """One stochastic gradient step theta += c_alpha k^{-alpha} phi r."""
    sigma2_update(state, model, obs)
    r, phi = _residual_and_grad(state, model, obs, state.theta)
    k = state.n + 1
    state.theta = _projected(state.theta + (hp.c_alpha * float(k) ** -hp.alpha) * phi * r, hp)
    state.n = k
    return state


def asgd_step(state: EstimatorState, hp: HyperParams, model: RegressionModel,
              obs: Observation) -> EstimatorState:
    """Stochastic gradient step followed by the running-average update."""
    sigma2_update(state, model, obs)
    r, phi = _residual_and_grad(state, model, obs, state.theta)
    k = state.n + 1
    state.theta = _projected(state.theta + (hp.c_alpha * float(k) ** -hp.alpha) * phi * r, hp)
    state.theta_bar = (k * state.theta_bar + state.theta) / (k + 1)
    state.n = k
    return state


STEP_FUNCTIONS: dict[str, Callable] = {
    "sgn": sgn_step,
    "asgn": asgn_step,
    "sgd": sgd_step,
    "asgd": asgd_step,
    "rls": rls_step,
}


def save_checkpoint(state: EstimatorState, hp: HyperParams) -> dict:
    """Serialize (state, hp) to a JSON-compatible dict.

    Floats survive the JSON round trip bit-exactly; the rng state is the
    bit-generator state dict. The riccati update counter is session-local
    diagnostics and is not persisted.
    """
    return {
        "algorithm": state.algorithm,
        "hyperparams": {
            "c_alpha": float(hp.c_alpha),
            "alpha": float(hp.alpha),
            "c_beta": float(hp.c_beta),
            "beta": float(hp.beta),
            "s0": None if hp.s0 is None else [[float(v) for v in row] for row in hp.s0],
            "projection": None if hp.projection is None else {
                "center": [float(v) for v in hp.projection.center],
                "radius": float(hp.projection.radius),
            },
        },
        "n": int(state.n),
        "theta": [float(v) for v in state.theta],
        "theta_bar": None if state.theta_bar is None
        else [float(v) for v in state.theta_bar],
        "inverse": None if state.inverse is None
        else [float(v) for v in state.inverse.inv.reshape(-1)],
        "sse": float(state.sse),
        "rng_state": None if state.rng is None else state.rng.bit_generator.state,
    }


def load_checkpoint(doc: dict) -> tuple[EstimatorState, HyperParams]:
    """Rebuild (state, hp) from a checkpoint dict."""
    hp_doc = doc["hyperparams"]
    projection = None
    if hp_doc.get("projection") is not None:
        projection = Ball(
            center=np.array(hp_doc["projection"]["center"], dtype=float),
            radius=float(hp_doc["projection"]["radius"]),
        )
    hp = HyperParams(
        c_alpha=float(hp_doc["c_alpha"]),
        alpha=float(hp_doc["alpha"]),
        c_beta=float(hp_doc["c_beta"]),
        beta=float(hp_doc["beta"]),
        s0=None if hp_doc.get("s0") is None else np.array(hp_doc["s0"], dtype=float),
        projection=projection,
    )
    theta = np.array(doc["theta"], dtype=float)
    q = theta.shape[0]
    inverse = None
    if doc.get("inverse") is not None:
        inverse = InverseState(np.array(doc["inverse"], dtype=float).reshape(q, q))
    rng = None
    if doc.get("rng_state") is not None:
        bg = getattr(np.random, doc["rng_state"]["bit_generator"])()
        bg.state = doc["rng_state"]
        rng = np.random.Generator(bg)
    state = EstimatorState(
        algorithm=doc["algorithm"],
        theta=theta,
        theta_bar=None if doc.get("theta_bar") is None
        else np.array(doc["theta_bar"], dtype=float),
        inverse=inverse,
        n=int(doc["n"]),
        sse=float(doc["sse"]),
        rng=rng,
    )
    return state, hp


def checkpoint_to_json(state: EstimatorState, hp: HyperParams) -> str:
    return json.dumps(save_checkpoint(state, hp), sort_keys=True)


def checkpoint_from_json(text: str) -> tuple[EstimatorState, HyperParams]:
    return load_checkpoint(json.loads(text))

"""Regression models and synthetic data generation.

The estimation problem throughout is Y = f(X, theta) + noise, with X drawn
from a known covariate law and centered noise of finite variance. A model
bundles f, its gradient in the parameter, and the dimensions needed to size
estimator state. Model functions broadcast over leading axes so the same
callables serve scalar streams and batched Monte Carlo runs.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.integrate import simpson

__all__ = [
    "RegressionModel",
    "Observation",
    "SyntheticSpec",
    "exp_saturation_model",
    "linear_model",
    "get_model",
    "covariate_sampler",
    "noise_sampler",
    "sample_xy",
    "generate",
    "write_csv",
    "l_theta_quadrature",
    "l_theta_monte_carlo",
    "l_theta_oracle",
    "max_gradient_error",
]


@dataclass(frozen=True)
class RegressionModel:
    """A regression function y = f(x, h) with parameter gradient.

    Attributes:
        name: registry key, also written to data sidecars.
        param_dim: dimension q of the parameter h.
        covariate_dim: dimension p of the covariate x.
        eval: callable (x, h) -> f(x, h). Accepts x of shape (..., p) and
            h of shape (..., q); returns shape (...,).
        grad: callable (x, h) -> gradient of f in h, shape (..., q).
    """

    name: str
    param_dim: int
    covariate_dim: int
    eval: Callable[[np.ndarray, np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray, np.ndarray], np.ndarray]

    def __post_init__(self):
        if self.param_dim < 1 or self.covariate_dim < 1:
            raise ValueError("model dimensions must be positive")


@dataclass(frozen=True, slots=True)
class Observation:
    """One (covariate, response) pair from a data stream."""

    x: np.ndarray
    y: float


def _exp_sat_eval(x, h):
    x = np.asarray(x, dtype=float)
    h = np.asarray(h, dtype=float)
    # 1 - exp(-t) computed as -expm1(-t) to keep accuracy near t = 0
    return h[..., 0] * -np.expm1(-h[..., 1] * x[..., 0])


def _exp_sat_grad(x, h):
    x = np.asarray(x, dtype=float)
    h = np.asarray(h, dtype=float)
    x0 = x[..., 0]
    e = np.exp(-h[..., 1] * x0)
    d1 = -np.expm1(-h[..., 1] * x0)
    d2 = h[..., 0] * x0 * e
    return np.stack(np.broadcast_arrays(d1, d2), axis=-1)


def exp_saturation_model() -> RegressionModel:
    """Saturating exponential f(x, h) = h1 * (1 - exp(-h2 * x)), p = 1, q = 2."""
    return RegressionModel(
        name="exp_saturation",
        param_dim=2,
        covariate_dim=1,
        eval=_exp_sat_eval,
        grad=_exp_sat_grad,
    )


def linear_model(dim: int) -> RegressionModel:
    """Linear regression f(x, h) = <h, x> with p = q = dim."""

    def _eval(x, h):
        x = np.asarray(x, dtype=float)
        h = np.asarray(h, dtype=float)
        return np.sum(x * h, axis=-1)

    def _grad(x, h):
        x = np.asarray(x, dtype=float)
        h = np.asarray(h, dtype=float)
        # gradient is x itself; add 0*h so the result broadcasts to h's shape
        return x + 0.0 * h

    return RegressionModel(
        name=f"linear{dim}",
        param_dim=dim,
        covariate_dim=dim,
        eval=_eval,
        grad=_grad,
    )


def get_model(name: str, param_dim: int | None = None) -> RegressionModel:
    """Look up a registered model by name ('exp_saturation' or 'linear')."""
    if name == "exp_saturation":
        return exp_saturation_model()
    if name == "linear":
        if param_dim is None:
            raise ValueError("linear model requires param_dim")
        return linear_model(param_dim)
    raise ValueError(f"unknown model {name!r}")


_COVARIATE_SAMPLERS = {
    "uniform": lambda rng, n, p: rng.random((n, p)),
    "normal": lambda rng, n, p: rng.standard_normal((n, p)),
}

# noise laws are parameterized by their standard deviation sigma
_NOISE_SAMPLERS = {
    "normal": lambda rng, n, sigma: sigma * rng.standard_normal(n),
    "uniform": lambda rng, n, sigma: sigma * np.sqrt(3.0) * (2.0 * rng.random(n) - 1.0),
}


def covariate_sampler(name: str):
    try:
        return _COVARIATE_SAMPLERS[name]
    except KeyError:
        raise ValueError(f"unknown covariate law {name!r}") from None


def noise_sampler(name: str):
    try:
        return _NOISE_SAMPLERS[name]
    except KeyError:
        raise ValueError(f"unknown noise law {name!r}") from None


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a synthetic stream Y = f(X, theta_true) + noise.

    covariate and noise name laws from the sampler registries; the noise law
    is scaled to standard deviation noise_sigma. The seed fixes the stream
    exactly: equal specs generate identical observations.
    """

    model: RegressionModel
    theta_true: np.ndarray
    covariate: str = "uniform"
    noise: str = "normal"
    noise_sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        theta = np.array(self.theta_true, dtype=float)
        if theta.shape != (self.model.param_dim,):
            raise ValueError(
                f"theta_true must have shape ({self.model.param_dim},)"
            )
        if not np.all(np.isfinite(theta)):
            raise ValueError("theta_true must be finite")
        object.__setattr__(self, "theta_true", theta)
        covariate_sampler(self.covariate)
        noise_sampler(self.noise)
        if not (np.isfinite(self.noise_sigma) and self.noise_sigma > 0):
            raise ValueError("noise_sigma must be positive (degenerate noise disallowed)")


def sample_xy(spec: SyntheticSpec, n: int, rng: np.random.Generator | None = None):
    """Draw (X, Y) arrays of shapes (n, p) and (n,).

    Covariates are drawn first, then noise, so that the stream is a pure
    function of the generator state. Defaults to a fresh generator seeded
    with spec.seed.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    x = covariate_sampler(spec.covariate)(rng, n, spec.model.covariate_dim)
    eps = noise_sampler(spec.noise)(rng, n, spec.noise_sigma)
    y = spec.model.eval(x, spec.theta_true) + eps
    return x, y


def generate(spec: SyntheticSpec, n: int) -> list[Observation]:
    """Generate n observations of the stream described by spec."""
    x, y = sample_xy(spec, n)
    return [Observation(x[k], float(y[k])) for k in range(n)]


def write_csv(spec: SyntheticSpec, observations: list[Observation], path) -> Path:
    """Write observations as CSV with a JSON sidecar describing the stream.

    Columns are x_1,...,x_p,y. The sidecar (same stem, .json extension)
    records the model name, theta_true, the law names, sigma, and the seed.
    Returns the sidecar path.
    """
    path = Path(path)
    p = spec.model.covariate_dim
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x_{j + 1}" for j in range(p)] + ["y"])
        for obs in observations:
            writer.writerow([repr(float(v)) for v in np.atleast_1d(obs.x)]
                            + [repr(float(obs.y))])
    sidecar = path.with_suffix(".json")
    meta = {
        "model": spec.model.name,
        "param_dim": spec.model.param_dim,
        "covariate_dim": p,
        "theta_true": [float(v) for v in spec.theta_true],
        "covariate": spec.covariate,
        "noise": spec.noise,
        "noise_sigma": float(spec.noise_sigma),
        "seed": int(spec.seed),
        "n": len(observations),
    }
    with open(sidecar, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return sidecar


def l_theta_quadrature(model: RegressionModel, h, num_nodes: int = 2001) -> np.ndarray:
    """L(h) = E[grad f grad f^T] for uniform covariates on [0, 1], p = 1.

    Composite Simpson quadrature on an odd grid of at least 1001 nodes.
    """
    if model.covariate_dim != 1:
        raise ValueError("quadrature integrator only covers covariate_dim == 1")
    num_nodes = max(int(num_nodes), 1001)
    if num_nodes % 2 == 0:
        num_nodes += 1
    xs = np.linspace(0.0, 1.0, num_nodes)[:, None]
    g = model.grad(xs, np.asarray(h, dtype=float))
    outer = np.einsum("ni,nj->nij", g, g)
    mat = simpson(outer, x=xs[:, 0], axis=0)
    return (mat + mat.T) / 2


def l_theta_monte_carlo(
    model: RegressionModel,
    h,
    covariate: str = "uniform",
    mc_samples: int = 10_000,
    seed: int = 0,
):
    """Monte Carlo estimate of L(h) with elementwise standard errors.

    Returns (estimate, stderr), both (q, q). mc_samples must be at least
    10_000 for the estimate to be accepted as an oracle value.
    """
    if mc_samples < 10_000:
        raise ValueError("mc_samples must be >= 10000")
    rng = np.random.default_rng(seed)
    x = covariate_sampler(covariate)(rng, mc_samples, model.covariate_dim)
    g = model.grad(x, np.asarray(h, dtype=float))
    if not np.all(np.isfinite(g)):
        raise ValueError("non-finite gradient in Monte Carlo integration")
    outer = np.einsum("ni,nj->nij", g, g)
    mean = outer.mean(axis=0)
    se = outer.std(axis=0, ddof=1) / np.sqrt(mc_samples)
    return (mean + mean.T) / 2, se


def l_theta_oracle(
    model: RegressionModel,
    spec: SyntheticSpec,
    h=None,
    mc_samples: int = 10_000,
) -> np.ndarray:
    """L(h) under the covariate law of spec, at h (default theta_true).

    Uses Simpson quadrature when the law is uniform on [0, 1] with p = 1,
    and Monte Carlo integration otherwise.
    """
    if h is None:
        h = spec.theta_true
    if spec.covariate == "uniform" and model.covariate_dim == 1:
        return l_theta_quadrature(model, h)
    est, _ = l_theta_monte_carlo(model, h, spec.covariate, mc_samples, seed=spec.seed)
    return est


def max_gradient_error(
    model: RegressionModel,
    rng: np.random.Generator,
    n_points: int = 100,
    step: float = 1e-5,
    h_low: float = 0.5,
    h_high: float = 25.0,
) -> float:
    """Worst relative error of model.grad against central finite differences.

    Draws n_points random pairs (x, h) with x from U[0,1]^p and h uniform in
    [h_low, h_high]^q. The difference step for coordinate j is scaled by
    max(1, |h_j|). Relative error is measured in the Euclidean norm with a
    unit floor on the gradient magnitude.
    """
    q = model.param_dim
    worst = 0.0
    for _ in range(n_points):
        x = rng.random(model.covariate_dim)
        h = rng.uniform(h_low, h_high, size=q)
        analytic = np.asarray(model.grad(x, h), dtype=float)
        fd = np.empty(q)
        for j in range(q):
            dj = step * max(1.0, abs(h[j]))
            hp = h.copy()
            hm = h.copy()
            hp[j] += dj
            hm[j] -= dj
            fd[j] = (model.eval(x, hp) - model.eval(x, hm)) / (2 * dj)
        rel = np.linalg.norm(fd - analytic) / max(np.linalg.norm(analytic), 1.0)
        worst = max(worst, rel)
    return worst

"""Streaming Gauss-Newton estimation for nonlinear regression.

Online estimation of Y = f(X, theta) + noise with second-order stochastic
recursions whose conditioning matrix is tracked through rank-one inverse
updates, plus Polyak-Ruppert style averaging, gradient baselines, and a
Monte Carlo experiment harness with a command line front end.
"""

__version__ = "0.1.0"

from .estimators import (  # noqa: F401
    ALGORITHMS,
    Ball,
    EstimatorState,
    HyperParams,
    NumericalBreakdown,
    asgd_step,
    asgn_step,
    load_checkpoint,
    make_state,
    project,
    rls_step,
    save_checkpoint,
    sgd_step,
    sgn_step,
    sigma2,
    sigma2_update,
)
from .harness import (  # noqa: F401
    Cell,
    ExperimentConfig,
    ExperimentReport,
    run_curves,
    run_experiment,
    run_normality,
    run_table,
)
from .model import (  # noqa: F401
    Observation,
    RegressionModel,
    SyntheticSpec,
    exp_saturation_model,
    generate,
    l_theta_oracle,
    linear_model,
)
from .riccati import InverseState, double_update, rank_one_update  # noqa: F401
from .stats import (  # noqa: F401
    PivotSample,
    chi2_2_cdf,
    ks_statistic,
    mse_aggregate,
    pivot_cn,
    rate_slope,
)

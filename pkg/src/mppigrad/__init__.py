"""Sampling-based trajectory optimization as preconditioned gradient descent.

The package splits into: `problems` (dynamics, costs, feasibility),
`qp` (the lifted quadratic program and its verified reference solver),
`sampling` (Gaussian draws and self-normalized weights), `optimizer`
(the preconditioned iteration, exact mode, receding horizon), `analysis`
(exact oracles, smoothness certificates, probes), and `bench` (the CLI
harness).
"""

__version__ = "0.1.0"

from .errors import (
    AllInfeasibleError,
    ConfigError,
    ConvergenceError,
    DimensionMismatchError,
    InfeasibleProblemError,
    NotSpdError,
    QuadratureError,
    UnsupportedProblemError,
)
from .problems import (
    DubinsSpec,
    LqrSpec,
    TrajectoryProblem,
    double_integrator,
    dubins_problem,
    lqr_problem,
    rollout,
)
from .sampling import (
    GaussianPolicy,
    SampleBatch,
    WeightSummary,
    batch_rng,
    draw,
    evaluate,
    weigh,
    weighted_mean,
)
from .optimizer import (
    ClosedLoopTrace,
    IterationRecord,
    OptimizerTrace,
    PgdConfig,
    grad_estimate,
    pgd_step,
    receding_horizon,
    run,
    run_exact,
    step_size_rule,
)

__all__ = [
    "__version__",
    "AllInfeasibleError",
    "ConfigError",
    "ConvergenceError",
    "DimensionMismatchError",
    "InfeasibleProblemError",
    "NotSpdError",
    "QuadratureError",
    "UnsupportedProblemError",
    "DubinsSpec",
    "LqrSpec",
    "TrajectoryProblem",
    "double_integrator",
    "dubins_problem",
    "lqr_problem",
    "rollout",
    "GaussianPolicy",
    "SampleBatch",
    "WeightSummary",
    "batch_rng",
    "draw",
    "evaluate",
    "weigh",
    "weighted_mean",
    "ClosedLoopTrace",
    "IterationRecord",
    "OptimizerTrace",
    "PgdConfig",
    "grad_estimate",
    "pgd_step",
    "receding_horizon",
    "run",
    "run_exact",
    "step_size_rule",
]

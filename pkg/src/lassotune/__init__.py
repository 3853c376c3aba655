"""Bilevel hyperparameter selection for Lasso-type estimators.

Inner solvers (coordinate descent / proximal gradient), four
hypergradient engines, held-out and SURE outer criteria, and outer-loop
optimizers, with a CLI harness under `lassotune`.
"""

from .criteria import (
    CriterionEval,
    SureAux,
    dof_fdmc,
    heldout_eval,
    mse_to_truth,
    sure_epsilon,
    sure_eval,
)
from .datasets import (
    Dataset,
    DatasetError,
    Split,
    SvmlightParseError,
    load_dataset,
    make_nonunique_design,
    parse_svmlight,
    save_dataset,
    split_three_way,
    synthesize_dataset,
    write_svmlight,
)
from .hypergrad import (
    FDJacobian,
    Jacobian,
    RateCertificate,
    convergence_rate_bound,
    fd_jacobian_oracle,
    hypergrad_backward,
    hypergradient,
    jacobian_forward_iterdiff,
    jacobian_forward_mcp,
    jacobian_implicit,
    jacobian_implicit_forward,
    mahalanobis_norm,
    mcp_prox_partials,
    st_weak_derivatives,
)
from .outer import (
    HeldoutProblem,
    SureProblem,
    TunePoint,
    TuneTrace,
    default_lasso_bounds,
    grid_search,
    random_search,
    tune_hypergrad,
    wlasso_init,
)
from .solvers import (
    HyperParams,
    SolverError,
    SolverState,
    kkt_violation,
    lambda_max,
    make_solver,
    mcp_penalty,
    objective_value,
    penalty_value,
    prox_mcp,
    soft_threshold,
    solve,
    solve_lasso_bcd,
    solve_lasso_ista,
    solve_mcp_cd,
    solve_wlasso_bcd,
    spectral_norm_sq,
)

__version__ = "0.1.0"

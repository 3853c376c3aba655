"""Outer criteria: held-out squared error and a SURE estimate of risk.

Every criterion exposes its value and its gradient with respect to the
inner coefficients, which the hypergradient engines chain with the
Jacobian.  SURE differentiates through two coupled inner problems, so
its evaluation carries both partial gradients and both solved states.
"""

from dataclasses import dataclass

import numpy as np


@dataclass
class SureAux:
    """Pieces of a SURE evaluation needed downstream: the fixed probe
    delta, the finite-difference step, the dof estimate, and the
    gradient of the criterion through the perturbed inner problem."""

    epsilon: float
    sigma: float
    delta: np.ndarray
    dof: float
    grad_ydelta: np.ndarray


@dataclass
class CriterionEval:
    """Criterion value with its gradient in beta; aux is present exactly
    for SURE (the gradient then refers to the unperturbed problem)."""

    value: float
    grad: np.ndarray
    aux: SureAux | None = None


def heldout_eval(beta, X_val, y_val):
    """Validation squared error ||y_val - X_val beta||^2 and its
    gradient -2 X_val^T (y_val - X_val beta)."""
    resid = y_val - X_val @ beta
    return CriterionEval(
        value=float(resid @ resid),
        grad=-2.0 * (X_val.T @ resid),
    )


def sure_epsilon(sigma, n):
    """Default finite-difference step 2 sigma / n^0.3."""
    return 2.0 * sigma / n ** 0.3


def dof_fdmc(X, y, hp, epsilon, delta, solve, warm1=None, warm2=None):
    """Degrees-of-freedom probe <X beta(y + eps delta) - X beta(y), delta> / eps.

    Runs the two inner solves and returns them for warm-start reuse.

    Parameters
    ----------
    solve : callable (X, y, hp, warm) -> SolverState
    """
    state1 = solve(X, y, hp, warm1)
    state2 = solve(X, y + epsilon * delta, hp, warm2)
    dof = float((X @ (state2.beta - state1.beta)) @ delta) / epsilon
    return dof, state1, state2


def sure_eval(X, y, hp, sigma, epsilon, delta, solve, warm1=None, warm2=None):
    """SURE value ||y - X beta1||^2 - n sigma^2 + 2 sigma^2 dof with the
    finite-difference Monte-Carlo dof.

    The gradient splits over the two inner problems: the returned
    CriterionEval.grad differentiates through beta(y), while
    aux.grad_ydelta differentiates through beta(y + eps delta).

    Returns
    -------
    (CriterionEval, SolverState, SolverState)
    """
    n = X.shape[0]
    dof, state1, state2 = dof_fdmc(
        X, y, hp, epsilon, delta, solve, warm1=warm1, warm2=warm2
    )
    resid = y - X @ state1.beta
    value = float(resid @ resid) - n * sigma ** 2 + 2.0 * sigma ** 2 * dof
    xtd = X.T @ delta
    grad1 = -2.0 * (X.T @ resid) - (2.0 * sigma ** 2 / epsilon) * xtd
    grad2 = (2.0 * sigma ** 2 / epsilon) * xtd
    ev = CriterionEval(
        value=value,
        grad=grad1,
        aux=SureAux(epsilon=epsilon, sigma=sigma, delta=delta, dof=dof,
                    grad_ydelta=grad2),
    )
    return ev, state1, state2


def mse_to_truth(beta, beta_true):
    """Relative squared estimation error ||beta - beta_true||^2 /
    ||beta_true||^2."""
    beta_true = np.asarray(beta_true, dtype=np.float64)
    denom = float(beta_true @ beta_true)
    if denom == 0.0:
        raise ValueError("mse_to_truth undefined: beta_true is zero")
    diff = np.asarray(beta, dtype=np.float64) - beta_true
    return float(diff @ diff) / denom

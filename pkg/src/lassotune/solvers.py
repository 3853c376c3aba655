"""Inner solvers for Lasso-type estimators in the log parametrization.

Every model regularizes through e^lam: the Lasso objective is
||y - X beta||^2 / (2n) + e^lam ||beta||_1, the weighted variant carries
one lam_j per coordinate, and MCP adds a log concavity parameter gamma
with effective value e^gamma.  Solvers stop when the per-epoch objective
decrease relative to f(0) = ||y||^2 / (2n) drops below tol.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from . import _kernels

KINDS = ("lasso", "wlasso", "mcp")


class SolverError(ValueError):
    pass


@dataclass(frozen=True)
class HyperParams:
    """Log-scale regularization parameters of one model.

    lam holds the log parameters: shape (1,) for lasso, (p,) for wlasso,
    (2,) = (lam, gamma) for mcp.  The effective regularizer is exp(lam).
    """

    kind: str
    lam: np.ndarray

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SolverError(f"unknown model kind {self.kind!r}")
        lam = np.atleast_1d(np.asarray(self.lam, dtype=np.float64)).copy()
        if lam.ndim != 1 or not np.all(np.isfinite(lam)):
            raise SolverError("lam must be a finite 1-D array")
        if self.kind == "lasso" and lam.shape != (1,):
            raise SolverError("lasso takes a single lam")
        if self.kind == "mcp":
            if lam.shape != (2,):
                raise SolverError("mcp takes (lam, gamma)")
            if lam[1] <= 0:
                raise SolverError(
                    f"mcp needs e^gamma > 1, got gamma={lam[1]}"
                )
        lam.setflags(write=False)
        object.__setattr__(self, "lam", lam)

    @classmethod
    def lasso(cls, lam):
        return cls("lasso", np.array([lam], dtype=np.float64))

    @classmethod
    def wlasso(cls, lams):
        return cls("wlasso", np.asarray(lams, dtype=np.float64))

    @classmethod
    def mcp(cls, lam, gamma):
        return cls("mcp", np.array([lam, gamma], dtype=np.float64))

    def effective(self):
        return np.exp(self.lam)

    def with_lam(self, lam):
        return HyperParams(self.kind, lam)

    @property
    def r(self):
        """Number of hyperparameters."""
        return self.lam.shape[0]


@dataclass(frozen=True)
class SolverState:
    """Immutable snapshot of a finished inner solve."""

    beta: np.ndarray
    residual: np.ndarray
    support: np.ndarray
    s_hat: int
    objective_trace: np.ndarray
    epochs: int
    converged: bool


def _make_state(beta, r, trace, epochs, converged):
    beta = np.asarray(beta, dtype=np.float64).copy()
    r = np.asarray(r, dtype=np.float64).copy()
    support = np.flatnonzero(beta)
    trace = np.asarray(trace, dtype=np.float64)
    for a in (beta, r, support, trace):
        a.setflags(write=False)
    return SolverState(
        beta=beta, residual=r, support=support, s_hat=support.size,
        objective_trace=trace, epochs=epochs, converged=converged,
    )


def soft_threshold(t, tau):
    """Elementwise soft-thresholding ST(t, tau)."""
    return np.sign(t) * np.maximum(np.abs(t) - tau, 0.0)


def prox_mcp(t, lam, gamma):
    """Proximal map of the MCP penalty with threshold lam and concavity
    gamma > 1: soft-thresholding rescaled by 1/(1 - 1/gamma) inside
    |t| <= gamma * lam, the identity outside."""
    if np.any(np.asarray(gamma) <= 1.0):
        raise SolverError(f"prox_mcp needs gamma > 1, got {gamma}")
    return np.where(
        np.abs(t) <= gamma * lam,
        soft_threshold(t, lam) / (1.0 - 1.0 / np.asarray(gamma, dtype=float)),
        t,
    )


def mcp_penalty(t, lam, gamma):
    """MCP penalty value, elementwise."""
    t = np.abs(t)
    return np.where(
        t <= gamma * lam,
        lam * t - t * t / (2.0 * gamma),
        0.5 * gamma * lam * lam,
    )


def lambda_max(X, y):
    """Log of the smallest regularizer with an all-zero solution,
    log(||X^T y||_inf / n)."""
    n = X.shape[0]
    xty = X.T @ y
    if sparse.issparse(X):
        xty = np.asarray(xty).ravel()
    top = np.max(np.abs(xty)) if xty.size else 0.0
    if top == 0.0:
        raise SolverError("lambda_max undefined: X^T y is zero")
    return float(np.log(top / n))


def _as_dense_f(X):
    if sparse.issparse(X):
        X = X.toarray()
    return np.asfortranarray(X, dtype=np.float64)


def _col_norms2(X):
    norms2 = np.sum(X ** 2, axis=0)
    dead = np.flatnonzero(norms2 == 0.0)
    if dead.size:
        raise SolverError(
            f"zero columns {dead[:10].tolist()} cannot be updated"
        )
    return norms2


def _lam_eff_vector(hp, p):
    """Effective per-coordinate l1 weights e^{lam_j} (convex kinds only)."""
    if hp.kind == "lasso":
        return np.full(p, np.exp(hp.lam[0]))
    if hp.kind == "wlasso":
        if hp.lam.shape[0] != p:
            raise SolverError(
                f"wlasso needs p={p} parameters, got {hp.lam.shape[0]}"
            )
        return np.exp(hp.lam)
    raise SolverError(f"{hp.kind} has no per-coordinate l1 weights")


def penalty_value(beta, hp):
    """Penalty part of the objective."""
    if hp.kind == "mcp":
        lam, gamma = np.exp(hp.lam)
        return float(np.sum(mcp_penalty(beta, lam, gamma)))
    return float(np.sum(_lam_eff_vector(hp, beta.shape[0]) * np.abs(beta)))


def objective_value(X, y, beta, hp):
    """Penalized least-squares objective at beta."""
    n = X.shape[0]
    r = y - X @ beta
    return float(r @ r) / (2.0 * n) + penalty_value(beta, hp)


def _init_from_warm(X, y, p, warm):
    if warm is None:
        beta = np.zeros(p)
        r = y.astype(np.float64).copy()
    else:
        beta = np.asarray(getattr(warm, "beta", warm), dtype=np.float64).copy()
        if beta.shape != (p,):
            raise SolverError(f"warm start has shape {beta.shape}, want ({p},)")
        r = y - X @ beta
    return beta, r


def _f0(y, n):
    f0 = float(y @ y) / (2.0 * n)
    if f0 == 0.0:
        raise SolverError("stopping rule undefined: f(0) = 0 (y is zero)")
    return f0


def _run_epochs(step, X, y, hp, tol, max_epochs, beta, r):
    """Shared stopping loop: step() advances one epoch in place."""
    n = X.shape[0]
    f0 = _f0(y, n)
    trace = [float(r @ r) / (2.0 * n) + penalty_value(beta, hp)]
    converged = False
    epochs = 0
    for epoch in range(1, max_epochs + 1):
        step()
        f_new = float(r @ r) / (2.0 * n) + penalty_value(beta, hp)
        trace.append(f_new)
        epochs = epoch
        if (trace[-2] - f_new) / f0 < tol:
            converged = True
            break
    return trace, epochs, converged


def solve_lasso_bcd(X, y, hp, tol=1e-5, max_epochs=10_000, warm=None):
    """Cyclic coordinate descent for the Lasso or weighted Lasso.

    Parameters
    ----------
    X : ndarray (n, p)
    y : ndarray (n,)
    hp : HyperParams
        kind "lasso" or "wlasso".
    tol : float
        Relative per-epoch objective decrease under which to stop.
    max_epochs : int
    warm : SolverState or ndarray, optional

    Returns
    -------
    SolverState
    """
    if hp.kind not in ("lasso", "wlasso"):
        raise SolverError(f"solve_lasso_bcd got kind {hp.kind!r}")
    X = _as_dense_f(X)
    n, p = X.shape
    norms2 = _col_norms2(X)
    lam_eff = _lam_eff_vector(hp, p)
    thresh = n * lam_eff / norms2
    beta, r = _init_from_warm(X, y, p, warm)
    trace, epochs, converged = _run_epochs(
        lambda: _kernels.bcd_epoch(X, norms2, thresh, beta, r),
        X, y, hp, tol, max_epochs, beta, r,
    )
    return _make_state(beta, r, trace, epochs, converged)


def spectral_norm_sq(X, tol=1e-10, max_iter=1000):
    """||X||_2^2 by power iteration on X^T X (deterministic start)."""
    p = X.shape[1]
    v = np.random.Generator(np.random.Philox(0)).standard_normal(p)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = X.T @ (X @ v)
        lam_new = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        if abs(lam_new - lam) <= tol * max(abs(lam_new), 1.0):
            lam = lam_new
            break
        lam = lam_new
    return abs(lam)


def solve_lasso_ista(X, y, hp, tol=1e-5, max_epochs=10_000, warm=None):
    """Proximal gradient descent with step 1 / ||X||_2^2.

    One full-gradient step counts as one epoch for the stopping rule.
    """
    if hp.kind not in ("lasso", "wlasso"):
        raise SolverError(f"solve_lasso_ista got kind {hp.kind!r}")
    X = _as_dense_f(X)
    n, p = X.shape
    _col_norms2(X)
    alpha = spectral_norm_sq(X)
    if alpha == 0.0:
        raise SolverError("X is zero; step size undefined")
    lam_eff = _lam_eff_vector(hp, p)
    thresh = n * lam_eff / alpha
    beta, r = _init_from_warm(X, y, p, warm)

    def step():
        beta[:] = soft_threshold(beta + X.T @ r / alpha, thresh)
        r[:] = y - X @ beta

    trace, epochs, converged = _run_epochs(
        step, X, y, hp, tol, max_epochs, beta, r,
    )
    return _make_state(beta, r, trace, epochs, converged)


def solve_wlasso_bcd(X, y, hp, tol=1e-5, max_epochs=10_000, warm=None):
    """Coordinate descent with one threshold per coordinate."""
    if hp.kind != "wlasso":
        raise SolverError(f"solve_wlasso_bcd got kind {hp.kind!r}")
    return solve_lasso_bcd(X, y, hp, tol=tol, max_epochs=max_epochs, warm=warm)


def mcp_prox_params(hp, n, norms2):
    """Per-coordinate prox parameters (n e^lam / ||X_j||^2,
    e^gamma ||X_j||^2 / n); errors if any effective concavity is <= 1."""
    lam_e, gamma_e = np.exp(hp.lam)
    lam_prox = n * lam_e / norms2
    gamma_prox = gamma_e * norms2 / n
    bad = np.flatnonzero(gamma_prox <= 1.0)
    if bad.size:
        j = int(bad[0])
        raise SolverError(
            f"mcp curvature violated at column {j}: "
            f"e^gamma * ||X_j||^2 / n = {gamma_prox[j]} <= 1"
        )
    return lam_prox, gamma_prox


def solve_mcp_cd(X, y, hp, tol=1e-5, max_epochs=10_000, warm=None):
    """Cyclic coordinate descent for MCP-penalized least squares."""
    if hp.kind != "mcp":
        raise SolverError(f"solve_mcp_cd got kind {hp.kind!r}")
    X = _as_dense_f(X)
    n, p = X.shape
    norms2 = _col_norms2(X)
    lam_prox, gamma_prox = mcp_prox_params(hp, n, norms2)
    beta, r = _init_from_warm(X, y, p, warm)
    trace, epochs, converged = _run_epochs(
        lambda: _kernels.mcp_epoch(X, norms2, lam_prox, gamma_prox, beta, r),
        X, y, hp, tol, max_epochs, beta, r,
    )
    return _make_state(beta, r, trace, epochs, converged)


def solve(X, y, hp, solver="bcd", tol=1e-5, max_epochs=10_000, warm=None):
    """Dispatch to the solver matching (hp.kind, solver)."""
    if hp.kind == "mcp":
        if solver != "bcd":
            raise SolverError("mcp is solved by coordinate descent only")
        return solve_mcp_cd(X, y, hp, tol=tol, max_epochs=max_epochs, warm=warm)
    if solver == "bcd":
        return solve_lasso_bcd(X, y, hp, tol=tol, max_epochs=max_epochs, warm=warm)
    if solver == "ista":
        return solve_lasso_ista(X, y, hp, tol=tol, max_epochs=max_epochs, warm=warm)
    raise SolverError(f"unknown solver {solver!r}")


def make_solver(solver="bcd", tol=1e-5, max_epochs=10_000):
    """Bind solver options into a (X, y, hp, warm) -> SolverState handle."""

    def handle(X, y, hp, warm=None):
        return solve(X, y, hp, solver=solver, tol=tol, max_epochs=max_epochs,
                     warm=warm)

    return handle


def kkt_violation(X, y, beta, hp):
    """Max stationarity violation of the l1 optimality conditions.

    On the support: | X_j^T r / n - e^{lam_j} sign(beta_j) |.
    Off the support: max(|X_j^T r| / n - e^{lam_j}, 0).
    """
    if hp.kind == "mcp":
        raise SolverError(
            "kkt_violation covers convex kinds only; use fixed-point residue"
        )
    X = X.toarray() if sparse.issparse(X) else np.asarray(X, dtype=np.float64)
    n, p = X.shape
    beta = np.asarray(beta, dtype=np.float64)
    lam_eff = _lam_eff_vector(hp, p)
    corr = X.T @ (y - X @ beta) / n
    on = beta != 0
    viol = np.maximum(np.abs(corr) - lam_eff, 0.0)
    viol[on] = np.abs(corr[on] - lam_eff[on] * np.sign(beta[on]))
    return float(np.max(viol)) if p else 0.0

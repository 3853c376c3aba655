"""Jacobians of inner solutions with respect to log hyperparameters.

Four engines produce (or act like) the weak Jacobian J = d beta_hat /
d lam: a closed-form solve on the support (implicit), iterative
differentiation of the solver run in forward or backward mode, and a
decoupled variant that first solves, then iterates the Jacobian
fixed-point equation on the frozen support.
"""

from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from . import _kernels
from .solvers import (
    SolverError,
    _as_dense_f,
    _col_norms2,
    _f0,
    _init_from_warm,
    _lam_eff_vector,
    _make_state,
    mcp_prox_params,
    penalty_value,
    soft_threshold,
    solve,
    spectral_norm_sq,
)

# default element cap of the backward engine's iterate storage (2 GiB of
# float64)
DEFAULT_STORE = 2 ** 28


@dataclass
class Jacobian:
    """Weak Jacobian of beta_hat w.r.t. the log hyperparameters.

    data is a length-p vector for lasso (one hyperparameter), the
    (s_hat, s_hat) support block for wlasso (rows and columns indexed by
    `support`), and a (p, 2) matrix for mcp.  Off-support lasso entries
    are exactly zero.
    """

    kind: str
    p: int
    support: np.ndarray
    data: np.ndarray
    warning: str | None = None

    def to_dense(self):
        """Expand to the ambient (p, r) (or (p, p)) array."""
        if self.kind == "lasso":
            return self.data.reshape(-1, 1).copy()
        if self.kind == "wlasso":
            out = np.zeros((self.p, self.p))
            if self.support.size:
                out[np.ix_(self.support, self.support)] = self.data
            return out
        return self.data.copy()


def hypergradient(jac, crit_grad):
    """Chain rule J^T grad_C(beta_hat), returned with one entry per
    hyperparameter."""
    g = np.asarray(crit_grad, dtype=np.float64)
    if jac.kind == "lasso":
        return np.array([float(jac.data @ g)])
    if jac.kind == "wlasso":
        out = np.zeros(jac.p)
        if jac.support.size:
            out[jac.support] = jac.data.T @ g[jac.support]
        return out
    return jac.data.T @ g


def st_weak_derivatives(t, tau):
    """Weak partial derivatives of the soft-threshold: d/dt is the
    indicator of |t| > tau, d/dtau is -sign(t) on the same set."""
    t = np.asarray(t, dtype=np.float64)
    active = (np.abs(t) > tau).astype(np.float64)
    return active, -np.sign(t) * active


def mcp_prox_partials(t, lam, gamma):
    """Weak partials of prox_mcp w.r.t. its argument and both parameters.

    Zero in the dead zone |t| <= lam, the rescaled-soft-threshold branch
    on lam < |t| <= gamma * lam, and the identity branch outside.
    """
    if np.any(np.asarray(gamma) <= 1.0):
        raise SolverError(f"mcp_prox_partials needs gamma > 1, got {gamma}")
    t = np.asarray(t, dtype=np.float64)
    mid = (np.abs(t) > lam) & (np.abs(t) <= gamma * lam)
    outer = np.abs(t) > gamma * lam
    scale = 1.0 / (1.0 - 1.0 / gamma)
    d_t = np.where(outer, 1.0, np.where(mid, scale, 0.0))
    d_lam = np.where(mid, -np.sign(t) * scale, 0.0)
    d_gamma = np.where(
        mid, -soft_threshold(t, lam) / (gamma - 1.0) ** 2, 0.0
    )
    if t.ndim == 0:
        return float(d_t), float(d_lam), float(d_gamma)
    return d_t, d_lam, d_gamma


def _h_of(kind, p):
    # column of J whose threshold acts on each coordinate
    if kind == "wlasso":
        return np.arange(p, dtype=np.int64)
    return np.zeros(p, dtype=np.int64)


def _n_hyper(kind, p):
    return {"lasso": 1, "wlasso": p, "mcp": 2}[kind]


def _package(kind, p, J, support):
    if kind == "lasso":
        return Jacobian(kind=kind, p=p, support=support, data=J[:, 0].copy())
    if kind == "wlasso":
        block = J[np.ix_(support, support)].copy()
        return Jacobian(kind=kind, p=p, support=support, data=block)
    return Jacobian(kind=kind, p=p, support=support, data=J.copy())


def _dense_warm_jac(warm_jac, p, nh):
    if warm_jac is None:
        return np.zeros((p, nh))
    if isinstance(warm_jac, Jacobian):
        dense = warm_jac.to_dense()
    else:
        dense = np.asarray(warm_jac, dtype=np.float64)
    if dense.shape != (p, nh):
        raise SolverError(
            f"warm Jacobian has shape {dense.shape}, want ({p}, {nh})"
        )
    return dense.copy()


def jacobian_implicit(X, state, hp):
    """Closed-form Jacobian from the support optimality system.

    Solves X_S^T X_S J_S = -n e^{lam_S} sign(beta_S) (one right-hand
    side per active hyperparameter); off-support rows are exactly zero.
    Raises if the support Gram block is not positive definite.
    """
    if hp.kind == "mcp":
        raise SolverError("implicit engine covers l1 kinds; use forward for mcp")
    X = np.asarray(X.toarray() if hasattr(X, "toarray") else X, dtype=np.float64)
    n, p = X.shape
    S = state.support
    s = S.size
    if s == 0:
        if hp.kind == "lasso":
            return Jacobian("lasso", p, S, np.zeros(p))
        return Jacobian("wlasso", p, S, np.zeros((0, 0)))
    Xs = X[:, S]
    G = Xs.T @ Xs
    try:
        cho = sla.cho_factor(G)
    except np.linalg.LinAlgError:
        raise SolverError("support Gram not PD") from None
    # potrf can succeed on a singular block with a round-off pivot
    piv = np.abs(np.diag(cho[0]))
    if piv.min() <= 1e-7 * piv.max():
        raise SolverError("support Gram not PD")
    sign_s = np.sign(state.beta[S])
    if hp.kind == "lasso":
        rhs = n * np.exp(hp.lam[0]) * sign_s
        Js = -sla.cho_solve(cho, rhs)
        data = np.zeros(p)
        data[S] = Js
        return Jacobian("lasso", p, S, data)
    rhs = np.diag(n * np.exp(hp.lam[S]) * sign_s)
    block = -sla.cho_solve(cho, rhs)
    return Jacobian("wlasso", p, S, block)


def jacobian_forward_iterdiff(X, y, hp, solver="bcd", tol=1e-5,
                              max_epochs=10_000, warm=None, warm_jac=None,
                              return_trace=False):
    """Solve and differentiate jointly, one Jacobian update per
    coordinate update (forward-mode iterative differentiation).

    Parameters
    ----------
    X, y : design and targets.
    hp : HyperParams
    solver : {"bcd", "ista"}
        mcp supports "bcd" only.
    warm, warm_jac : optional warm starts for beta and the Jacobian
        recursion (both are carried across outer tuning steps).
    return_trace : bool
        Also return per-epoch sign vectors and Jacobian snapshots.

    Returns
    -------
    (SolverState, Jacobian) or (SolverState, Jacobian, trace dict)
    """
    X = _as_dense_f(X)
    n, p = X.shape
    norms2 = _col_norms2(X)
    nh = _n_hyper(hp.kind, p)
    beta, r = _init_from_warm(X, y, p, warm)
    J = np.asfortranarray(_dense_warm_jac(warm_jac, p, nh))
    dr = np.asfortranarray(-X @ J)

    if hp.kind == "mcp":
        if solver != "bcd":
            raise SolverError("mcp forward differentiation uses bcd only")
        lam_prox, gamma_prox = mcp_prox_params(hp, n, norms2)

        def step():
            _kernels.mcp_forward_epoch(
                X, norms2, lam_prox, gamma_prox, beta, r, J, dr
            )
    else:
        lam_eff = _lam_eff_vector(hp, p)
        h_of = _h_of(hp.kind, p)
        if solver == "bcd":
            thresh = n * lam_eff / norms2

            def step():
                _kernels.forward_epoch(X, norms2, thresh, h_of, beta, r, J, dr)
        elif solver == "ista":
            alpha = spectral_norm_sq(X)
            if alpha == 0.0:
                raise SolverError("X is zero; step size undefined")
            thresh = n * lam_eff / alpha
            rows = np.arange(p)

            def step():
                beta_new = soft_threshold(beta + X.T @ r / alpha, thresh)
                ind = (beta_new != 0.0).astype(np.float64)
                T = ind[:, None] * (J + X.T @ dr / alpha)
                T[rows, h_of] -= thresh * np.sign(beta_new)
                dr[:] = dr + X @ (J - T)
                J[:] = T
                beta[:] = beta_new
                r[:] = y - X @ beta
        else:
            raise SolverError(f"unknown solver {solver!r}")

    f0 = _f0(y, n)
    obj = [float(r @ r) / (2.0 * n) + penalty_value(beta, hp)]
    trace = {"signs": [], "jacs": []} if return_trace else None
    converged = False
    epochs = 0
    k_star = None
    for epoch in range(1, max_epochs + 1):
        step()
        f_new = float(r @ r) / (2.0 * n) + penalty_value(beta, hp)
        obj.append(f_new)
        epochs = epoch
        if return_trace:
            trace["signs"].append(np.sign(beta).astype(np.int8))
            trace["jacs"].append(J.copy())
        if k_star is None and (obj[-2] - f_new) / f0 < tol:
            # the Jacobian recursion starts at zero and contracts at the
            # same per-epoch rate as the iterates, so run the window again
            # to bring its error to a matching level
            k_star = epoch
            converged = True
        if k_star is not None and epoch >= 2 * k_star:
            break
    state = _make_state(beta, r, obj, epochs, converged)
    jac = _package(hp.kind, p, J, state.support)
    if return_trace:
        return state, jac, trace
    return state, jac


def jacobian_forward_mcp(X, y, hp, tol=1e-5, max_epochs=10_000, warm=None,
                         warm_jac=None, return_trace=False):
    """Joint CD plus Jacobian recursion for the mcp kind; columns of the
    returned (p, 2) Jacobian are d beta / d lam and d beta / d gamma."""
    if hp.kind != "mcp":
        raise SolverError(f"kind {hp.kind!r} is not mcp")
    return jacobian_forward_iterdiff(
        X, y, hp, solver="bcd", tol=tol, max_epochs=max_epochs, warm=warm,
        warm_jac=warm_jac, return_trace=return_trace,
    )


def jacobian_implicit_forward(X, y, hp, solver="bcd", tol=1e-5,
                              max_epochs=10_000, n_iter_jac=100, eps_jac=1e-3,
                              crit_grad=None, warm=None, warm_jac=None,
                              return_trace=False):
    """Solve first, then iterate the Jacobian fixed point on the frozen
    support (decoupled forward differentiation).

    With crit_grad given, passes stop early once the induced
    hypergradient moves by at most ||crit_grad||_inf * eps_jac in sup
    norm.  n_iter_jac=0 yields a zero Jacobian with a warning flag.

    Returns
    -------
    (SolverState, Jacobian) or (SolverState, Jacobian, trace dict)
    """
    if hp.kind == "mcp":
        raise SolverError(
            "implicit-forward engine covers l1 kinds; use forward for mcp"
        )
    state = solve(X, y, hp, solver=solver, tol=tol, max_epochs=max_epochs,
                  warm=warm)
    X = _as_dense_f(X)
    n, p = X.shape
    S = state.support
    s = S.size
    nh = 1 if hp.kind == "lasso" else s
    trace = {"jacs": [], "drs": []} if return_trace else None

    warning = None
    if n_iter_jac == 0:
        warning = "n_iter_jac=0: Jacobian passes skipped, hypergradient is zero"
    J = np.zeros((s, nh))
    if s and n_iter_jac > 0:
        Xs = np.asfortranarray(X[:, S])
        norms2s = np.sum(Xs ** 2, axis=0)
        lam_eff = _lam_eff_vector(hp, p)[S]
        threshs = n * lam_eff / norms2s
        signs = np.sign(state.beta[S])
        hcol = np.zeros(s, dtype=np.int64) if hp.kind == "lasso" \
            else np.arange(s, dtype=np.int64)
        if warm_jac is not None:
            dense = warm_jac.to_dense() if isinstance(warm_jac, Jacobian) \
                else np.asarray(warm_jac, dtype=np.float64)
            if hp.kind == "lasso":
                J = dense[S, :].reshape(s, 1).copy()
            else:
                J = dense[np.ix_(S, S)].copy()
        J = np.asfortranarray(J)
        dr = np.asfortranarray(-Xs @ J)
        g_s = None
        g_inf = 0.0
        hg_prev = None
        if crit_grad is not None:
            g_full = np.asarray(crit_grad, dtype=np.float64)
            g_s = g_full[S]
            g_inf = float(np.max(np.abs(g_full))) if g_full.size else 0.0
            hg_prev = J.T @ g_s
        for _ in range(n_iter_jac):
            _kernels.impfwd_pass(Xs, norms2s, threshs, signs, hcol, J, dr)
            if return_trace:
                trace["jacs"].append(J.copy())
                trace["drs"].append(dr.copy())
            if g_s is not None:
                hg = J.T @ g_s
                if np.max(np.abs(hg - hg_prev)) <= g_inf * eps_jac:
                    break
                hg_prev = hg

    if hp.kind == "lasso":
        data = np.zeros(p)
        if s:
            data[S] = J[:, 0]
        jac = Jacobian("lasso", p, S, data, warning=warning)
    else:
        jac = Jacobian("wlasso", p, S, J.copy(), warning=warning)
    if return_trace:
        return state, jac, trace
    return state, jac


def hypergrad_backward(X, y, hp, v, tol=1e-5, max_epochs=10_000,
                       max_store=DEFAULT_STORE):
    """Hypergradient J^T v by reverse-mode differentiation of the
    coordinate-descent run.

    The forward solve always starts from beta = 0 (a short warm-started
    epoch window truncates the adjoint recursion) and stores one beta
    iterate per epoch; storage beyond max_store elements raises.  v may
    be a length-p vector or a callable evaluated at the final beta.

    Returns
    -------
    (SolverState, ndarray of shape (r,))
    """
    if hp.kind == "mcp":
        raise SolverError("backward engine covers l1 kinds")
    X = _as_dense_f(X)
    n, p = X.shape
    norms2 = _col_norms2(X)
    lam_eff = _lam_eff_vector(hp, p)
    thresh = n * lam_eff / norms2
    beta = np.zeros(p)
    r = y.astype(np.float64).copy()
    f0 = _f0(y, n)
    obj = [float(r @ r) / (2.0 * n)]
    snaps = []
    converged = False
    epochs = 0
    k_star = None
    for epoch in range(1, max_epochs + 1):
        if (len(snaps) + 1) * p > max_store:
            raise SolverError(
                f"backward iterate storage exceeded: {epoch} epochs x {p} "
                f"coordinates > {max_store} elements"
            )
        _kernels.bcd_epoch(X, norms2, thresh, beta, r)
        snaps.append(beta.copy())
        f_new = float(r @ r) / (2.0 * n) + penalty_value(beta, hp)
        obj.append(f_new)
        epochs = epoch
        if k_star is None and (obj[-2] - f_new) / f0 < tol:
            # same doubled window as the forward-mode engine so both
            # truncate the product of per-epoch maps at the same depth
            k_star = epoch
            converged = True
        if k_star is not None and epoch >= 2 * k_star:
            break
    state = _make_state(beta, r, obj, epochs, converged)
    vv = v(state.beta) if callable(v) else np.asarray(v, dtype=np.float64)
    if vv.shape != (p,):
        raise SolverError(f"v has shape {vv.shape}, want ({p},)")
    sign_snaps = np.sign(np.asarray(snaps))
    h_of = _h_of(hp.kind, p)
    nh = _n_hyper(hp.kind, p)
    if p <= 4096:
        G = np.asfortranarray(X.T @ X)
        g = _kernels.backward_replay_gram(
            G, norms2, thresh, sign_snaps, vv, h_of, nh
        )
    else:
        g = _kernels.backward_replay_dots(
            X, norms2, thresh, sign_snaps, vv, h_of, nh
        )
    return state, g


@dataclass
class FDJacobian:
    """Central finite-difference Jacobian with support-stability flags."""

    jac: np.ndarray
    stable_per_param: np.ndarray
    stable: bool


def fd_jacobian_oracle(X, y, hp, solver="bcd", h=1e-5, tol=1e-12,
                       max_epochs=100_000):
    """Central differences of the inner solution map; flags parameters
    whose +/-h probes change the solution's sign pattern.

    Each probe is chained through warm restarts until the iterate stops
    moving: the solver's stopping floor varies smoothly with the
    regularization level, so a single finite-accuracy solve per probe
    leaves an h-independent bias in the quotient.
    """
    p = X.shape[1]
    r = hp.r
    jac = np.zeros((p, r))
    stable = np.zeros(r, dtype=bool)

    def probe(hp_probe):
        st = solve(X, y, hp_probe, solver=solver, tol=tol,
                   max_epochs=max_epochs)
        for _ in range(40):
            nxt = solve(X, y, hp_probe, solver=solver, tol=tol,
                        max_epochs=max_epochs, warm=st)
            if np.max(np.abs(nxt.beta - st.beta)) <= 1e-13:
                return nxt
            st = nxt
        return st

    for i in range(r):
        lam_plus = hp.lam.copy()
        lam_plus[i] += h
        lam_minus = hp.lam.copy()
        lam_minus[i] -= h
        s_plus = probe(hp.with_lam(lam_plus))
        s_minus = probe(hp.with_lam(lam_minus))
        jac[:, i] = (s_plus.beta - s_minus.beta) / (2.0 * h)
        stable[i] = np.array_equal(np.sign(s_plus.beta), np.sign(s_minus.beta))
    return FDJacobian(jac=jac, stable_per_param=stable, stable=bool(stable.all()))


@dataclass
class RateCertificate:
    """Spectral bound on the per-epoch contraction of the Jacobian error."""

    C: float
    support: np.ndarray


def convergence_rate_bound(X, support):
    """Norm of the composed per-coordinate error maps over one epoch.

    Builds A^(j) = I - G^{1/2} e_j e_j^T G^{1/2} / ||X_j||^2 on the
    support (ascending), composes them in update order, and returns the
    spectral norm C in [0, 1) when the support Gram is PD.
    """
    support = np.sort(np.asarray(support, dtype=np.int64))
    X = np.asarray(X.toarray() if hasattr(X, "toarray") else X, dtype=np.float64)
    Xs = X[:, support]
    G = Xs.T @ Xs
    w, V = np.linalg.eigh(G)
    if support.size and w[0] <= 1e-12 * max(float(w[-1]), 1.0):
        raise SolverError("support Gram not PD; rate bound undefined")
    Ghalf = (V * np.sqrt(np.maximum(w, 0.0))) @ V.T
    s = support.size
    P = np.eye(s)
    for t in range(s):
        A = np.eye(s) - np.outer(Ghalf[:, t], Ghalf[t, :]) / G[t, t]
        P = A @ P
    C = float(np.linalg.norm(P, 2)) if s else 0.0
    return RateCertificate(C=C, support=support)


def mahalanobis_norm(x, A):
    """sqrt(x^T A^{-1} x) for SPD A."""
    x = np.asarray(x, dtype=np.float64)
    cho = sla.cho_factor(np.asarray(A, dtype=np.float64))
    return float(np.sqrt(x @ sla.cho_solve(cho, x)))

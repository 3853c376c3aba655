"""Compiled inner loops for coordinate descent and its differentiated variants.

All kernels take Fortran-ordered float64 arrays so column slices are
contiguous, mutate their arguments in place, and run one epoch (or one
pass) per call; stopping rules live in the callers.
"""

import numba
import numpy as np


@numba.njit(cache=True)
def _st(t, tau):
    # scalar soft-threshold
    if t > tau:
        return t - tau
    if t < -tau:
        return t + tau
    return 0.0


@numba.njit(cache=True)
def _prox_mcp(t, lam, gamma):
    # scalar MCP proximal map, requires gamma > 1
    if abs(t) <= gamma * lam:
        return _st(t, lam) / (1.0 - 1.0 / gamma)
    return t


@numba.njit(cache=True)
def bcd_epoch(X, norms2, thresh, beta, r):
    """One cyclic coordinate-descent epoch for an l1 penalty.

    thresh[j] is the coordinate threshold n * e^{lam_j} / ||X_j||^2.
    beta and the residual r = y - X @ beta are updated in place.
    """
    n, p = X.shape
    for j in range(p):
        acc = 0.0
        for i in range(n):
            acc += X[i, j] * r[i]
        z = beta[j] + acc / norms2[j]
        bnew = _st(z, thresh[j])
        d = bnew - beta[j]
        if d != 0.0:
            for i in range(n):
                r[i] -= X[i, j] * d
            beta[j] = bnew


@numba.njit(cache=True)
def mcp_epoch(X, norms2, lam_prox, gamma_prox, beta, r):
    """One cyclic coordinate-descent epoch for the MCP penalty.

    lam_prox[j] = n * e^lam / ||X_j||^2 and gamma_prox[j] =
    e^gamma * ||X_j||^2 / n are the per-coordinate prox parameters.
    """
    n, p = X.shape
    for j in range(p):
        acc = 0.0
        for i in range(n):
            acc += X[i, j] * r[i]
        z = beta[j] + acc / norms2[j]
        bnew = _prox_mcp(z, lam_prox[j], gamma_prox[j])
        d = bnew - beta[j]
        if d != 0.0:
            for i in range(n):
                r[i] -= X[i, j] * d
            beta[j] = bnew


@numba.njit(cache=True)
def forward_epoch(X, norms2, thresh, h_of, beta, r, J, dr):
    """One epoch of coordinate descent differentiated in forward mode.

    J is (p, nh) with one column per hyperparameter; h_of[j] is the
    column whose threshold acts on coordinate j (all zeros when a single
    lambda is shared).  dr = -X @ J is maintained incrementally.
    """
    n, p = X.shape
    nh = J.shape[1]
    for j in range(p):
        nj = norms2[j]
        acc = 0.0
        for i in range(n):
            acc += X[i, j] * r[i]
        z = beta[j] + acc / nj
        bnew = _st(z, thresh[j])
        d = bnew - beta[j]
        if d != 0.0:
            for i in range(n):
                r[i] -= X[i, j] * d
            beta[j] = bnew
        if bnew > 0.0:
            s = 1.0
        elif bnew < 0.0:
            s = -1.0
        else:
            s = 0.0
        for c in range(nh):
            old = J[j, c]
            if s == 0.0:
                v = 0.0
            else:
                accd = 0.0
                for i in range(n):
                    accd += X[i, j] * dr[i, c]
                v = old + accd / nj
                if c == h_of[j]:
                    v -= thresh[j] * s
            dJ = v - old
            if dJ != 0.0:
                for i in range(n):
                    dr[i, c] -= X[i, j] * dJ
                J[j, c] = v


@numba.njit(cache=True)
def mcp_forward_epoch(X, norms2, lam_prox, gamma_prox, beta, r, J, dr):
    """One MCP coordinate-descent epoch differentiated in forward mode.

    J is (p, 2): column 0 carries d beta / d lam, column 1 carries
    d beta / d gamma (both in log parametrization).
    """
    n, p = X.shape
    for j in range(p):
        nj = norms2[j]
        lam = lam_prox[j]
        gam = gamma_prox[j]
        acc = 0.0
        for i in range(n):
            acc += X[i, j] * r[i]
        z = beta[j] + acc / nj
        az = abs(z)
        # weak derivatives of the prox at (z, lam, gam)
        dt = 0.0
        dl = 0.0
        dg = 0.0
        if az > gam * lam:
            dt = 1.0
        elif az > lam:
            scale = 1.0 / (1.0 - 1.0 / gam)
            dt = scale
            if z > 0.0:
                dl = -scale
            else:
                dl = scale
            dg = -_st(z, lam) / ((gam - 1.0) * (gam - 1.0))
        for c in range(2):
            old = J[j, c]
            if dt == 0.0:
                v = 0.0
            else:
                accd = 0.0
                for i in range(n):
                    accd += X[i, j] * dr[i, c]
                v = dt * (old + accd / nj)
            if c == 0:
                v += dl * lam
            else:
                v += dg * gam
            dJ = v - old
            if dJ != 0.0:
                for i in range(n):
                    dr[i, c] -= X[i, j] * dJ
                J[j, c] = v
        bnew = _prox_mcp(z, lam, gam)
        d = bnew - beta[j]
        if d != 0.0:
            for i in range(n):
                r[i] -= X[i, j] * d
            beta[j] = bnew


@numba.njit(cache=True)
def impfwd_pass(Xs, norms2s, threshs, signs, hcol, J, dr):
    """One support-restricted fixed-point pass of the Jacobian recursion.

    Xs holds the active columns, signs the (frozen) signs of the solution
    on the support.  J is (s_hat, nh), dr = -Xs @ J is kept coherent.
    """
    n, sh = Xs.shape
    nh = J.shape[1]
    for s in range(sh):
        nj = norms2s[s]
        for c in range(nh):
            accd = 0.0
            for i in range(n):
                accd += Xs[i, s] * dr[i, c]
            v = J[s, c] + accd / nj
            if c == hcol[s]:
                v -= threshs[s] * signs[s]
            dJ = v - J[s, c]
            if dJ != 0.0:
                for i in range(n):
                    dr[i, c] -= Xs[i, s] * dJ
                J[s, c] = v
    return J


@numba.njit(cache=True)
def backward_replay_gram(G, norms2, thresh, sign_snaps, v, h_of, nh):
    """Reverse sweep of the adjoint recursion using a precomputed Gram matrix.

    sign_snaps[k, j] is sign(beta_j) at the end of forward epoch k, which
    equals its sign right after update (k, j).  Epochs are replayed last
    to first, coordinates in descending order inside each epoch, so the
    sweep is the exact transpose of the forward pass.
    """
    K, p = sign_snaps.shape
    alpha = v.copy()
    g = np.zeros(nh)
    for k in range(K - 1, -1, -1):
        for j in range(p - 1, -1, -1):
            s = sign_snaps[k, j]
            if s == 0.0:
                alpha[j] = 0.0
            else:
                aj = alpha[j]
                if aj != 0.0:
                    g[h_of[j]] -= thresh[j] * s * aj
                    c = aj / norms2[j]
                    for i in range(p):
                        alpha[i] -= c * G[i, j]
                    # exact: the update zeroes its own coordinate
                    alpha[j] = 0.0
    return g


@numba.njit(cache=True)
def backward_replay_dots(X, norms2, thresh, sign_snaps, v, h_of, nh):
    """Gram-free variant of backward_replay_gram for wide designs."""
    n, p = X.shape
    K = sign_snaps.shape[0]
    alpha = v.copy()
    g = np.zeros(nh)
    for k in range(K - 1, -1, -1):
        for j in range(p - 1, -1, -1):
            s = sign_snaps[k, j]
            if s == 0.0:
                alpha[j] = 0.0
            else:
                aj = alpha[j]
                if aj != 0.0:
                    g[h_of[j]] -= thresh[j] * s * aj
                    c = aj / norms2[j]
                    for i in range(p):
                        acc = 0.0
                        for t in range(n):
                            acc += X[t, i] * X[t, j]
                        alpha[i] -= c * acc
                    alpha[j] = 0.0
    return g

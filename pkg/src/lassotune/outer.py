"""Outer-loop optimizers over the regularization parameters.

A "problem" bundles one outer criterion with one hypergradient engine
behind two methods: value(hp, ctx) and grad_at(hp, ctx).  ctx is an
opaque warm-start carrier (inner states and Jacobians) threaded through
consecutive evaluations; passing ctx=None starts cold.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .criteria import heldout_eval, sure_eval
from .hypergrad import (
    hypergrad_backward,
    hypergradient,
    jacobian_forward_iterdiff,
    jacobian_implicit,
    jacobian_implicit_forward,
)
from .solvers import HyperParams, SolverError, solve

ENGINES = ("implicit", "implicit_forward", "forward", "backward")


@dataclass(frozen=True)
class TunePoint:
    """One outer step: where we were, what it cost, how we moved."""

    hp: HyperParams
    criterion: float
    hypergrad: np.ndarray | None
    step: float
    wall_time: float


@dataclass
class TuneTrace:
    """Sequence of outer steps with the best point seen."""

    iterates: list = field(default_factory=list)
    best_hp: HyperParams | None = None
    best_criterion: float = np.inf
    budget_used: int = 0

    def finalize(self):
        best = np.inf
        for pt in self.iterates:
            if pt.criterion < best:
                best = pt.criterion
                self.best_hp = pt.hp
                self.best_criterion = best
        self.budget_used = len(self.iterates)
        return self


class HeldoutProblem:
    """Held-out validation loss of the inner solution on a train split."""

    def __init__(self, X_train, y_train, X_val, y_val, engine="implicit_forward",
                 solver="bcd", tol=1e-5, max_epochs=10_000, n_iter_jac=100,
                 eps_jac=1e-3):
        if engine not in ENGINES:
            raise SolverError(f"unknown engine {engine!r}")
        self.X_train = X_train
        self.y_train = y_train
        self.X_val = X_val
        self.y_val = y_val
        self.engine = engine
        self.solver = solver
        self.tol = tol
        self.max_epochs = max_epochs
        self.n_iter_jac = n_iter_jac
        self.eps_jac = eps_jac

    def value(self, hp, ctx=None):
        ctx = dict(ctx or {})
        state = solve(self.X_train, self.y_train, hp, solver=self.solver,
                      tol=self.tol, max_epochs=self.max_epochs,
                      warm=ctx.get("state"))
        ctx["state"] = state
        ev = heldout_eval(state.beta, self.X_val, self.y_val)
        return ev.value, ctx

    def grad_at(self, hp, ctx):
        ctx = dict(ctx)
        state = ctx["state"]
        if self.engine == "implicit":
            jac = jacobian_implicit(self.X_train, state, hp)
            g = hypergradient(jac, heldout_eval(state.beta, self.X_val,
                                                self.y_val).grad)
        elif self.engine == "implicit_forward":
            crit_grad = heldout_eval(state.beta, self.X_val, self.y_val).grad
            state, jac = jacobian_implicit_forward(
                self.X_train, self.y_train, hp, solver=self.solver,
                tol=self.tol, max_epochs=self.max_epochs,
                n_iter_jac=self.n_iter_jac, eps_jac=self.eps_jac,
                crit_grad=crit_grad, warm=state, warm_jac=ctx.get("jac"),
            )
            ctx["state"] = state
            ctx["jac"] = jac
            g = hypergradient(jac, heldout_eval(state.beta, self.X_val,
                                                self.y_val).grad)
        elif self.engine == "forward":
            state, jac = jacobian_forward_iterdiff(
                self.X_train, self.y_train, hp, solver=self.solver,
                tol=self.tol, max_epochs=self.max_epochs, warm=state,
                warm_jac=ctx.get("jac"),
            )
            ctx["state"] = state
            ctx["jac"] = jac
            g = hypergradient(jac, heldout_eval(state.beta, self.X_val,
                                                self.y_val).grad)
        else:
            Xv, yv = self.X_val, self.y_val
            state, g = hypergrad_backward(
                self.X_train, self.y_train, hp,
                v=lambda beta: heldout_eval(beta, Xv, yv).grad,
                tol=self.tol, max_epochs=self.max_epochs,
            )
            ctx["state"] = state
        return g, ctx


class SureProblem:
    """SURE risk estimate; differentiates through both inner problems."""

    def __init__(self, X, y, sigma, epsilon, delta, engine="implicit_forward",
                 solver="bcd", tol=1e-5, max_epochs=10_000, n_iter_jac=100,
                 eps_jac=1e-3):
        if engine not in ENGINES:
            raise SolverError(f"unknown engine {engine!r}")
        self.X = X
        self.y = y
        self.sigma = sigma
        self.epsilon = epsilon
        self.delta = delta
        self.engine = engine
        self.solver = solver
        self.tol = tol
        self.max_epochs = max_epochs
        self.n_iter_jac = n_iter_jac
        self.eps_jac = eps_jac

    def _solve_handle(self):
        def handle(X, y, hp, warm=None):
            return solve(X, y, hp, solver=self.solver, tol=self.tol,
                         max_epochs=self.max_epochs, warm=warm)
        return handle

    def value(self, hp, ctx=None):
        ctx = dict(ctx or {})
        ev, s1, s2 = sure_eval(
            self.X, self.y, hp, self.sigma, self.epsilon, self.delta,
            self._solve_handle(), warm1=ctx.get("state1"),
            warm2=ctx.get("state2"),
        )
        ctx["state1"] = s1
        ctx["state2"] = s2
        ctx["ev"] = ev
        return ev.value, ctx

    def grad_at(self, hp, ctx):
        ctx = dict(ctx)
        ev = ctx["ev"]
        grad1, grad2 = ev.grad, ev.aux.grad_ydelta
        y2 = self.y + self.epsilon * self.delta
        if self.engine == "implicit":
            jac1 = jacobian_implicit(self.X, ctx["state1"], hp)
            jac2 = jacobian_implicit(self.X, ctx["state2"], hp)
        elif self.engine == "implicit_forward":
            s1, jac1 = jacobian_implicit_forward(
                self.X, self.y, hp, solver=self.solver, tol=self.tol,
                max_epochs=self.max_epochs, n_iter_jac=self.n_iter_jac,
                eps_jac=self.eps_jac, crit_grad=grad1,
                warm=ctx["state1"], warm_jac=ctx.get("jac1"),
            )
            s2, jac2 = jacobian_implicit_forward(
                self.X, y2, hp, solver=self.solver, tol=self.tol,
                max_epochs=self.max_epochs, n_iter_jac=self.n_iter_jac,
                eps_jac=self.eps_jac, crit_grad=grad2,
                warm=ctx["state2"], warm_jac=ctx.get("jac2"),
            )
            ctx.update(state1=s1, state2=s2, jac1=jac1, jac2=jac2)
        elif self.engine == "forward":
            s1, jac1 = jacobian_forward_iterdiff(
                self.X, self.y, hp, solver=self.solver, tol=self.tol,
                max_epochs=self.max_epochs, warm=ctx["state1"],
                warm_jac=ctx.get("jac1"),
            )
            s2, jac2 = jacobian_forward_iterdiff(
                self.X, y2, hp, solver=self.solver, tol=self.tol,
                max_epochs=self.max_epochs, warm=ctx["state2"],
                warm_jac=ctx.get("jac2"),
            )
            ctx.update(state1=s1, state2=s2, jac1=jac1, jac2=jac2)
        else:
            X, y, sig, eps, delta = (self.X, self.y, self.sigma, self.epsilon,
                                     self.delta)
            xtd = X.T @ delta

            def v1(beta):
                resid = y - X @ beta
                return -2.0 * (X.T @ resid) - (2.0 * sig ** 2 / eps) * xtd

            s1, g1 = hypergrad_backward(X, y, hp, v=v1, tol=self.tol,
                                        max_epochs=self.max_epochs)
            s2, g2 = hypergrad_backward(X, y2, hp, v=grad2, tol=self.tol,
                                        max_epochs=self.max_epochs)
            ctx.update(state1=s1, state2=s2)
            return g1 + g2, ctx
        return hypergradient(jac1, grad1) + hypergradient(jac2, grad2), ctx


def default_lasso_bounds(lam_max):
    """Componentwise clip box for Lasso descent."""
    lo = lam_max - 4.0 * np.log(10.0) + np.log(1e-2)
    return np.array([[lo, lam_max]])


def _clip(lam, bounds):
    if bounds is None:
        return lam
    b = np.asarray(bounds, dtype=np.float64)
    if b.shape == (2,):
        b = np.tile(b, (lam.shape[0], 1))
    return np.clip(lam, b[:, 0], b[:, 1])


def tune_hypergrad(problem, hp0, budget=50, bounds=None, max_halvings=20,
                   grad_tol=1e-12, step0=1.0):
    """Hypergradient descent with a backtracking-and-growth line search.

    Each outer step costs one budget unit (the initial evaluation
    included).  A step shrinks rho by halving at most max_halvings times
    looking for a strict criterion decrease; on success rho doubles for
    the next step, on failure the iterate stays put and the step still
    consumes budget.  step0 is the sup-norm length of the first proposed
    move in log-parameter space.  Returns the best point seen.
    """
    if budget < 1:
        raise SolverError("budget must be at least 1")
    trace = TuneTrace()
    t0 = time.perf_counter()
    val, ctx = problem.value(hp0, None)
    grad, ctx = problem.grad_at(hp0, ctx)
    trace.iterates.append(TunePoint(hp0, val, grad, 0.0,
                                    time.perf_counter() - t0))
    hp_cur, val_cur = hp0, val
    g_inf = float(np.max(np.abs(grad)))
    if g_inf <= grad_tol:
        return trace.finalize()
    rho = step0 / g_inf
    while len(trace.iterates) < budget:
        t0 = time.perf_counter()
        accepted = False
        rho_try = rho
        hp_new = hp_cur
        val_new = val_cur
        ctx_new = ctx
        for _ in range(max_halvings + 1):
            lam_new = _clip(hp_cur.lam - rho_try * grad, bounds)
            if np.array_equal(lam_new, hp_cur.lam):
                rho_try /= 2.0
                continue
            cand = hp_cur.with_lam(lam_new)
            v_cand, ctx_cand = problem.value(cand, ctx)
            if v_cand < val_cur:
                accepted = True
                hp_new, val_new, ctx_new = cand, v_cand, ctx_cand
                break
            rho_try /= 2.0
        if accepted:
            grad, ctx = problem.grad_at(hp_new, ctx_new)
            hp_cur, val_cur = hp_new, val_new
            trace.iterates.append(TunePoint(hp_cur, val_cur, grad, rho_try,
                                            time.perf_counter() - t0))
            rho = 2.0 * rho_try
        else:
            trace.iterates.append(TunePoint(hp_cur, val_cur, grad, 0.0,
                                            time.perf_counter() - t0))
        g_inf = float(np.max(np.abs(grad)))
        if g_inf <= grad_tol:
            break
    return trace.finalize()


def grid_search(value_fn, lam_max, n_points=100):
    """Evaluate on n_points descending from lam_max to lam_max - 4 log 10,
    warm-starting along the path; ties break to the earliest point."""
    grid = np.linspace(lam_max, lam_max - 4.0 * np.log(10.0), n_points)
    trace = TuneTrace()
    ctx = None
    for lam in grid:
        t0 = time.perf_counter()
        hp = HyperParams.lasso(lam)
        val, ctx = value_fn(hp, ctx)
        trace.iterates.append(TunePoint(hp, val, None, 0.0,
                                        time.perf_counter() - t0))
    return trace.finalize()


def random_search(value_fn, lam_max, n_points=100, seed=0):
    """Evaluate at n_points iid uniform draws over the same 4-decade
    interval the grid covers, in draw order."""
    rng = np.random.Generator(np.random.Philox(seed))
    lams = lam_max - 4.0 * np.log(10.0) * rng.random(n_points)
    trace = TuneTrace()
    ctx = None
    for lam in lams:
        t0 = time.perf_counter()
        hp = HyperParams.lasso(lam)
        val, ctx = value_fn(hp, ctx)
        trace.iterates.append(TunePoint(hp, val, None, 0.0,
                                        time.perf_counter() - t0))
    return trace.finalize()


class _RegularizedProblem:
    """Adds gamma * ||lam||^2 to another problem's criterion."""

    def __init__(self, inner, gamma):
        self.inner = inner
        self.gamma = gamma

    def value(self, hp, ctx=None):
        v, ctx = self.inner.value(hp, ctx)
        return v + self.gamma * float(hp.lam @ hp.lam), ctx

    def grad_at(self, hp, ctx):
        g, ctx = self.inner.grad_at(hp, ctx)
        return g + 2.0 * self.gamma * hp.lam, ctx


def wlasso_init(problem, p, lam_max, budget=50, gamma_reg=None):
    """Warm-up run for the weighted Lasso: descend the criterion plus
    gamma * sum lam_j^2 from (lam_max - log 10) * ones.

    gamma_reg defaults to one hundredth of the criterion at lam_max
    (where the inner solution is all-zero).  A heavier ridge puts the
    per-coordinate equilibria of weak signal coordinates so close to
    their activation thresholds that the growing line-search steps jump
    them into the inactive region, where their hypergradient vanishes
    and the ridge pins them permanently.  Returns (hp, trace of the
    regularized run).
    """
    if gamma_reg is None:
        c0, _ = problem.value(HyperParams.wlasso(np.full(p, lam_max)), None)
        gamma_reg = c0 / 100.0
    hp0 = HyperParams.wlasso(np.full(p, lam_max - np.log(10.0)))
    trace = tune_hypergrad(_RegularizedProblem(problem, gamma_reg), hp0,
                           budget=budget, bounds=None)
    return trace.best_hp, trace

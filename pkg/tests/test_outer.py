"""Outer optimizers: descent with line search, grid/random baselines."""

import numpy as np
import pytest

from lassotune import (
    HeldoutProblem,
    HyperParams,
    SolverError,
    default_lasso_bounds,
    grid_search,
    lambda_max,
    random_search,
    solve,
    split_three_way,
    synthesize_dataset,
    tune_hypergrad,
    wlasso_init,
)

FOUR_DECADES = 4.0 * np.log(10.0)


class _FlatProblem:
    """Constant criterion with zero gradient."""

    def __init__(self, c=7.0):
        self.c = c

    def value(self, hp, ctx=None):
        return self.c, ctx

    def grad_at(self, hp, ctx):
        return np.zeros_like(hp.lam), ctx


def _heldout_problem(n=90, p=40, seed=0, **kw):
    ds = synthesize_dataset(n=n, p=p, k=5, snr=3.0, seed=seed)
    sp = split_three_way(ds, seed=seed)
    X = ds.X_dense()
    return HeldoutProblem(X[sp.train_idx], ds.y[sp.train_idx],
                          X[sp.val_idx], ds.y[sp.val_idx], **kw)


def test_grid_geometry():
    seen = []

    def fn(hp, ctx):
        seen.append(hp.lam[0])
        return 1.0, ctx

    trace = grid_search(fn, lam_max=2.0, n_points=100)
    assert len(seen) == 100
    assert len(trace.iterates) == 100
    assert seen[0] == 2.0
    assert abs(seen[-1] - (2.0 - FOUR_DECADES)) <= 1e-12
    gaps = np.diff(seen)
    assert np.max(np.abs(gaps + FOUR_DECADES / 99.0)) <= 1e-12


def test_grid_constant_ties_to_first():
    trace = grid_search(lambda hp, ctx: (3.0, ctx), lam_max=1.5, n_points=10)
    assert trace.best_hp.lam[0] == 1.5
    assert trace.best_criterion == 3.0
    assert trace.budget_used == 10


def test_grid_quadratic_picks_nearest_point():
    lam_max = 1.0
    c = lam_max - 1.7

    def fn(hp, ctx):
        return float((hp.lam[0] - c) ** 2), ctx

    trace = grid_search(fn, lam_max=lam_max, n_points=100)
    grid = np.linspace(lam_max, lam_max - FOUR_DECADES, 100)
    want = grid[np.argmin((grid - c) ** 2)]
    assert trace.best_hp.lam[0] == want


def test_grid_threads_warm_context():
    ctxs = []

    def fn(hp, ctx):
        ctxs.append(ctx)
        return 1.0, (0 if ctx is None else ctx) + 1

    grid_search(fn, lam_max=0.0, n_points=5)
    assert ctxs == [None, 1, 2, 3, 4]


def test_random_search_range_and_determinism():
    seen = []

    def fn(hp, ctx):
        seen.append(hp.lam[0])
        return float(hp.lam[0]), ctx

    trace = random_search(fn, lam_max=2.0, n_points=100, seed=3)
    assert len(seen) == 100
    assert all(2.0 - FOUR_DECADES <= v <= 2.0 for v in seen)
    again = []
    random_search(lambda hp, ctx: (again.append(hp.lam[0]) or 0.0, ctx),
                  lam_max=2.0, n_points=100, seed=3)
    assert np.array_equal(np.asarray(seen), np.asarray(again))
    assert trace.best_criterion == min(seen)


def test_random_search_single_draw():
    trace = random_search(lambda hp, ctx: (5.0, ctx), lam_max=0.0, n_points=1,
                          seed=0)
    assert trace.budget_used == 1
    assert trace.best_criterion == 5.0
    assert trace.best_hp is trace.iterates[0].hp


def test_random_min_close_to_grid_min_on_unimodal():
    lam_max = 1.0
    c = lam_max - 2.3

    def fn(hp, ctx):
        return float((hp.lam[0] - c) ** 2), ctx

    g = grid_search(fn, lam_max=lam_max, n_points=100)
    r = random_search(fn, lam_max=lam_max, n_points=100, seed=1)
    spacing = FOUR_DECADES / 99.0
    assert r.best_criterion <= g.best_criterion + (spacing / 2.0) ** 2


def test_tune_stationary_start_stops_immediately():
    trace = tune_hypergrad(_FlatProblem(), HyperParams.lasso(0.3), budget=50)
    assert trace.budget_used == 1
    assert trace.best_hp.lam[0] == 0.3
    assert trace.best_criterion == 7.0
    assert trace.iterates[0].step == 0.0


def test_tune_rejects_empty_budget():
    with pytest.raises(SolverError, match="budget"):
        tune_hypergrad(_FlatProblem(), HyperParams.lasso(0.0), budget=0)


def test_tune_one_dim_pipeline_finds_zero():
    # train (X=[[1]], y=[2]) and validation (X=[[1]], y=[1]) give
    # L(lambda) = (e^lambda - 1)^2, minimized at lambda = 0
    X = np.array([[1.0]])
    problem = HeldoutProblem(X, np.array([2.0]), X, np.array([1.0]),
                             engine="implicit", tol=1e-12)
    lam0 = lambda_max(X, np.array([2.0])) - np.log(10.0)
    trace = tune_hypergrad(problem, HyperParams.lasso(lam0), budget=50)
    assert trace.budget_used <= 50
    assert abs(trace.best_hp.lam[0]) <= 1e-3


def test_tune_budget_exhaustion_returns_best_seen():
    X = np.array([[1.0]])
    problem = HeldoutProblem(X, np.array([2.0]), X, np.array([1.0]),
                             engine="implicit", tol=1e-12)
    trace = tune_hypergrad(problem, HyperParams.lasso(0.5), budget=5)
    assert trace.budget_used == 5
    assert len(trace.iterates) == 5
    crits = [pt.criterion for pt in trace.iterates]
    assert trace.best_criterion == min(crits)
    assert trace.best_hp.lam[0] == trace.iterates[int(np.argmin(crits))].hp.lam[0]


def test_tune_never_accepts_an_increase():
    problem = _heldout_problem(engine="implicit_forward", tol=1e-8)
    lam0 = lambda_max(problem.X_train, problem.y_train) - np.log(10.0)
    trace = tune_hypergrad(problem, HyperParams.lasso(lam0), budget=20,
                           bounds=default_lasso_bounds(lam0 + np.log(10.0)))
    crits = np.array([pt.criterion for pt in trace.iterates])
    assert np.all(np.diff(crits) <= 0.0)
    assert trace.best_criterion == crits.min()
    assert trace.best_criterion <= crits[0]


def test_tune_engines_agree_on_final_criterion():
    # unique-solution regime: the train split (50) exceeds p (40)
    best = {}
    for engine in ("implicit", "implicit_forward"):
        problem = _heldout_problem(n=150, p=40, engine=engine, tol=1e-10)
        lam_max_tr = lambda_max(problem.X_train, problem.y_train)
        trace = tune_hypergrad(problem, HyperParams.lasso(lam_max_tr - np.log(10.0)),
                               budget=30, bounds=default_lasso_bounds(lam_max_tr))
        best[engine] = trace.best_criterion
    a, b = best["implicit"], best["implicit_forward"]
    assert abs(a - b) <= 1e-3 * max(abs(a), abs(b))


def test_default_lasso_bounds_box():
    b = default_lasso_bounds(2.0)
    assert b.shape == (1, 2)
    assert b[0, 1] == 2.0
    assert abs(b[0, 0] - (2.0 - FOUR_DECADES + np.log(1e-2))) <= 1e-12


def test_wlasso_init_huge_weight_drives_lambda_to_zero():
    problem = _heldout_problem(n=30, p=10, seed=2, engine="implicit",
                               tol=1e-10)
    lam_max_tr = lambda_max(problem.X_train, problem.y_train)
    hp, trace = wlasso_init(problem, 10, lam_max_tr, budget=50,
                            gamma_reg=1e12)
    assert np.max(np.abs(hp.lam)) <= 1e-3
    crits = [pt.criterion for pt in trace.iterates]
    assert trace.best_criterion <= crits[0]


def test_wlasso_init_default_weight_and_descent():
    problem = _heldout_problem(n=30, p=10, seed=4, engine="implicit",
                               tol=1e-10)
    lam_max_tr = lambda_max(problem.X_train, problem.y_train)
    hp, trace = wlasso_init(problem, 10, lam_max_tr, budget=1)
    # with budget 1 the trace holds exactly the starting point, whose
    # recorded criterion is heldout + (||y_val||^2 / 100) * ||lam0||^2
    lam0 = np.full(10, lam_max_tr - np.log(10.0))
    assert np.array_equal(hp.lam, lam0)
    st = solve(problem.X_train, problem.y_train, HyperParams.wlasso(lam0),
               tol=1e-10)
    resid = problem.y_val - problem.X_val @ st.beta
    gamma = float(problem.y_val @ problem.y_val) / 100.0
    want = float(resid @ resid) + gamma * float(lam0 @ lam0)
    got = trace.iterates[0].criterion
    assert abs(got - want) <= 1e-9 * max(1.0, abs(want))

"""Command-line harness: generate / solve / gradcheck / tune.

Runs are file-in, file-out: datasets live in CSV directories (or
svmlight files), every command writes CSVs whose bytes depend only on
the config and seeds (wall-clock columns excepted).  SPARSE_HO_THREADS
caps the worker pool used to run tuning methods side by side.
"""

import argparse
import csv
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .criteria import mse_to_truth, sure_epsilon
from .datasets import (
    load_dataset,
    make_nonunique_design,
    parse_svmlight,
    save_dataset,
    split_three_way,
    synthesize_dataset,
)
from .hypergrad import (
    hypergrad_backward,
    hypergradient,
    jacobian_forward_iterdiff,
    jacobian_implicit,
    jacobian_implicit_forward,
)
from .outer import (
    HeldoutProblem,
    SureProblem,
    default_lasso_bounds,
    grid_search,
    random_search,
    tune_hypergrad,
    wlasso_init,
)
from .solvers import (
    HyperParams,
    kkt_violation,
    lambda_max,
    objective_value,
    solve,
)

MODELS = ("lasso", "wlasso", "mcp")
CRITERIA = ("heldout", "sure")
METHODS = ("grid", "random", "implicit", "implicit_forward", "forward",
           "backward")
GRADIENT_METHODS = ("implicit", "implicit_forward", "forward", "backward")


class ConfigError(ValueError):
    pass


def worker_cap():
    """Parallel worker limit from SPARSE_HO_THREADS (default 1)."""
    raw = os.environ.get("SPARSE_HO_THREADS", "")
    if not raw:
        return 1
    try:
        cap = int(raw)
    except ValueError:
        raise ConfigError(f"SPARSE_HO_THREADS={raw!r} is not an integer") from None
    return max(1, cap)


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if np.isnan(x):
        return ""
    return repr(x)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else _fmt(v) for v in row])


@dataclass
class ExperimentConfig:
    """Validated settings of one tune invocation."""

    model: str
    criterion: str
    methods: list
    budget: int = 50
    tol: float = 1e-5
    max_epochs: int = 10_000
    n_iter_jac: int = 100
    eps_jac: float = 1e-3
    seed: int = 0
    solver: str = "bcd"
    n_points: int = 100
    init_budget: int | None = None
    gamma0: float = float(np.log(3.0))
    sigma: float | None = None
    extras: dict = field(default_factory=dict)

    def validate(self):
        if self.model not in MODELS:
            raise ConfigError(f"model={self.model!r} not in {MODELS}")
        if self.criterion not in CRITERIA:
            raise ConfigError(f"criterion={self.criterion!r} not in {CRITERIA}")
        if not self.methods:
            raise ConfigError("methods is empty")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"methods entry {m!r} not in {METHODS}")
            if self.model != "lasso" and m in ("grid", "random"):
                raise ConfigError(
                    f"methods={m} needs model=lasso (got model={self.model})"
                )
            if self.model == "mcp" and m in ("implicit", "implicit_forward",
                                             "backward"):
                raise ConfigError(
                    f"model=mcp supports methods=forward, got methods={m}"
                )
        if self.budget < 1:
            raise ConfigError(f"budget={self.budget} must be >= 1")
        if self.tol < 0:
            raise ConfigError(f"tol={self.tol} must be >= 0")
        if self.n_iter_jac < 0:
            raise ConfigError(f"n_iter_jac={self.n_iter_jac} must be >= 0")
        if self.solver not in ("bcd", "ista"):
            raise ConfigError(f"solver={self.solver!r} not in ('bcd', 'ista')")
        if self.model == "mcp" and self.solver != "bcd":
            raise ConfigError("model=mcp needs solver=bcd")
        if self.criterion == "sure" and self.sigma is not None and self.sigma <= 0:
            raise ConfigError(f"sigma={self.sigma} must be positive")
        return self


def _load_data(args):
    if getattr(args, "svmlight", None):
        return parse_svmlight(args.svmlight)
    if getattr(args, "data", None):
        return load_dataset(args.data)
    raise ConfigError("one of --data or --svmlight is required")


def cmd_generate(args):
    if args.design == "nonunique":
        ds = make_nonunique_design(args.n, args.p, seed=args.seed)
    else:
        ds = synthesize_dataset(args.n, args.p, design=args.design,
                                rho=args.rho, k=args.k, snr=args.snr,
                                seed=args.seed)
    save_dataset(ds, args.out)
    print(f"wrote {ds.n}x{ds.p} {args.design} dataset to {args.out}")
    return 0


def _model_hp(model, lam, gamma, p):
    if model == "lasso":
        return HyperParams.lasso(lam)
    if model == "wlasso":
        return HyperParams.wlasso(np.full(p, lam))
    return HyperParams.mcp(lam, gamma)


def cmd_solve(args):
    ds = _load_data(args)
    X = ds.X_dense()
    lam = args.lam if args.lam is not None else lambda_max(X, ds.y) - np.log(10.0)
    hp = _model_hp(args.model, lam, args.gamma, ds.p)
    t0 = time.perf_counter()
    state = solve(X, ds.y, hp, solver=args.solver, tol=args.tol,
                  max_epochs=args.max_epochs)
    wall = time.perf_counter() - t0
    os.makedirs(args.out, exist_ok=True)
    _write_csv(os.path.join(args.out, "beta.csv"), ["index", "value"],
               [(int(j), state.beta[j]) for j in state.support])
    obj = objective_value(X, ds.y, state.beta, hp)
    kkt = "" if args.model == "mcp" else _fmt(kkt_violation(X, ds.y,
                                                            state.beta, hp))
    _write_csv(
        os.path.join(args.out, "diagnostics.csv"),
        ["model", "lam", "gamma", "objective", "kkt_violation", "s_hat",
         "epochs", "converged"],
        [(args.model, lam, args.gamma if args.model == "mcp" else None, obj,
          kkt, state.s_hat, state.epochs, str(bool(state.converged)).lower())],
    )
    print(f"solved {args.model} at lam={lam:.6f}: s_hat={state.s_hat}, "
          f"epochs={state.epochs}, objective={obj:.6e}, {wall * 1e3:.1f} ms")
    return 0


def cmd_gradcheck(args):
    ds = _load_data(args)
    if args.model not in ("lasso", "wlasso"):
        raise ConfigError(f"gradcheck needs a convex model, got {args.model!r}")
    X = ds.X_dense()
    split = split_three_way(ds, seed=args.seed)
    Xtr, ytr = X[split.train_idx], ds.y[split.train_idx]
    Xval, yval = X[split.val_idx], ds.y[split.val_idx]
    lam = args.lam if args.lam is not None \
        else lambda_max(Xtr, ytr) - np.log(10.0)
    hp = _model_hp(args.model, lam, None, ds.p)
    n_iters = [int(v) for v in args.n_iters.split(",") if v]

    from .criteria import heldout_eval

    t0 = time.perf_counter()
    state_ref = solve(Xtr, ytr, hp, solver="bcd", tol=args.tol_ref,
                      max_epochs=args.max_epochs)
    jac_ref = jacobian_implicit(Xtr, state_ref, hp)
    grad_ref = hypergradient(jac_ref, heldout_eval(state_ref.beta, Xval,
                                                   yval).grad)
    wall_ref = (time.perf_counter() - t0) * 1e3
    r = grad_ref.shape[0]
    rows = [("implicit", state_ref.epochs, wall_ref, *grad_ref, 0.0)]
    for engine in ("forward", "implicit_forward", "backward"):
        for n_in in n_iters:
            t0 = time.perf_counter()
            if engine == "forward":
                st, jac = jacobian_forward_iterdiff(
                    Xtr, ytr, hp, solver="bcd", tol=0.0, max_epochs=n_in)
                g = hypergradient(jac, heldout_eval(st.beta, Xval, yval).grad)
            elif engine == "implicit_forward":
                st = solve(Xtr, ytr, hp, solver="bcd", tol=0.0,
                           max_epochs=n_in)
                cg = heldout_eval(st.beta, Xval, yval).grad
                st, jac = jacobian_implicit_forward(
                    Xtr, ytr, hp, solver="bcd", tol=0.0, max_epochs=n_in,
                    n_iter_jac=args.n_iter_jac, eps_jac=args.eps_jac,
                    crit_grad=cg)
                g = hypergradient(jac, heldout_eval(st.beta, Xval, yval).grad)
            else:
                st, g = hypergrad_backward(
                    Xtr, ytr, hp,
                    v=lambda beta: heldout_eval(beta, Xval, yval).grad,
                    tol=0.0, max_epochs=n_in)
            wall = (time.perf_counter() - t0) * 1e3
            dist = float(np.max(np.abs(g - grad_ref)))
            rows.append((engine, n_in, wall, *g, dist))
    os.makedirs(args.out, exist_ok=True)
    header = (["engine", "n_inner_iters", "wall_ms"]
              + [f"grad{i}" for i in range(r)] + ["dist_to_implicit"])
    _write_csv(os.path.join(args.out, "gradcheck.csv"), header, rows)
    print(f"gradcheck: {len(rows)} rows at lam={lam:.6f} -> "
          f"{os.path.join(args.out, 'gradcheck.csv')}")
    return 0


def _run_tune_method(method, cfg, data):
    """One tuning method end to end; returns (trace, summary fields)."""
    t0 = time.perf_counter()
    if cfg.criterion == "heldout":
        Xtr, ytr = data["Xtr"], data["ytr"]
        problem_args = dict(
            X_train=Xtr, y_train=ytr, X_val=data["Xval"], y_val=data["yval"],
            solver=cfg.solver, tol=cfg.tol, max_epochs=cfg.max_epochs,
            n_iter_jac=cfg.n_iter_jac, eps_jac=cfg.eps_jac,
        )
        make_problem = lambda engine: HeldoutProblem(engine=engine,
                                                     **problem_args)
    else:
        Xtr, ytr = data["X"], data["y"]
        problem_args = dict(
            X=Xtr, y=ytr, sigma=data["sigma"], epsilon=data["epsilon"],
            delta=data["delta"], solver=cfg.solver, tol=cfg.tol,
            max_epochs=cfg.max_epochs, n_iter_jac=cfg.n_iter_jac,
            eps_jac=cfg.eps_jac,
        )
        make_problem = lambda engine: SureProblem(engine=engine,
                                                  **problem_args)
    lam_max = lambda_max(Xtr, ytr)
    p = Xtr.shape[1]

    if method in ("grid", "random"):
        problem = make_problem("implicit_forward")
        if method == "grid":
            trace = grid_search(problem.value, lam_max, n_points=cfg.n_points)
        else:
            trace = random_search(problem.value, lam_max,
                                  n_points=cfg.n_points, seed=cfg.seed)
    else:
        problem = make_problem(method)
        if cfg.model == "lasso":
            hp0 = HyperParams.lasso(lam_max - np.log(10.0))
            trace = tune_hypergrad(problem, hp0, budget=cfg.budget,
                                   bounds=default_lasso_bounds(lam_max))
        elif cfg.model == "wlasso":
            init_budget = cfg.init_budget or cfg.budget
            hp0, _ = wlasso_init(problem, p, lam_max, budget=init_budget)
            trace = tune_hypergrad(problem, hp0, budget=cfg.budget,
                                   bounds=None)
        else:
            norms2 = np.sum(Xtr ** 2, axis=0)
            gamma_lo = float(np.log(Xtr.shape[0] / np.min(norms2))) + 1e-3
            gamma0 = cfg.gamma0
            if gamma0 <= gamma_lo:
                raise ConfigError(
                    f"gamma0={gamma0} violates the curvature precondition; "
                    f"needs gamma0 > {gamma_lo:.4f}"
                )
            lam_bounds = default_lasso_bounds(lam_max)[0]
            bounds = np.array([lam_bounds, [gamma_lo, np.inf]])
            hp0 = HyperParams.mcp(lam_max - np.log(10.0), gamma0)
            trace = tune_hypergrad(problem, hp0, budget=cfg.budget,
                                   bounds=bounds)

    best_state = solve(Xtr, ytr, trace.best_hp, solver=cfg.solver,
                       tol=cfg.tol, max_epochs=cfg.max_epochs)
    if cfg.criterion == "heldout":
        resid = data["ytest"] - data["Xtest"] @ best_state.beta
        test_metric = float(resid @ resid)
    else:
        bt = data.get("beta_true")
        test_metric = mse_to_truth(best_state.beta, bt) if bt is not None \
            else float("nan")
    wall_ms = (time.perf_counter() - t0) * 1e3
    return trace, test_metric, wall_ms


def cmd_tune(args):
    cfg = ExperimentConfig(
        model=args.model, criterion=args.criterion,
        methods=[m for m in args.methods.split(",") if m],
        budget=args.budget, tol=args.tol, max_epochs=args.max_epochs,
        n_iter_jac=args.n_iter_jac, eps_jac=args.eps_jac, seed=args.seed,
        solver=args.solver, n_points=args.n_points,
        init_budget=args.init_budget, gamma0=args.gamma0, sigma=args.sigma,
    ).validate()
    ds = _load_data(args)
    X = ds.X_dense()
    data = {}
    if cfg.criterion == "heldout":
        split = split_three_way(ds, seed=cfg.seed)
        data.update(
            Xtr=X[split.train_idx], ytr=ds.y[split.train_idx],
            Xval=X[split.val_idx], yval=ds.y[split.val_idx],
            Xtest=X[split.test_idx], ytest=ds.y[split.test_idx],
        )
    else:
        sigma = cfg.sigma if cfg.sigma is not None else ds.sigma
        if sigma is None or sigma <= 0:
            raise ConfigError(
                "criterion=sure needs a positive sigma (meta.csv field "
                "'sigma' or --sigma)"
            )
        n = ds.n
        delta = np.random.Generator(np.random.Philox(cfg.seed)) \
            .standard_normal(n)
        data.update(X=X, y=ds.y, sigma=float(sigma),
                    epsilon=sure_epsilon(float(sigma), n), delta=delta,
                    beta_true=ds.beta_true)

    cap = worker_cap()
    results = {}
    if cap > 1 and len(cfg.methods) > 1:
        with ThreadPoolExecutor(max_workers=cap) as pool:
            futs = {m: pool.submit(_run_tune_method, m, cfg, data)
                    for m in cfg.methods}
            for m, fut in futs.items():
                results[m] = fut.result()
    else:
        for m in cfg.methods:
            results[m] = _run_tune_method(m, cfg, data)

    os.makedirs(args.out, exist_ok=True)
    optimum = min(results[m][0].best_criterion for m in cfg.methods)
    summary_rows = []
    metric_name = "test_loss" if cfg.criterion == "heldout" else "mse"
    for m in cfg.methods:
        trace, test_metric, wall_ms = results[m]
        r = trace.best_hp.r
        header = (["iter"] + [f"lambda{i}" for i in range(r)]
                  + ["criterion", "grad_norm", "step", "wall_ms"])
        rows = []
        for it, pt in enumerate(trace.iterates):
            gn = None if pt.hypergrad is None \
                else float(np.max(np.abs(pt.hypergrad)))
            rows.append((it, *pt.hp.lam, pt.criterion, gn, pt.step,
                         pt.wall_time * 1e3))
        _write_csv(os.path.join(args.out, f"trace_{m}.csv"), header, rows)
        summary_rows.append((m, trace.best_criterion, test_metric, wall_ms,
                             cfg.seed, optimum))
    _write_csv(
        os.path.join(args.out, "summary.csv"),
        ["method", "best_criterion", metric_name, "total_wall_ms", "seed",
         "optimum"],
        summary_rows,
    )
    for m, best, tm, wall, _, _ in summary_rows:
        print(f"{m}: best_{cfg.criterion}={best:.6e} {metric_name}={tm:.6e} "
              f"({wall:.0f} ms)")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="lassotune",
        description="Hyperparameter selection for Lasso-type estimators "
                    "by bilevel hypergradient descent.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="synthesize a dataset directory")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--p", type=int, required=True)
    g.add_argument("--design", choices=("iid", "toeplitz", "nonunique"),
                   default="iid")
    g.add_argument("--rho", type=float, default=0.5)
    g.add_argument("--k", type=int, default=5)
    g.add_argument("--snr", type=float, default=3.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("solve", help="solve one model at fixed parameters")
    s.add_argument("--data")
    s.add_argument("--svmlight")
    s.add_argument("--model", choices=MODELS, default="lasso")
    s.add_argument("--lam", type=float, default=None,
                   help="log regularizer (default lambda_max - log 10)")
    s.add_argument("--gamma", type=float, default=float(np.log(3.0)),
                   help="log concavity for mcp")
    s.add_argument("--solver", choices=("bcd", "ista"), default="bcd")
    s.add_argument("--tol", type=float, default=1e-5)
    s.add_argument("--max-epochs", type=int, default=10_000)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_solve)

    c = sub.add_parser("gradcheck",
                       help="compare engine hypergradients across inner "
                            "iteration caps")
    c.add_argument("--data")
    c.add_argument("--svmlight")
    c.add_argument("--model", choices=("lasso", "wlasso"), default="lasso")
    c.add_argument("--lam", type=float, default=None)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--n-iters", default="5,10,20,40,80,160,320")
    c.add_argument("--n-iter-jac", type=int, default=100)
    c.add_argument("--eps-jac", type=float, default=1e-3)
    c.add_argument("--tol-ref", type=float, default=1e-12)
    c.add_argument("--max-epochs", type=int, default=100_000)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_gradcheck)

    t = sub.add_parser("tune", help="run tuning methods and compare them")
    t.add_argument("--data")
    t.add_argument("--svmlight")
    t.add_argument("--model", choices=MODELS, default="lasso")
    t.add_argument("--criterion", choices=CRITERIA, default="heldout")
    t.add_argument("--methods", default="implicit_forward,grid")
    t.add_argument("--budget", type=int, default=50)
    t.add_argument("--tol", type=float, default=1e-5)
    t.add_argument("--max-epochs", type=int, default=10_000)
    t.add_argument("--n-iter-jac", type=int, default=100)
    t.add_argument("--eps-jac", type=float, default=1e-3)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--solver", choices=("bcd", "ista"), default="bcd")
    t.add_argument("--n-points", type=int, default=100)
    t.add_argument("--init-budget", type=int, default=None,
                   help="budget of the wlasso warm-up run (default: budget)")
    t.add_argument("--gamma0", type=float, default=float(np.log(3.0)))
    t.add_argument("--sigma", type=float, default=None,
                   help="noise level for sure (default: meta.csv)")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_tune)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Command-line harness: file outputs, determinism, config errors."""

import csv
import os

import numpy as np

from lassotune import load_dataset, write_svmlight
from lassotune.cli import main, worker_cap


def _run(argv, capsys=None):
    code = main(argv)
    if capsys is not None:
        return code, capsys.readouterr()
    return code


def _read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _gen(tmp_path, name="data", n=45, p=20, seed=0, extra=()):
    out = str(tmp_path / name)
    code = main(["generate", "--n", str(n), "--p", str(p), "--seed",
                 str(seed), "--out", out, *extra])
    assert code == 0
    return out


def test_generate_writes_dataset_directory(tmp_path):
    out = _gen(tmp_path, n=40, p=30)
    for fname in ("X.csv", "y.csv", "meta.csv", "beta_true.csv"):
        assert os.path.exists(os.path.join(out, fname))
    ds = load_dataset(out)
    assert ds.n == 40 and ds.p == 30
    assert ds.sigma is not None and ds.sigma > 0


def test_generate_toeplitz_meta(tmp_path):
    out = _gen(tmp_path, name="toe", extra=("--design", "toeplitz",
                                            "--rho", "0.9"))
    header, rows = _read_csv(os.path.join(out, "meta.csv"))
    meta = dict(zip(header, rows[0]))
    assert meta["design"] == "toeplitz"
    assert float(meta["rho"]) == 0.9


def test_generate_nonunique_design(tmp_path):
    out = _gen(tmp_path, name="nonuni", n=24, p=48,
               extra=("--design", "nonunique"))
    ds = load_dataset(out)
    X = ds.X_dense()
    assert np.max(np.abs(X[:, 3] - (X[:, 1] + X[:, 2]) / 2.0)) <= 1e-15
    assert np.max(np.abs(ds.y - (-X[:, 0] + X[:, 1] + X[:, 2]))) <= 1e-12


def test_solve_writes_beta_and_diagnostics(tmp_path, capsys):
    data = _gen(tmp_path)
    out = str(tmp_path / "sol")
    code, cap = _run(["solve", "--data", data, "--tol", "1e-10",
                      "--out", out], capsys)
    assert code == 0
    assert "solved lasso" in cap.out
    header, rows = _read_csv(os.path.join(out, "beta.csv"))
    assert header == ["index", "value"]
    assert all(float(r[1]) != 0.0 for r in rows)
    header, rows = _read_csv(os.path.join(out, "diagnostics.csv"))
    assert header == ["model", "lam", "gamma", "objective", "kkt_violation",
                      "s_hat", "epochs", "converged"]
    row = dict(zip(header, rows[0]))
    assert row["model"] == "lasso"
    assert row["converged"] == "true"
    assert int(row["s_hat"]) == len(_read_csv(os.path.join(out, "beta.csv"))[1])
    assert float(row["kkt_violation"]) <= 1e-6


def test_solve_accepts_svmlight_input(tmp_path):
    data = _gen(tmp_path, n=30, p=12)
    ds = load_dataset(data)
    svm = str(tmp_path / "data.svm")
    write_svmlight(ds, svm)
    out = str(tmp_path / "sol_svm")
    assert main(["solve", "--svmlight", svm, "--out", out]) == 0
    assert os.path.exists(os.path.join(out, "diagnostics.csv"))


def test_solve_requires_a_data_source(tmp_path, capsys):
    code, cap = _run(["solve", "--out", str(tmp_path / "x")], capsys)
    assert code == 2
    assert "--data or --svmlight" in cap.err


def test_gradcheck_report(tmp_path):
    # n=120 keeps the train split (40 rows) above p, so the reference
    # solution is unique and the engine distances have clean floors
    data = _gen(tmp_path, n=120, p=30)
    out = str(tmp_path / "gc")
    code = main(["gradcheck", "--data", data, "--n-iters", "10,40,160,320",
                 "--out", out])
    assert code == 0
    header, rows = _read_csv(os.path.join(out, "gradcheck.csv"))
    assert header[:3] == ["engine", "n_inner_iters", "wall_ms"]
    assert header[3] == "grad0" and header[-1] == "dist_to_implicit"
    engines = [r[0] for r in rows]
    assert engines[0] == "implicit"
    assert float(rows[0][-1]) == 0.0
    for eng in ("forward", "implicit_forward", "backward"):
        assert engines.count(eng) == 4
    # the decoupled engine's distance settles at its early-exit floor;
    # the tail past support identification is monotone within noise
    ifwd = [float(r[-1]) for r in rows if r[0] == "implicit_forward"]
    assert all(b <= a + 1e-12 for a, b in zip(ifwd[1:], ifwd[2:]))
    fwd = [float(r[-1]) for r in rows if r[0] == "forward"]
    assert fwd[-1] <= 1e-5


def test_gradcheck_tight_jacobian_matches_forward_floor(tmp_path):
    data = _gen(tmp_path, name="gc2data", n=120, p=30)
    out = str(tmp_path / "gc2")
    code = main(["gradcheck", "--data", data, "--n-iters", "10,40,160",
                 "--eps-jac", "1e-10", "--n-iter-jac", "1000", "--out", out])
    assert code == 0
    _, rows = _read_csv(os.path.join(out, "gradcheck.csv"))
    ifwd = [float(r[-1]) for r in rows if r[0] == "implicit_forward"]
    assert ifwd[1] < ifwd[0]
    assert ifwd[-1] <= 1e-5


def test_tune_heldout_outputs(tmp_path):
    data = _gen(tmp_path)
    out = str(tmp_path / "tune")
    code = main(["tune", "--data", data, "--methods", "implicit_forward,grid",
                 "--budget", "8", "--n-points", "12", "--out", out])
    assert code == 0
    for m in ("implicit_forward", "grid"):
        header, rows = _read_csv(os.path.join(out, f"trace_{m}.csv"))
        assert header == ["iter", "lambda0", "criterion", "grad_norm",
                          "step", "wall_ms"]
        assert [r[0] for r in rows] == [str(i) for i in range(len(rows))]
    header, rows = _read_csv(os.path.join(out, "summary.csv"))
    assert header == ["method", "best_criterion", "test_loss",
                      "total_wall_ms", "seed", "optimum"]
    best = {r[0]: float(r[1]) for r in rows}
    optimum = {float(r[5]) for r in rows}
    assert optimum == {min(best.values())}
    assert set(best) == {"implicit_forward", "grid"}


def test_tune_sure_reports_mse(tmp_path):
    data = _gen(tmp_path, n=40, p=25)
    out = str(tmp_path / "sure")
    code = main(["tune", "--data", data, "--criterion", "sure", "--methods",
                 "implicit_forward", "--budget", "6", "--out", out])
    assert code == 0
    header, rows = _read_csv(os.path.join(out, "summary.csv"))
    assert header[2] == "mse"
    assert np.isfinite(float(rows[0][2]))


def test_tune_wlasso_trace_has_p_lambda_columns(tmp_path):
    data = _gen(tmp_path, n=36, p=8)
    out = str(tmp_path / "wl")
    code = main(["tune", "--data", data, "--model", "wlasso", "--methods",
                 "implicit_forward", "--budget", "4", "--init-budget", "3",
                 "--out", out])
    assert code == 0
    header, _ = _read_csv(os.path.join(out, "trace_implicit_forward.csv"))
    assert header[1:9] == [f"lambda{i}" for i in range(8)]


def _strip_timing(path):
    header, rows = _read_csv(path)
    drop = [i for i, name in enumerate(header)
            if name in ("wall_ms", "total_wall_ms")]
    keep = [i for i in range(len(header)) if i not in drop]
    return [[row[i] for i in keep] for row in [header] + rows]


def test_tune_is_deterministic_modulo_timing(tmp_path):
    data = _gen(tmp_path)
    args = ["tune", "--data", data, "--methods", "implicit_forward,random",
            "--budget", "6", "--n-points", "9", "--seed", "3"]
    out_a, out_b = str(tmp_path / "a"), str(tmp_path / "b")
    assert main(args + ["--out", out_a]) == 0
    assert main(args + ["--out", out_b]) == 0
    for fname in ("trace_implicit_forward.csv", "trace_random.csv",
                  "summary.csv"):
        assert _strip_timing(os.path.join(out_a, fname)) \
            == _strip_timing(os.path.join(out_b, fname))


def test_tune_parallel_matches_serial(tmp_path, monkeypatch):
    data = _gen(tmp_path)
    args = ["tune", "--data", data, "--methods", "implicit_forward,grid",
            "--budget", "5", "--n-points", "8"]
    out_ser, out_par = str(tmp_path / "ser"), str(tmp_path / "par")
    monkeypatch.delenv("SPARSE_HO_THREADS", raising=False)
    assert main(args + ["--out", out_ser]) == 0
    monkeypatch.setenv("SPARSE_HO_THREADS", "2")
    assert worker_cap() == 2
    assert main(args + ["--out", out_par]) == 0
    for fname in ("trace_implicit_forward.csv", "trace_grid.csv",
                  "summary.csv"):
        assert _strip_timing(os.path.join(out_ser, fname)) \
            == _strip_timing(os.path.join(out_par, fname))


def test_config_errors_name_the_field(tmp_path, capsys):
    data = _gen(tmp_path, n=24, p=10)
    cases = [
        (["tune", "--data", data, "--model", "mcp", "--methods", "implicit",
          "--out", str(tmp_path / "e1")], "model=mcp"),
        (["tune", "--data", data, "--model", "wlasso", "--methods", "grid",
          "--out", str(tmp_path / "e2")], "model=lasso"),
        (["tune", "--data", data, "--budget", "0",
          "--out", str(tmp_path / "e3")], "budget=0"),
        (["tune", "--data", data, "--criterion", "sure", "--sigma", "-1",
          "--out", str(tmp_path / "e4")], "sigma=-1.0"),
    ]
    for argv, needle in cases:
        code, cap = _run(argv, capsys)
        assert code == 2
        assert needle in cap.err


def test_worker_cap_rejects_garbage(monkeypatch, capsys, tmp_path):
    monkeypatch.setenv("SPARSE_HO_THREADS", "lots")
    data = _gen(tmp_path, n=24, p=10)
    code, cap = _run(["tune", "--data", data, "--methods",
                      "implicit_forward,grid", "--budget", "2", "--n-points",
                      "2", "--out", str(tmp_path / "w")], capsys)
    assert code == 2
    assert "SPARSE_HO_THREADS" in cap.err

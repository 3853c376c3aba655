"""Dataset synthesis, splitting, and on-disk formats.

All randomness flows through numpy's Philox counter-based generator so a
seed pins every draw; shuffles use an explicit Fisher-Yates sweep on top
of it.
"""

import csv
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse


class DatasetError(ValueError):
    pass


class SvmlightParseError(DatasetError):
    pass


def _rng(seed):
    return np.random.Generator(np.random.Philox(seed))


def _fisher_yates(n, rng):
    """Uniform permutation of range(n) by explicit Fisher-Yates."""
    idx = np.arange(n)
    for i in range(n - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        tmp = idx[i]
        idx[i] = idx[j]
        idx[j] = tmp
    return idx


@dataclass
class Dataset:
    """A design matrix with targets and optional generating ground truth.

    Parameters
    ----------
    X : ndarray or scipy.sparse.csc_matrix, shape (n, p)
    y : ndarray, shape (n,)
    beta_true : ndarray or None
        Generating coefficients for synthetic data.
    sigma : float or None
        Realized noise level ||noise|| / sqrt(n) for synthetic data.
    meta : dict
        Provenance fields (design, rho, snr, seed, k, ...).
    """

    X: object
    y: np.ndarray
    beta_true: np.ndarray | None = None
    sigma: float | None = None
    meta: dict = field(default_factory=dict)
    degenerate_cols: np.ndarray = field(init=False)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.float64).ravel()
        if sparse.issparse(self.X):
            self.X = self.X.tocsc()
            if not np.all(np.isfinite(self.X.data)):
                raise DatasetError("X contains NaN or Inf")
            col_nnz = np.diff(self.X.indptr)
            self.degenerate_cols = np.flatnonzero(col_nnz == 0)
        else:
            self.X = np.asarray(self.X, dtype=np.float64)
            if not np.all(np.isfinite(self.X)):
                raise DatasetError("X contains NaN or Inf")
            self.degenerate_cols = np.flatnonzero(~np.any(self.X != 0, axis=0))
        if not np.all(np.isfinite(self.y)):
            raise DatasetError("y contains NaN or Inf")
        if self.X.shape[0] != self.y.shape[0]:
            raise DatasetError(
                f"X has {self.X.shape[0]} rows but y has {self.y.shape[0]}"
            )
        if self.beta_true is not None:
            self.beta_true = np.asarray(self.beta_true, dtype=np.float64).ravel()

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    def X_dense(self):
        """Design as a dense float64 array (sparse inputs are expanded)."""
        if sparse.issparse(self.X):
            return self.X.toarray()
        return self.X


@dataclass(frozen=True)
class Split:
    """Index sets of a shuffled train/validation/test partition."""

    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray


def synthesize_dataset(n, p, design="iid", rho=0.5, k=5, snr=3.0, seed=0):
    """Draw a sparse-regression instance with an exactly realized SNR.

    The design is either iid standard normal or an AR(1) process across
    columns (corr(X_j, X_k) = rho^|j-k|).  beta_true has k coefficients
    equal to 1 at uniformly drawn positions, and the noise is rescaled so
    ||X beta_true|| / ||y - X beta_true|| equals snr exactly.

    Parameters
    ----------
    n, p : int
    design : {"iid", "toeplitz"}
    rho : float
        AR(1) column correlation, only used for the toeplitz design.
    k : int
        Number of nonzero generating coefficients.
    snr : float
        Target signal-to-noise ratio, must be positive.
    seed : int

    Returns
    -------
    Dataset
    """
    if n < 1 or p < 1:
        raise DatasetError("n and p must be positive")
    if not 0 <= k <= p:
        raise DatasetError(f"k={k} must lie in [0, p={p}]")
    if snr <= 0:
        raise DatasetError("snr must be positive")
    rng = _rng(seed)
    if design == "iid":
        X = rng.standard_normal((n, p))
    elif design == "toeplitz":
        if not -1 < rho < 1:
            raise DatasetError(f"toeplitz design needs |rho| < 1, got {rho}")
        Z = rng.standard_normal((n, p))
        X = np.empty((n, p))
        X[:, 0] = Z[:, 0]
        c = np.sqrt(1.0 - rho * rho)
        for j in range(1, p):
            X[:, j] = rho * X[:, j - 1] + c * Z[:, j]
    else:
        raise DatasetError(f"unknown design {design!r}")

    perm = _fisher_yates(p, rng)
    support = np.sort(perm[:k])
    beta_true = np.zeros(p)
    beta_true[support] = 1.0

    signal = X @ beta_true
    signal_norm = np.linalg.norm(signal)
    noise = rng.standard_normal(n)
    if signal_norm == 0.0:
        raise DatasetError("cannot scale noise: X @ beta_true is zero")
    noise *= signal_norm / (snr * np.linalg.norm(noise))
    y = signal + noise
    sigma = np.linalg.norm(noise) / np.sqrt(n)
    meta = {"design": design, "rho": rho if design == "toeplitz" else None,
            "snr": snr, "seed": seed, "k": k, "n": n, "p": p}
    return Dataset(X=X, y=y, beta_true=beta_true, sigma=sigma, meta=meta)


def make_nonunique_design(n, p, seed=0):
    """Noiseless instance whose l1 solution set is not a singleton.

    Columns 0-2 are iid standard normal, column 3 is exactly
    (X[:, 1] + X[:, 2]) / 2, the remaining columns are orthogonalized
    against the span of the first four, and y = -X[:, 0] + X[:, 1] +
    X[:, 2] exactly.
    """
    if p < 5:
        raise DatasetError("nonunique design needs p >= 5")
    if n < 4:
        raise DatasetError("nonunique design needs n >= 4")
    rng = _rng(seed)
    X = rng.standard_normal((n, p))
    X[:, 3] = (X[:, 1] + X[:, 2]) / 2.0
    # span(cols 0..3) == span(cols 0..2); two projection passes push the
    # cross inner products below 1e-10
    Q, _ = np.linalg.qr(X[:, :3])
    for _ in range(2):
        X[:, 4:] -= Q @ (Q.T @ X[:, 4:])
    y = -X[:, 0] + X[:, 1] + X[:, 2]
    beta_true = np.zeros(p)
    beta_true[0] = -1.0
    beta_true[1] = 1.0
    beta_true[2] = 1.0
    meta = {"design": "nonunique", "rho": None, "snr": None, "seed": seed,
            "k": 3, "n": n, "p": p}
    return Dataset(X=X, y=y, beta_true=beta_true, sigma=0.0, meta=meta)


def split_three_way(dataset, seed=0):
    """Shuffled partition into train/val/test of sizes ceil(n/3),
    ceil((n - train)/2), and the rest."""
    n = dataset.n
    if n < 3:
        raise DatasetError("need at least 3 samples to split three ways")
    perm = _fisher_yates(n, _rng(seed))
    n_train = -(-n // 3)
    rest = n - n_train
    n_val = -(-rest // 2)
    return Split(
        train_idx=perm[:n_train].copy(),
        val_idx=perm[n_train:n_train + n_val].copy(),
        test_idx=perm[n_train + n_val:].copy(),
    )


def parse_svmlight(path):
    """Read a `<label> <idx>:<val> ...` file into a sparse Dataset.

    Indices are 1-based and must be strictly ascending within a line;
    violations are reported with their line number.  The number of
    features is the largest index seen.
    """
    labels = []
    rows = []
    cols = []
    vals = []
    n_rows = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            try:
                label = float(parts[0])
            except ValueError:
                raise SvmlightParseError(
                    f"line {lineno}: label {parts[0]!r} is not numeric"
                ) from None
            prev = 0
            for tok in parts[1:]:
                idx_s, sep, val_s = tok.partition(":")
                if not sep:
                    raise SvmlightParseError(
                        f"line {lineno}: feature token {tok!r} lacks ':'"
                    )
                try:
                    idx = int(idx_s)
                    val = float(val_s)
                except ValueError:
                    raise SvmlightParseError(
                        f"line {lineno}: feature token {tok!r} is not "
                        "<int>:<float>"
                    ) from None
                if idx < 1:
                    raise SvmlightParseError(
                        f"line {lineno}: index {idx} is not 1-based"
                    )
                if idx == prev:
                    raise SvmlightParseError(
                        f"line {lineno}: duplicate index {idx}"
                    )
                if idx < prev:
                    raise SvmlightParseError(
                        f"line {lineno}: non-ascending index {idx} after {prev}"
                    )
                prev = idx
                rows.append(n_rows)
                cols.append(idx - 1)
                vals.append(val)
            labels.append(label)
            n_rows += 1
    if n_rows == 0:
        raise SvmlightParseError(f"no samples in {path}")
    p = max(cols) + 1 if cols else 0
    X = sparse.csc_matrix(
        (vals, (rows, cols)), shape=(n_rows, p), dtype=np.float64
    )
    y = np.asarray(labels, dtype=np.float64)
    return Dataset(X=X, y=y, meta={"source": os.fspath(path)})


def write_svmlight(dataset, path):
    """Serialize a Dataset in the 1-based `<label> <idx>:<val>` format."""
    X = dataset.X.tocsr() if sparse.issparse(dataset.X) else dataset.X
    with open(path, "w") as fh:
        for i in range(dataset.n):
            if sparse.issparse(X):
                row = X.getrow(i)
                idxs = row.indices
                vs = row.data
                order = np.argsort(idxs)
                pairs = [(int(idxs[t]) + 1, vs[t]) for t in order]
            else:
                nz = np.flatnonzero(X[i])
                pairs = [(int(j) + 1, X[i, j]) for j in nz]
            toks = [repr(float(dataset.y[i]))]
            toks += [f"{j}:{repr(float(v))}" for j, v in pairs if v != 0]
            fh.write(" ".join(toks) + "\n")


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def save_dataset(dataset, out_dir):
    """Write X.csv / y.csv / meta.csv (and beta_true.csv if known)."""
    os.makedirs(out_dir, exist_ok=True)
    X = dataset.X_dense()
    n, p = X.shape
    with open(os.path.join(out_dir, "X.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"j{j}" for j in range(p)])
        for i in range(n):
            w.writerow([_fmt(v) for v in X[i]])
    with open(os.path.join(out_dir, "y.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["y"])
        for v in dataset.y:
            w.writerow([_fmt(v)])
    meta = dataset.meta
    fields = ["n", "p", "snr", "seed", "sigma", "design", "rho", "k"]
    values = {
        "n": n, "p": p,
        "snr": meta.get("snr"), "seed": meta.get("seed"),
        "sigma": dataset.sigma, "design": meta.get("design"),
        "rho": meta.get("rho"), "k": meta.get("k"),
    }
    with open(os.path.join(out_dir, "meta.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(fields)
        w.writerow([
            values[f] if isinstance(values[f], str) else _fmt(values[f])
            for f in fields
        ])
    if dataset.beta_true is not None:
        with open(os.path.join(out_dir, "beta_true.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["beta_true"])
            for v in dataset.beta_true:
                w.writerow([_fmt(v)])


def load_dataset(in_dir):
    """Inverse of save_dataset."""
    with open(os.path.join(in_dir, "X.csv"), newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    X = np.asarray(rows, dtype=np.float64)
    if X.shape[1] != len(header):
        raise DatasetError("X.csv row width does not match its header")
    with open(os.path.join(in_dir, "y.csv"), newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        y = np.asarray([float(row[0]) for row in reader])
    with open(os.path.join(in_dir, "meta.csv"), newline="") as fh:
        reader = csv.reader(fh)
        fields = next(reader)
        raw = next(reader)
    meta = {}
    for f, v in zip(fields, raw):
        if f in ("design",):
            meta[f] = v or None
        elif v == "":
            meta[f] = None
        elif f in ("n", "p", "seed", "k"):
            meta[f] = int(float(v))
        else:
            meta[f] = float(v)
    sigma = meta.pop("sigma", None)
    beta_true = None
    bt_path = os.path.join(in_dir, "beta_true.csv")
    if os.path.exists(bt_path):
        with open(bt_path, newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            beta_true = np.asarray([float(row[0]) for row in reader])
    return Dataset(X=X, y=y, beta_true=beta_true, sigma=sigma, meta=meta)

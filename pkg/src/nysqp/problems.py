"""Problem builders and data ingestion.

* dual linear SVM with an l1 hinge penalty, box-constrained in the sample weights;
* factor-model portfolio selection with correlation caps;
* random separable QPs for testing;
* LIBSVM text files and a flat CSV dump format for QPs.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import scipy.sparse as sp

from .errors import ParseError, UnsupportedTaskError, ValidationError
from .linops import LinearOperator, make_dense_operator
from .nystrom import nystrom_approximation
from .qp_model import BOX, FREE, NONNEG, QpProblem

Matrix = Union[np.ndarray, sp.spmatrix, LinearOperator]


def _as_operator(X: Matrix) -> LinearOperator:
    if isinstance(X, LinearOperator):
        return X
    return make_dense_operator(X, copy=False)


@dataclass
class SvmSpec:
    X: Matrix
    y: np.ndarray
    tau: float = 1.0


def build_svm_qp(spec: SvmSpec, name: str = "svm") -> QpProblem:
    """Dual SVM as a separable QP in ``(v, p)``.

    ``Q = blockdiag(I_d, 0)``, ``A = [[I_d, -X diag(y)], [0, y^T]]``,
    ``c = (0, -1)`` (the objective is ``v^T v / 2 - sum(p)``), ``b = 0``, ``v`` free, ``0 <= p <= tau``.  ``A`` is a
    composed operator over ``X``; the feature matrix is never copied.
    """
    X = _as_operator(spec.X)
    y = np.asarray(spec.y, dtype=float).ravel()
    d, n = X.shape
    if y.size != n:
        raise ValidationError([f"labels: expected {n} labels, got {y.size}"])
    bad = np.flatnonzero((y != 1.0) & (y != -1.0))
    if bad.size:
        raise ValidationError([f"labels: sample {int(bad[0])} has label {y[bad[0]]!r}, expected +1 or -1"])
    if not spec.tau > 0:
        raise ValidationError([f"tau must be positive, got {spec.tau}"])

    def matvec(x):
        v, p = x[:d], x[d:]
        if x.ndim == 1:
            return np.concatenate([v - X.apply(y * p), [y @ p]])
        return np.vstack([v - X.apply_many(y[:, None] * p), y @ p])

    def rmatvec(a):
        top, t = a[:d], a[d]
        if a.ndim == 1:
            return np.concatenate([top, -y * X.apply_adjoint(top) + t * y])
        return np.vstack([top, -y[:, None] * X.apply_adjoint_many(top) + y[:, None] * t])

    weighted = None
    if X.has_row_access:
        def weighted(w):
            wv, wp = w[:d], w[d:]
            return np.concatenate([wv + X.row_weighted_norms(wp), [np.sum(y * y * wp)]])

    A = LinearOperator((d + 1, d + n), matvec, rmatvec, row_weighted_norms=weighted, batched=True)
    kinds = np.concatenate([np.full(d, FREE), np.full(n, BOX)])
    u = np.concatenate([np.zeros(d), np.full(n, float(spec.tau))])
    Q = np.concatenate([np.ones(d), np.zeros(n)])
    c = np.concatenate([np.zeros(d), -np.ones(n)])
    meta = {"kind": "svm", "d": d, "n": n, "tau": float(spec.tau)}
    return QpProblem.from_kinds(Q, A, np.zeros(d + 1), c, kinds, u, name, meta)


@dataclass
class PortfolioSpec:
    r: np.ndarray
    F: np.ndarray
    D_diag: np.ndarray
    M: np.ndarray
    u: np.ndarray
    gamma: float = 1.0


def build_portfolio_qp(spec: PortfolioSpec, name: str = "portfolio") -> QpProblem:
    """Factor-model portfolio QP over ``(x, f, t)``.

    ``min -r^T x / gamma + x^T D x + f^T f`` subject to ``M x + t = u``,
    ``F^T x - f = 0``, ``1^T x = 1``, ``x >= 0``, ``t >= 0``, ``f`` free.
    The normal equations have size ``d + s + 1``.
    """
    r = np.asarray(spec.r, dtype=float).ravel()
    F = np.asarray(spec.F, dtype=float)
    D = np.asarray(spec.D_diag, dtype=float).ravel()
    M = np.asarray(spec.M, dtype=float).reshape(-1, r.size)
    ub = np.asarray(spec.u, dtype=float).ravel()
    n, s = F.shape
    d = M.shape[0]
    if np.any(D < 0):
        raise ValidationError(["D_diag must be nonnegative"])
    if not spec.gamma > 0:
        raise ValidationError([f"gamma must be positive, got {spec.gamma}"])
    M_sq, F_sq = M * M, F * F

    def matvec(v):
        x, f, t = v[:n], v[n:n + s], v[n + s:]
        last = x.sum(axis=0, keepdims=True)
        return np.concatenate([M @ x + t, F.T @ x - f, last])

    def rmatvec(a):
        ad, af, a1 = a[:d], a[d:d + s], a[d + s:]
        return np.concatenate([M.T @ ad + F @ af + np.ones((n,) + a.shape[1:]) * a1, -af, ad])

    def weighted(w):
        wx, wf, wt = w[:n], w[n:n + s], w[n + s:]
        return np.concatenate([M_sq @ wx + wt, F_sq.T @ wx + wf, [wx.sum()]])

    A = LinearOperator((d + s + 1, n + s + d), matvec, rmatvec, row_weighted_norms=weighted, batched=True)
    kinds = np.concatenate([np.full(n, NONNEG), np.full(s, FREE), np.full(d, NONNEG)])
    Q = np.concatenate([2.0 * D, np.full(s, 2.0), np.zeros(d)])
    c = np.concatenate([-r / spec.gamma, np.zeros(s), np.zeros(d)])
    b = np.concatenate([ub, np.zeros(s), [1.0]])
    meta = {"kind": "portfolio", "n": n, "d": d, "s": s, "gamma": float(spec.gamma)}
    return QpProblem.from_kinds(Q, A, b, c, kinds, None, name, meta)


def portfolio_objective(spec: PortfolioSpec, x) -> float:
    """``-r^T x / gamma + x^T (F F^T + D) x``, the factor-model objective in ``x`` alone."""
    x = np.asarray(x, dtype=float)
    Ftx = np.asarray(spec.F).T @ x
    return float(-np.asarray(spec.r) @ x / spec.gamma + x @ (np.asarray(spec.D_diag) * x) + Ftx @ Ftx)


def covariance_spectrum(n: int, decay_fast: int) -> np.ndarray:
    """``1/i^2`` for the first ``decay_fast`` eigenvalues, then ``1e-4/(i - decay_fast)``."""
    i = np.arange(1, n + 1, dtype=float)
    fast = 1.0 / i ** 2
    slow = 1e-4 / np.maximum(i - decay_fast, 1.0)
    return np.where(i <= decay_fast, fast, slow)


def synthetic_covariance_matrix(n: int, decay_fast: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    V, _ = np.linalg.qr(rng.standard_normal((n, n)))
    lam = covariance_spectrum(n, decay_fast)
    S = (V * lam) @ V.T
    return 0.5 * (S + S.T)


def synthetic_covariance(n: int, s: int, decay_fast: int, seed: int, sigma: Optional[np.ndarray] = None):
    """Factor loadings ``F`` (n x s) and specific risk ``D`` from a rank-``s`` Nystrom fit."""
    if not 1 <= s <= n:
        raise ValidationError([f"need 1 <= s <= n, got s={s}, n={n}"])
    if sigma is None:
        sigma = synthetic_covariance_matrix(n, decay_fast, seed)
    factors = nystrom_approximation(make_dense_operator(sigma), s, seed + 1)
    F = factors.U_hat * np.sqrt(factors.lambda_hat)
    D = np.maximum(np.diag(sigma) - np.einsum("ij,ij->i", F, F), 0.0)
    return F, D


def synthetic_portfolio(n: int, d: int, s: int, seed: int = 0, decay_fast: Optional[int] = None,
                        gamma: float = 1.0) -> PortfolioSpec:
    """Random portfolio instance; caps are set so the equal-weight portfolio is strictly feasible."""
    rng = np.random.default_rng(seed)
    decay_fast = decay_fast if decay_fast is not None else max(1, min(n, 2 * s))
    F, D = synthetic_covariance(n, s, decay_fast, seed + 7)
    r = rng.standard_normal(n)
    M = rng.standard_normal((d, n))
    u = M @ np.full(n, 1.0 / n) + rng.uniform(0.0, 1.0, d)
    return PortfolioSpec(r, F, D, M, u, gamma)


def synthetic_svm(d: int, n: int, seed: int = 0, scale: float = 100.0, decay: float = 0.2, noise: float = 1.0):
    """Dense features with singular values ``scale * exp(-decay * i) + noise`` and noisy linear labels.

    Returns ``(X, y)`` with ``X`` of shape ``(d, n)``.
    """
    rng = np.random.default_rng(seed)
    k = min(d, n)
    U, _ = np.linalg.qr(rng.standard_normal((d, k)))
    V, _ = np.linalg.qr(rng.standard_normal((n, k)))
    sigma = scale * np.exp(-decay * np.arange(k)) + noise
    X = (U * sigma) @ V.T
    score = X.T @ rng.standard_normal(d)
    y = np.sign(score + 0.3 * np.std(score) * rng.standard_normal(n))
    y[y == 0] = 1.0
    if np.all(y == y[0]):
        y[: n // 2] = -y[0]
    return X, y


def random_separable_qp(n: int, m: int, seed: int, frac_free: float = 0.3, frac_box: float = 0.35,
                        name: Optional[str] = None) -> tuple[QpProblem, np.ndarray]:
    """Feasible, strictly convex separable QP with mixed variable kinds.

    Returns the problem and its dense constraint matrix.
    """
    rng = np.random.default_rng(seed)
    kinds = rng.choice([FREE, NONNEG, BOX], size=n, p=[frac_free, 1 - frac_free - frac_box, frac_box])
    A = rng.standard_normal((m, n))
    u = np.where(kinds == BOX, rng.uniform(0.5, 3.0, n), 0.0)
    x_feas = np.where(kinds == FREE, rng.standard_normal(n), 0.0)
    x_feas = np.where(kinds == NONNEG, rng.uniform(0.1, 2.0, n), x_feas)
    x_feas = np.where(kinds == BOX, u * rng.uniform(0.1, 0.9, n), x_feas)
    b = A @ x_feas
    Q = rng.uniform(0.1, 2.0, n)
    c = 2.0 * rng.standard_normal(n)
    prob = QpProblem.from_kinds(Q, make_dense_operator(A), b, c, kinds, u, name or f"random-{n}x{m}-s{seed}",
                                {"kind": "random", "seed": seed})
    return prob, A


def read_libsvm(path, n_features: Optional[int] = None):
    """Read ``label idx:val ...`` lines into ``(X, y)``.

    ``X`` is a CSC matrix of shape ``(d, n)`` with one column per sample;
    feature indices are 1-based.  Two distinct labels are mapped to -1/+1
    (larger label to +1).
    """
    rows, cols, vals, raw = [], [], [], []
    d = 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                label = float(parts[0])
            except ValueError:
                raise ParseError(f"bad label {parts[0]!r}", lineno) from None
            j = len(raw)
            raw.append(label)
            for tok in parts[1:]:
                key, sep, val = tok.partition(":")
                if not sep:
                    raise ParseError(f"expected idx:val, got {tok!r}", lineno)
                if key == "qid":
                    continue
                try:
                    idx, v = int(key), float(val)
                except ValueError:
                    raise ParseError(f"bad feature token {tok!r}", lineno) from None
                if idx < 1:
                    raise ParseError(f"feature index must be >= 1, got {idx}", lineno)
                rows.append(idx - 1)
                cols.append(j)
                vals.append(v)
                d = max(d, idx)
    raw = np.asarray(raw)
    labels = np.unique(raw)
    if labels.size > 2:
        raise UnsupportedTaskError(f"expected a binary task, found {labels.size} distinct labels")
    if labels.size == 2:
        y = np.where(raw == labels[1], 1.0, -1.0)
    elif labels.size == 1 and labels[0] in (-1.0, 1.0):
        y = raw.copy()
    else:
        raise UnsupportedTaskError("two distinct labels are required")
    if n_features is not None:
        if n_features < d:
            raise ParseError(f"file uses feature {d} but n_features={n_features}")
        d = n_features
    X = sp.csc_matrix((vals, (rows, cols)), shape=(d, raw.size))
    X.sum_duplicates()
    return X, y


def write_libsvm(path, X, y):
    X = sp.csc_matrix(X)
    with open(path, "w", encoding="utf-8") as fh:
        for j in range(X.shape[1]):
            lo, hi = X.indptr[j], X.indptr[j + 1]
            order = np.argsort(X.indices[lo:hi])
            feats = " ".join(f"{X.indices[lo + k] + 1}:{float(X.data[lo + k])!r}" for k in order)
            lab = "+1" if y[j] > 0 else "-1"
            fh.write(f"{lab} {feats}".rstrip() + "\n")


QP_CSV_HEADER = ["field", "i", "j", "value"]


def write_qp_csv(path, problem: QpProblem, A_matrix=None, manifest_lines=()):
    """Dump a problem as ``field,i,j,value`` rows (``A`` densified if not given)."""
    from .linops import densify

    A = densify(problem.A.with_counter(None)) if A_matrix is None else np.asarray(A_matrix)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for line in manifest_lines:
            fh.write(f"# {line}\n")
        wr = csv.writer(fh)
        wr.writerow(QP_CSV_HEADER)
        wr.writerow(["shape", problem.m, problem.n, ""])
        for i, j in zip(*np.nonzero(A)):
            wr.writerow(["A", i, j, repr(float(A[i, j]))])
        for i, v in enumerate(problem.b):
            wr.writerow(["b", i, "", repr(float(v))])
        for field_name, vec in (("c", problem.c), ("q", problem.Q_diag), ("u", problem.u)):
            for i, v in enumerate(vec):
                if v != 0:
                    wr.writerow([field_name, i, "", repr(float(v))])
        for i, k in enumerate(problem.kinds):
            wr.writerow(["kind", i, "", int(k)])


def read_qp_csv(path, name: Optional[str] = None) -> QpProblem:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader, None)
    if header != QP_CSV_HEADER:
        raise ParseError(f"expected header {','.join(QP_CSV_HEADER)}, got {header}")
    shape = None
    entries: dict = {k: [] for k in ("A", "b", "c", "q", "u", "kind")}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 4:
            raise ParseError(f"expected 4 fields, got {len(row)}", lineno)
        f = row[0]
        try:
            if f == "shape":
                shape = (int(row[1]), int(row[2]))
            elif f == "A":
                entries["A"].append((int(row[1]), int(row[2]), float(row[3])))
            elif f in entries:
                entries[f].append((int(row[1]), float(row[3])))
            else:
                raise ParseError(f"unknown field {f!r}", lineno)
        except ValueError:
            raise ParseError(f"malformed row {row}", lineno) from None
    if shape is None:
        raise ParseError("missing shape row")
    m, n = shape
    A = np.zeros((m, n))
    for i, j, v in entries["A"]:
        A[i, j] = v
    vecs = {}
    for f, size in (("b", m), ("c", n), ("q", n), ("u", n), ("kind", n)):
        vec = np.zeros(size)
        for i, v in entries[f]:
            vec[i] = v
        vecs[f] = vec
    return QpProblem.from_kinds(vecs["q"], make_dense_operator(A), vecs["b"], vecs["c"], vecs["kind"].astype(int),
                                vecs["u"], name or str(path), {"kind": "csv", "path": str(path)})

"""Dense ground-truth tools for small problems.

Active-set enumeration for separable QPs, condition numbers from dense
eigensolves, and the densified five-block Newton system.  Everything here
materializes matrices and is meant for desk-size checks only.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import IndefiniteError, InfeasibleError, ParameterError
from .linops import LinearOperator, densify
from .qp_model import QpProblem

MAX_ASSIGNMENTS = 1 << 24
MAX_DENSE_SIZE = 400
_BATCH = 2048

LOWER, UPPER, INTERIOR = 0, 1, 2


@dataclass
class DenseQpSolution:
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    w: np.ndarray
    s: np.ndarray
    objective: float
    kkt_residual: float
    active: tuple = ()


def _dense_A(problem: QpProblem) -> np.ndarray:
    return densify(problem.A.with_counter(None))


def kkt_residual(problem: QpProblem, x, y, z, w, s, A=None) -> float:
    """Largest violation of feasibility, dual feasibility, signs and complementarity."""
    A = _dense_A(problem) if A is None else A
    bm, jm = problem.bounded_mask, problem.box_mask
    viol = [
        np.abs(A @ x - problem.b).max(initial=0.0),
        np.abs(problem.c + problem.Q_diag * x - A.T @ y - z + s).max(initial=0.0),
        np.abs(np.where(jm, problem.u - x - w, 0.0)).max(initial=0.0),
        np.maximum(-x[bm], 0.0).max(initial=0.0),
        np.maximum(-w[jm], 0.0).max(initial=0.0),
        np.maximum(-z, 0.0).max(initial=0.0),
        np.maximum(-s, 0.0).max(initial=0.0),
        np.abs(x[bm] * z[bm]).max(initial=0.0),
        np.abs(w[jm] * s[jm]).max(initial=0.0),
        np.abs(z[problem.free_mask]).max(initial=0.0),
        np.abs(s[~jm]).max(initial=0.0),
    ]
    return float(max(viol))


def _assignments(problem: QpProblem):
    kinds = []
    for i in range(problem.n):
        if problem.box_mask[i]:
            kinds.append((LOWER, UPPER, INTERIOR))
        elif problem.nonneg_mask[i]:
            kinds.append((LOWER, INTERIOR))
        else:
            kinds.append((INTERIOR,))
    return itertools.product(*kinds)


def _solve_batch(K, R, tol):
    try:
        return np.linalg.solve(K, R[..., None])[..., 0]
    except np.linalg.LinAlgError:
        pass
    sol = np.empty(R.shape)
    for j in range(K.shape[0]):
        try:
            sol[j] = np.linalg.solve(K[j], R[j])
        except np.linalg.LinAlgError:
            # Singular system: accept a least-squares solution only if it is exact.
            v = np.linalg.lstsq(K[j], R[j], rcond=None)[0]
            sol[j] = v if np.abs(K[j] @ v - R[j]).max() <= tol else np.nan
    return sol


def enumerate_active_sets(problem: QpProblem, feas_tol: float = 1e-9) -> DenseQpSolution:
    """Brute-force optimum over every active-set assignment of the bounded variables.

    Each assignment fixes the active variables at their bounds and zeroes
    the multipliers of the rest; the resulting square KKT system is solved
    densely.  Among candidates that are feasible with correctly signed
    multipliers, the one with the lowest objective wins; ties go to the
    lexicographically smallest assignment.
    """
    n, m = problem.n, problem.m
    n_box = int(problem.box_mask.sum())
    n_nonneg = int(problem.nonneg_mask.sum())
    total = 3 ** n_box * 2 ** n_nonneg
    if total > MAX_ASSIGNMENTS:
        raise ParameterError(f"{total} active-set assignments exceed the enumeration cap {MAX_ASSIGNMENTS}")
    A = _dense_A(problem)
    Q, c, b, u = problem.Q_diag, problem.c, problem.b, problem.u
    size = 2 * n + m

    # Unknowns (x, y, nu) with nu = z - s.  Rows: stationarity, Ax = b, then one
    # row per variable: x_i at its bound when active, nu_i = 0 otherwise.
    base = np.zeros((size, size))
    base[:n, :n] = np.diag(Q)
    base[:n, n:n + m] = -A.T
    base[:n, n + m:] = -np.eye(n)
    base[n:n + m, :n] = A
    rhs_base = np.concatenate([-c, b, np.zeros(n)])
    rows = n + m + np.arange(n)
    scale = 1.0 + max(np.abs(b).max(initial=0.0), np.abs(c).max(initial=0.0), np.abs(u).max(initial=0.0))
    tol = feas_tol * scale

    best = None
    it = _assignments(problem)
    while True:
        chunk = list(itertools.islice(it, _BATCH))
        if not chunk:
            break
        act = np.array(chunk, dtype=np.int8)
        k = act.shape[0]
        K = np.broadcast_to(base, (k, size, size)).copy()
        R = np.broadcast_to(rhs_base, (k, size)).copy()
        fixed = act != INTERIOR
        kk, ii = np.nonzero(fixed)
        K[kk, rows[ii], ii] = 1.0
        R[kk, rows[ii]] = np.where(act[kk, ii] == UPPER, u[ii], 0.0)
        kk, ii = np.nonzero(~fixed)
        K[kk, rows[ii], n + m + ii] = 1.0
        sol = _solve_batch(K, R, tol)
        X, Y, NU = sol[:, :n], sol[:, n:n + m], sol[:, n + m:]
        ok = np.all(np.isfinite(sol), axis=1)
        ok &= np.all(np.abs(X @ A.T - b) <= tol, axis=1) if m else ok
        ok &= np.all(~problem.bounded_mask | (X >= -tol), axis=1)
        ok &= np.all(~problem.box_mask | (X <= u + tol), axis=1)
        ok &= np.all((act != LOWER) | (NU >= -tol), axis=1)
        ok &= np.all((act != UPPER) | (NU <= tol), axis=1)
        for j in np.flatnonzero(ok):
            x = X[j]
            obj = float(0.5 * x @ (Q * x) + c @ x)
            if best is None or obj < best[0] - 1e-12 * (1.0 + abs(best[0])):
                best = (obj, x.copy(), Y[j].copy(), NU[j].copy(), tuple(int(a) for a in act[j]))
    if best is None:
        raise InfeasibleError("no active-set assignment yields a feasible KKT point")

    obj, x, y, nu, active = best
    active_arr = np.array(active)
    x = np.where(active_arr == LOWER, 0.0, np.where(active_arr == UPPER, u, x))
    z = np.where(active_arr == LOWER, np.maximum(nu, 0.0), 0.0)
    s = np.where(active_arr == UPPER, np.maximum(-nu, 0.0), 0.0)
    w = np.where(problem.box_mask, u - x, 0.0)
    res = kkt_residual(problem, x, y, z, w, s, A)
    return DenseQpSolution(x, y, z, w, s, problem.objective(x), res, active)


def dense_preconditioner_inverse(precond_inverse, m: int) -> np.ndarray:
    """Columns ``P^{-1} e_j`` of a callable preconditioner, symmetrized."""
    P = np.empty((m, m))
    e = np.zeros(m)
    for j in range(m):
        e[j] = 1.0
        P[:, j] = precond_inverse(e)
        e[j] = 0.0
    return 0.5 * (P + P.T)


def condition_number(op, precond_inverse=None) -> float:
    """Spectral condition number of ``op`` or of ``P^{-1/2} op P^{-1/2}``.

    ``op`` is a :class:`LinearOperator` or a dense array of size at most 400.
    """
    N = densify(op) if isinstance(op, LinearOperator) else np.asarray(op, dtype=float)
    m = N.shape[0]
    if N.shape != (m, m):
        raise ParameterError(f"condition number needs a square operator, got {N.shape}")
    if m > MAX_DENSE_SIZE:
        raise ParameterError(f"dense condition number capped at m={MAX_DENSE_SIZE}, got {m}")
    N = 0.5 * (N + N.T)
    if precond_inverse is not None:
        p, V = np.linalg.eigh(dense_preconditioner_inverse(precond_inverse, m))
        if p.min() <= 0:
            raise IndefiniteError(f"preconditioner inverse is not positive definite (min eig {p.min():.3e})")
        H = (V * np.sqrt(p)) @ V.T
        N = H @ N @ H
        N = 0.5 * (N + N.T)
    lam = np.linalg.eigvalsh(N)
    if lam[0] <= 0:
        raise IndefiniteError(f"operator is not positive definite (min eig {lam[0]:.3e})")
    return float(lam[-1] / lam[0])


@dataclass
class NewtonLayout:
    """Index sets of the five-block system: ``dx, dy, dw_J, dz_IJ, ds_J``."""

    n: int
    m: int
    J: np.ndarray
    IJ: np.ndarray

    @property
    def col_slices(self):
        n, m, nj, nij = self.n, self.m, self.J.size, self.IJ.size
        o = np.cumsum([0, n, m, nj, nij, nj])
        return [slice(o[i], o[i + 1]) for i in range(5)]

    @property
    def size(self) -> int:
        return self.n + self.m + 2 * self.J.size + self.IJ.size


def newton_matrix(problem: QpProblem, state, params, A: Optional[np.ndarray] = None):
    """Dense five-block Newton matrix and its layout.

    Block rows: dual feasibility, primal feasibility, upper bounds,
    ``x z`` complementarity, ``w s`` complementarity.
    """
    A = _dense_A(problem) if A is None else A
    n, m = problem.n, problem.m
    J = np.flatnonzero(problem.box_mask)
    IJ = np.flatnonzero(problem.bounded_mask)
    lay = NewtonLayout(n, m, J, IJ)
    cx, cy, cw, cz, cs = lay.col_slices
    rows = lay.col_slices  # square system: row blocks mirror column blocks
    r1, r2, r3, r4, r5 = rows[0], rows[1], rows[2], rows[3], rows[4]
    K = np.zeros((lay.size, lay.size))
    K[r1, cx] = -np.diag(problem.Q_diag + params.rho)
    K[r1, cy] = A.T
    K[r1, cz] = np.eye(n)[:, IJ]
    K[r1, cs] = -np.eye(n)[:, J]
    K[r2, cx] = A
    K[r2, cy] = params.delta * np.eye(m)
    K[r3, cx] = np.eye(n)[J]
    K[r3, cw] = np.eye(J.size)
    K[r4, cx] = np.diag(state.z)[IJ]
    K[r4, cz] = np.diag(state.x[IJ])
    K[r5, cw] = np.diag(state.s[J])
    K[r5, cs] = np.diag(state.w[J])
    return K, lay


def pack_rhs(rhs, lay: NewtonLayout) -> np.ndarray:
    return np.concatenate([rhs.r_d, rhs.r_p, rhs.r_u[lay.J], rhs.r_xz[lay.IJ], rhs.r_ws[lay.J]])


def pack_direction(d, lay: NewtonLayout) -> np.ndarray:
    return np.concatenate([d.dx, d.dy, d.dw[lay.J], d.dz[lay.IJ], d.ds[lay.J]])


def newton_block_residuals(problem: QpProblem, state, params, rhs, direction, A=None) -> list:
    """Euclidean norms of ``K d - r`` per block, plus ``||r||``."""
    K, lay = newton_matrix(problem, state, params, A)
    r = pack_rhs(rhs, lay)
    res = K @ pack_direction(direction, lay) - r
    return [float(np.linalg.norm(res[sl])) for sl in lay.col_slices], float(np.linalg.norm(r))


def solve_newton_dense(problem: QpProblem, state, params, rhs, A=None) -> np.ndarray:
    """Exact direction from the dense five-block system (packed layout)."""
    K, lay = newton_matrix(problem, state, params, A)
    return np.linalg.solve(K, pack_rhs(rhs, lay))

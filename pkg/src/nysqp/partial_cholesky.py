"""Partial Cholesky preconditioner for ``A diag(d_reg)^{-1} A^T + delta I``.

A rank-``ell`` Cholesky factor on the ``ell`` largest diagonal entries plus
the diagonal of the Schur complement on the rest.  Only the diagonal of the
normal matrix and ``ell`` of its columns are ever formed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .errors import DimensionError, IndefiniteError, ParameterError
from .linops import LinearOperator

log = logging.getLogger(__name__)

_CHUNK = 256


def compute_diag_matrix_free(A: LinearOperator, d_reg, delta: float, entrywise: Optional[bool] = None) -> np.ndarray:
    """Diagonal of ``A diag(d_reg)^{-1} A^T + delta I``.

    The matrix-free path uses one adjoint product per row of ``A``.  With
    ``entrywise`` left as ``None`` the stored-rows fast path is used when
    ``A`` offers one.
    """
    d_reg = np.asarray(d_reg, dtype=float)
    if d_reg.shape != (A.cols,):
        raise DimensionError("d_reg", A.cols, d_reg.shape[0])
    d_inv = 1.0 / d_reg
    use_rows = A.has_row_access if entrywise is None else entrywise
    if use_rows:
        return A.row_weighted_norms(d_inv) + delta
    m = A.rows
    out = np.empty(m)
    scale = np.sqrt(d_inv)[:, None]
    for start in range(0, m, _CHUNK):
        stop = min(m, start + _CHUNK)
        E = np.zeros((m, stop - start))
        E[np.arange(start, stop), np.arange(stop - start)] = 1.0
        R = scale * A.apply_adjoint_many(E)
        out[start:stop] = np.einsum("ij,ij->j", R, R)
    return out + delta


@dataclass
class PartialCholeskyFactors:
    perm: np.ndarray
    L11: np.ndarray
    L21: np.ndarray
    schur_diag: np.ndarray
    delta: float
    clamped: int = 0

    @property
    def rank(self) -> int:
        return self.L11.shape[0]

    @property
    def size(self) -> int:
        return self.perm.size

    def dense(self) -> np.ndarray:
        """``P_Chol`` as a dense matrix (tests only)."""
        m, ell = self.size, self.rank
        L = np.zeros((m, m))
        L[:ell, :ell] = self.L11
        L[ell:, :ell] = self.L21
        L[ell:, ell:] = np.eye(m - ell)
        D = np.concatenate([np.ones(ell), self.schur_diag])
        Pp = (L * D) @ L.T
        out = np.empty_like(Pp)
        out[np.ix_(self.perm, self.perm)] = Pp
        return out


def build_partial_cholesky(A: LinearOperator, d_reg, delta: float, rank: int, entrywise: Optional[bool] = None) -> PartialCholeskyFactors:
    """Greedy static-pivot rank-``rank`` partial Cholesky factorization.

    Pivots are the ``rank`` largest diagonal entries, chosen once.  Schur
    diagonal entries below ``eps * max(diag)`` are clamped up to that floor.
    """
    d_reg = np.asarray(d_reg, dtype=float)
    m = A.rows
    ell = int(rank)
    if not 1 <= ell <= m:
        raise ParameterError(f"rank must be in [1, {m}], got {ell}")
    if not delta > 0:
        raise ParameterError(f"delta must be positive, got {delta}")

    diag = compute_diag_matrix_free(A, d_reg, delta, entrywise)
    perm = np.argsort(-diag, kind="stable")
    piv = perm[:ell]

    E = np.zeros((m, ell))
    E[piv, np.arange(ell)] = 1.0
    cols = A.apply_many(A.apply_adjoint_many(E) / d_reg[:, None]) + delta * E
    cols = cols[perm]
    N11 = 0.5 * (cols[:ell] + cols[:ell].T)
    N21 = cols[ell:]
    try:
        L11 = sla.cholesky(N11, lower=True)
    except np.linalg.LinAlgError as exc:
        raise IndefiniteError("leading pivot block is not positive definite") from exc
    L21 = sla.solve_triangular(L11, N21.T, lower=True).T

    schur = diag[perm[ell:]] - np.einsum("ij,ij->i", L21, L21)
    floor = np.finfo(float).eps * float(diag.max())
    low = schur < floor
    if np.any(low):
        log.warning("clamped %d Schur diagonal entries to %.3e", int(low.sum()), floor)
        schur = np.where(low, floor, schur)
    return PartialCholeskyFactors(perm, L11, L21, schur, float(delta), int(low.sum()))


def apply_partial_cholesky_inverse(f: PartialCholeskyFactors, v) -> np.ndarray:
    """``P_Chol^{-1} v`` via two triangular solves and one diagonal scaling."""
    v = np.asarray(v, dtype=float)
    if v.shape != (f.size,):
        raise DimensionError("partial Cholesky apply", f.size, v.shape[0])
    ell = f.rank
    w = v[f.perm]
    t1 = sla.solve_triangular(f.L11, w[:ell], lower=True)
    t2 = (w[ell:] - f.L21 @ t1) / f.schur_diag
    o1 = sla.solve_triangular(f.L11, t1 - f.L21.T @ t2, lower=True, trans="T")
    out = np.empty_like(v)
    out[f.perm] = np.concatenate([o1, t2])
    return out


class PartialCholeskyPreconditioner:
    """Callable ``v -> P_Chol^{-1} v`` wrapper around the factors."""

    def __init__(self, factors: PartialCholeskyFactors):
        self.factors = factors

    def apply_inverse(self, v):
        return apply_partial_cholesky_inverse(self.factors, v)

    __call__ = apply_inverse

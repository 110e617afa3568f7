"""Matrix-free linear operators.

Everything the solver knows about the constraint matrix goes through
:class:`LinearOperator`: a shape plus forward and adjoint products.  Each
operator can share a :class:`MatvecCounter` so benchmarks can report cost in
matrix-vector products rather than seconds.
"""

from __future__ import annotations

import threading
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .errors import DimensionError, NonpositiveScalingError, ParameterError

Matvec = Callable[[np.ndarray], np.ndarray]


class MatvecCounter:
    """Thread-safe tally of forward and adjoint products."""

    def __init__(self):
        self._lock = threading.Lock()
        self.forward = 0
        self.adjoint = 0

    def add(self, forward=0, adjoint=0):
        with self._lock:
            self.forward += forward
            self.adjoint += adjoint

    @property
    def total(self):
        return self.forward + self.adjoint

    def snapshot(self):
        with self._lock:
            return self.forward, self.adjoint

    def reset(self):
        with self._lock:
            self.forward = 0
            self.adjoint = 0

    def __repr__(self):
        return f"MatvecCounter(forward={self.forward}, adjoint={self.adjoint})"


class LinearOperator:
    """An ``rows x cols`` matrix accessed only through products.

    Parameters
    ----------
    shape : (int, int)
    matvec, rmatvec : callables
        ``v -> M v`` and ``v -> M^T v``.
    counter : MatvecCounter, optional
        Incremented once per call of :meth:`apply` / :meth:`apply_adjoint`.
    row_weighted_norms : callable, optional
        Fast path ``w -> diag(M diag(w) M^T)`` for operators whose rows are
        stored explicitly.  Does not touch the counter.
    batched : bool
        The callbacks also accept 2-D arrays (one vector per column), which
        lets :meth:`apply_many` make a single call.  Counting is per column
        either way.
    """

    def __init__(
        self,
        shape: tuple[int, int],
        matvec: Matvec,
        rmatvec: Matvec,
        counter: Optional[MatvecCounter] = None,
        row_weighted_norms: Optional[Matvec] = None,
        batched: bool = False,
    ):
        rows, cols = (int(s) for s in shape)
        if rows < 0 or cols < 0:
            raise ParameterError(f"invalid shape {shape}")
        self.shape = (rows, cols)
        self._matvec = matvec
        self._rmatvec = rmatvec
        self.counter = counter
        self._row_weighted_norms = row_weighted_norms
        self.batched = batched

    @property
    def rows(self) -> int:
        return self.shape[0]

    @property
    def cols(self) -> int:
        return self.shape[1]

    @property
    def has_row_access(self) -> bool:
        return self._row_weighted_norms is not None

    def apply(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.cols,):
            raise DimensionError("apply", self.cols, v.shape[0] if v.ndim else v.shape)
        if self.counter is not None:
            self.counter.add(forward=1)
        return np.asarray(self._matvec(v), dtype=float).reshape(self.rows)

    def apply_adjoint(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.rows,):
            raise DimensionError("apply_adjoint", self.rows, v.shape[0] if v.ndim else v.shape)
        if self.counter is not None:
            self.counter.add(adjoint=1)
        return np.asarray(self._rmatvec(v), dtype=float).reshape(self.cols)

    def apply_many(self, V: np.ndarray) -> np.ndarray:
        """Apply to each column of ``V``; counts ``V.shape[1]`` products."""
        V = np.asarray(V, dtype=float)
        if V.ndim != 2 or V.shape[0] != self.cols:
            raise DimensionError("apply_many", self.cols, V.shape[0])
        k = V.shape[1]
        if self.counter is not None:
            self.counter.add(forward=k)
        if self.batched:
            return np.asarray(self._matvec(V), dtype=float).reshape(self.rows, k)
        out = np.empty((self.rows, k))
        for j in range(k):
            out[:, j] = self._matvec(V[:, j])
        return out

    def apply_adjoint_many(self, V: np.ndarray) -> np.ndarray:
        V = np.asarray(V, dtype=float)
        if V.ndim != 2 or V.shape[0] != self.rows:
            raise DimensionError("apply_adjoint_many", self.rows, V.shape[0])
        k = V.shape[1]
        if self.counter is not None:
            self.counter.add(adjoint=k)
        if self.batched:
            return np.asarray(self._rmatvec(V), dtype=float).reshape(self.cols, k)
        out = np.empty((self.cols, k))
        for j in range(k):
            out[:, j] = self._rmatvec(V[:, j])
        return out

    def row_weighted_norms(self, w: np.ndarray) -> np.ndarray:
        """Return ``diag(M diag(w) M^T)`` using stored rows."""
        if self._row_weighted_norms is None:
            raise NotImplementedError("operator has no row access")
        return np.asarray(self._row_weighted_norms(np.asarray(w, dtype=float)), dtype=float)

    def with_counter(self, counter: Optional[MatvecCounter]) -> "LinearOperator":
        """Shallow copy sharing the callbacks but reporting to ``counter``."""
        return LinearOperator(
            self.shape, self._matvec, self._rmatvec, counter, self._row_weighted_norms,
            self.batched,
        )

    def __matmul__(self, v):
        return self.apply(v)

    def __repr__(self):
        return f"{type(self).__name__}(shape={self.shape})"


def make_dense_operator(M, counter: Optional[MatvecCounter] = None, copy: bool = True) -> LinearOperator:
    """Wrap a dense or scipy-sparse matrix as a :class:`LinearOperator`.

    With ``copy=False`` a float64 ndarray is referenced rather than copied.
    """
    if sp.issparse(M):
        M = sp.csr_matrix(M, dtype=float)
        M_sq = None

        def weighted(w):
            nonlocal M_sq
            if M_sq is None:
                M_sq = M.multiply(M).tocsr()
            return M_sq @ w

        MT = M.T.tocsr()
        return LinearOperator(
            M.shape, lambda v: M @ v, lambda v: MT @ v, counter, weighted, batched=True
        )

    M = np.array(M, dtype=float, copy=True) if copy else np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ParameterError(f"expected a 2-D matrix, got ndim={M.ndim}")
    if not np.all(np.isfinite(M)):
        raise ParameterError("matrix has non-finite entries")
    M_sq = None

    def weighted_dense(w):
        nonlocal M_sq
        if M_sq is None:
            M_sq = M * M
        return M_sq @ w

    return LinearOperator(
        M.shape, lambda v: M @ v, lambda v: M.T @ v, counter, weighted_dense, batched=True
    )


class DiagonalOperator(LinearOperator):
    """Self-adjoint ``v -> d * v``."""

    def __init__(self, d, counter: Optional[MatvecCounter] = None):
        self.d = np.array(d, dtype=float).ravel()
        n = self.d.size
        super().__init__(
            (n, n), self._mul, self._mul, counter, lambda w: self.d * self.d * w, batched=True
        )

    def _mul(self, v):
        return self.d * v if v.ndim == 1 else self.d[:, None] * v


class NormalEquationsOperator(LinearOperator):
    """``v -> A diag(d_reg)^{-1} A^T v + delta v``.

    ``d_reg`` holds ``Q + Theta^{-1} + rho`` and must be strictly positive.
    Each :meth:`apply` costs one adjoint product and one forward product
    with ``A``; :attr:`applications` counts calls.
    """

    def __init__(self, A: LinearOperator, d_reg, delta: float):
        d_reg = np.asarray(d_reg, dtype=float)
        if d_reg.shape != (A.cols,):
            raise DimensionError("d_reg", A.cols, d_reg.shape[0])
        bad = np.flatnonzero(~(d_reg > 0))
        if bad.size:
            j = int(bad[0])
            raise NonpositiveScalingError(j, float(d_reg[j]))
        if not delta > 0:
            raise ParameterError(f"delta must be positive, got {delta}")
        self.A = A
        self.d_reg = d_reg
        self.d_inv = 1.0 / d_reg
        self.delta = float(delta)
        self.applications = 0
        self._lock = threading.Lock()
        m = A.rows
        super().__init__((m, m), self._normal, self._normal, batched=True)

    def _psd(self, v):
        if v.ndim == 1:
            with self._lock:
                self.applications += 1
            return self.A.apply(self.d_inv * self.A.apply_adjoint(v))
        with self._lock:
            self.applications += v.shape[1]
        return self.A.apply_many(self.d_inv[:, None] * self.A.apply_adjoint_many(v))

    def _normal(self, v):
        return self._psd(v) + self.delta * v

    def without_shift(self) -> LinearOperator:
        """The PSD part ``A diag(d_reg)^{-1} A^T`` (what gets sketched)."""
        return LinearOperator(self.shape, self._psd, self._psd, batched=True)


def make_normal_operator(A: LinearOperator, q, theta_inv, rho: float, delta: float) -> NormalEquationsOperator:
    """Build ``A (Q + Theta^{-1} + rho I)^{-1} A^T + delta I`` lazily."""
    q = np.asarray(q, dtype=float)
    theta_inv = np.asarray(theta_inv, dtype=float)
    if q.shape != (A.cols,):
        raise DimensionError("q", A.cols, q.shape[0])
    if theta_inv.shape != (A.cols,):
        raise DimensionError("theta_inv", A.cols, theta_inv.shape[0])
    if rho < 0:
        raise ParameterError(f"rho must be nonnegative, got {rho}")
    return NormalEquationsOperator(A, q + theta_inv + rho, delta)


def densify(op: LinearOperator) -> np.ndarray:
    """Materialize ``op`` column by column (tests and dense oracles only)."""
    out = np.empty(op.shape)
    e = np.zeros(op.cols)
    for j in range(op.cols):
        e[j] = 1.0
        out[:, j] = op.apply(e)
        e[j] = 0.0
    return out

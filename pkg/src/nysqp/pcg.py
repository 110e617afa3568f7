"""Preconditioned conjugate gradient with an absolute true-residual stop."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DimensionError, NumericalBreakdown, ParameterError
from .linops import LinearOperator

log = logging.getLogger(__name__)

RECOMPUTE_EVERY = 50


@dataclass
class PcgConfig:
    abs_tol: float = 1e-8
    max_iters: int = 1000
    report_every: int = 0

    def __post_init__(self):
        if not self.abs_tol > 0:
            raise ParameterError(f"abs_tol must be positive, got {self.abs_tol}")
        if self.max_iters < 1:
            raise ParameterError(f"max_iters must be >= 1, got {self.max_iters}")


@dataclass
class PcgResult:
    solution: np.ndarray
    iters: int
    final_residual_norm: float
    converged: bool
    applications: int = 0


def _finite(*vals):
    return all(np.isfinite(v) for v in vals)


def pcg_solve(
    op: LinearOperator,
    rhs,
    precond_inverse: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    config: Optional[PcgConfig] = None,
    warm_start=None,
    callback: Optional[Callable[[int, np.ndarray], None]] = None,
) -> PcgResult:
    """Solve ``op x = rhs`` for SPD ``op``.

    Stops once ``||rhs - op x||_2 <= config.abs_tol``.  The recursively
    updated residual is replaced by an explicit one every
    ``RECOMPUTE_EVERY`` iterations and whenever it claims convergence, so a
    converged result always satisfies the bound with a fresh product.

    ``callback(k, x)`` is called after every iteration.
    """
    config = config or PcgConfig()
    rhs = np.asarray(rhs, dtype=float)
    m = op.rows
    if op.cols != m:
        raise DimensionError("pcg operator columns", m, op.cols)
    if rhs.shape != (m,):
        raise DimensionError("pcg rhs", m, rhs.shape[0])
    M = precond_inverse if precond_inverse is not None else (lambda v: v)
    tol = config.abs_tol
    applications = 0

    def apply(v):
        nonlocal applications
        applications += 1
        return op.apply(v)

    if warm_start is None or not np.any(warm_start):
        x = np.zeros(m)
        r = rhs.copy()
    else:
        x = np.array(warm_start, dtype=float)
        if x.shape != (m,):
            raise DimensionError("pcg warm start", m, x.shape[0])
        r = rhs - apply(x)

    rnorm = float(np.linalg.norm(r))
    if not np.isfinite(rnorm):
        raise NumericalBreakdown("non-finite initial residual", 0)
    if rnorm <= tol:
        return PcgResult(x, 0, rnorm, True, applications)

    z = M(r)
    rz = float(r @ z)
    p = z.copy()
    for k in range(1, config.max_iters + 1):
        q = apply(p)
        pq = float(p @ q)
        if not _finite(pq, rz):
            raise NumericalBreakdown("non-finite inner product", k)
        if pq <= 0.0:
            raise NumericalBreakdown("p^T A p <= 0: operator not positive definite", k)
        alpha = rz / pq
        x += alpha * p
        if k % RECOMPUTE_EVERY == 0:
            r = rhs - apply(x)
        else:
            r -= alpha * q
        rnorm = float(np.linalg.norm(r))
        if rnorm <= tol:
            r = rhs - apply(x)
            rnorm = float(np.linalg.norm(r))
        if callback is not None:
            callback(k, x)
        if config.report_every and k % config.report_every == 0:
            log.info("pcg iter %d residual %.3e", k, rnorm)
        if rnorm <= tol:
            return PcgResult(x, k, rnorm, True, applications)
        if not np.isfinite(rnorm):
            raise NumericalBreakdown("non-finite residual", k)
        z = M(r)
        rz_new = float(r @ z)
        if not _finite(rz_new):
            raise NumericalBreakdown("non-finite inner product", k)
        if rz_new <= 0.0:
            raise NumericalBreakdown("r^T P^-1 r <= 0: preconditioner not positive definite", k)
        p = z + (rz_new / rz) * p
        rz = rz_new

    rnorm = float(np.linalg.norm(rhs - apply(x)))
    return PcgResult(x, config.max_iters, rnorm, rnorm <= tol, applications)


def residual_tolerance_schedule(mu: float, mu0: float, floor: float = 1e-10, c: float = 1e-2) -> float:
    """Absolute PCG tolerance ``max(floor, c * mu)`` at duality measure ``mu``."""
    if not (mu > 0 and mu0 > 0 and floor > 0 and c > 0):
        raise ParameterError("mu, mu0, floor and c must all be positive")
    return max(floor, c * mu)

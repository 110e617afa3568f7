"""Randomized Nystrom approximation and the Nystrom preconditioner."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import DimensionError, ParameterError, SketchFailure
from .linops import LinearOperator

SHIFT_RETRIES = 3


def gaussian_test_matrix(m: int, ell: int, seed: int) -> np.ndarray:
    """``m x ell`` standard normal matrix from a counter-based generator.

    Columns are drawn in order, so the first ``k`` columns for a given seed
    do not depend on ``ell``.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    return rng.standard_normal((ell, m)).T


@dataclass
class NystromFactors:
    """``N_hat = U_hat diag(lambda_hat) U_hat^T``; ``shift`` is the final stabilizing shift."""

    U_hat: np.ndarray
    lambda_hat: np.ndarray
    shift: float = 0.0

    @property
    def rank(self) -> int:
        return self.lambda_hat.size

    def dense(self) -> np.ndarray:
        return (self.U_hat * self.lambda_hat) @ self.U_hat.T


def _thin_svd(B, method):
    if method == "lapack":
        U, sigma, _ = np.linalg.svd(B, full_matrices=False)
        return U, sigma * sigma
    if method == "gram":
        w, V = np.linalg.eigh(B.T @ B)
        order = np.argsort(w)[::-1]
        w = np.maximum(w[order], 0.0)
        V = V[:, order]
        sigma = np.sqrt(w)
        nz = sigma > 0
        U = np.zeros_like(B)
        U[:, nz] = (B @ V[:, nz]) / sigma[nz]
        # Gram squaring loses orthogonality on the small singular directions.
        U, R = np.linalg.qr(U)
        U *= np.sign(np.where(np.diag(R) == 0, 1.0, np.diag(R)))
        return U, w
    raise ParameterError(f"unknown svd method {method!r}")


def nystrom_approximation(op: LinearOperator, sketch_size: int, rng_seed: int, svd_method: str = "lapack") -> NystromFactors:
    """Rank-``sketch_size`` randomized Nystrom approximation of a PSD operator.

    Uses ``sketch_size`` products with ``op`` plus ``O(sketch_size^2 m)``
    dense work.  If the shifted core matrix is not numerically positive
    definite the shift is multiplied by 10, up to three times.
    """
    m = op.rows
    ell = int(sketch_size)
    if op.cols != m:
        raise DimensionError("nystrom operator columns", m, op.cols)
    if not 1 <= ell <= m:
        raise ParameterError(f"sketch size must be in [1, {m}], got {ell}")

    omega = gaussian_test_matrix(m, ell, rng_seed)
    Y = op.apply_many(omega)
    nu = float(np.spacing(np.linalg.norm(Y, "fro")))
    if nu == 0.0:
        nu = float(np.finfo(float).tiny)

    for _ in range(SHIFT_RETRIES + 1):
        Y_nu = Y + nu * omega
        core = omega.T @ Y_nu
        core = 0.5 * (core + core.T)
        try:
            C = sla.cholesky(core, lower=False)
            break
        except np.linalg.LinAlgError:
            nu *= 10.0
    else:
        raise SketchFailure(f"core matrix not positive definite after {SHIFT_RETRIES} shift increases")

    # B = Y_nu C^{-1}  <=>  C^T B^T = Y_nu^T
    B = sla.solve_triangular(C, Y_nu.T, trans="T", lower=False).T
    U, sigma2 = _thin_svd(B, svd_method)
    lam = np.maximum(0.0, sigma2 - nu)
    return NystromFactors(U, lam, nu)


class NystromPreconditioner:
    """``P = U (Lam + delta) U^T / (lam_l + delta) + (I - U U^T)`` and its inverse.

    Calling the object applies ``P^{-1}``.
    """

    def __init__(self, factors: NystromFactors, delta: float):
        if not delta > 0:
            raise ParameterError(f"delta must be positive, got {delta}")
        self.factors = factors
        self.delta = float(delta)
        self._U = factors.U_hat
        self._lam_delta = factors.lambda_hat + self.delta
        self._lam_last = factors.lambda_hat[-1] + self.delta

    @property
    def size(self) -> int:
        return self._U.shape[0]

    def apply(self, v):
        Utv = self._U.T @ v
        return self._U @ (Utv * (self._lam_delta / self._lam_last) - Utv) + v

    def apply_inverse(self, v):
        Utv = self._U.T @ v
        return self._U @ (Utv * (self._lam_last / self._lam_delta) - Utv) + v

    __call__ = apply_inverse

    def inverse_eigenvalue_bounds(self):
        """``[(lam_l + delta) / (lam_1 + delta), 1]``."""
        return self._lam_last / self._lam_delta[0], 1.0


def build_nystrom_preconditioner(factors: NystromFactors, delta: float) -> NystromPreconditioner:
    return NystromPreconditioner(factors, delta)


def effective_dimension(eigenvalues, delta: float) -> float:
    """``sum(lam / (lam + delta))``: a smoothed count of eigenvalues above ``delta``."""
    lam = np.asarray(eigenvalues, dtype=float)
    if not delta > 0:
        raise ParameterError(f"delta must be positive, got {delta}")
    if np.any(lam < 0):
        raise ParameterError("eigenvalues must be nonnegative")
    return float(np.sum(lam / (lam + delta)))

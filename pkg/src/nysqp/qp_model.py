"""Problem and iterate data for separable QPs with free, nonnegative and box variables.

Primal::

    min  1/2 x^T Q x + c^T x   s.t.  A x = b,  x_F free,  x_I >= 0,  0 <= x_J <= u_J

Dual variables ``z`` (lower bounds on I and J) and ``s`` (upper bounds on
J) and the primal slack ``w = u - x`` on J are stored as full length-``n``
vectors with structurally zero entries pinned to 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ValidationError
from .linops import LinearOperator

REG_FLOOR = 5e-10

FREE, NONNEG, BOX = 0, 1, 2


@dataclass
class QpProblem:
    Q_diag: np.ndarray
    A: LinearOperator
    b: np.ndarray
    c: np.ndarray
    idx_free: np.ndarray
    idx_nonneg: np.ndarray
    idx_box: np.ndarray
    u: np.ndarray
    name: str = "qp"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.Q_diag = np.asarray(self.Q_diag, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        self.c = np.asarray(self.c, dtype=float)
        self.u = np.asarray(self.u, dtype=float)
        self.idx_free = np.asarray(self.idx_free, dtype=np.intp).ravel()
        self.idx_nonneg = np.asarray(self.idx_nonneg, dtype=np.intp).ravel()
        self.idx_box = np.asarray(self.idx_box, dtype=np.intp).ravel()
        n = self.n
        self.free_mask = np.zeros(n, dtype=bool)
        self.nonneg_mask = np.zeros(n, dtype=bool)
        self.box_mask = np.zeros(n, dtype=bool)
        for mask, idx in ((self.free_mask, self.idx_free), (self.nonneg_mask, self.idx_nonneg), (self.box_mask, self.idx_box)):
            idx = idx[(idx >= 0) & (idx < n)]
            mask[idx] = True
        self.bounded_mask = self.nonneg_mask | self.box_mask

    @classmethod
    def from_kinds(cls, Q_diag, A, b, c, kinds, u=None, name="qp", meta=None):
        """Build from a per-variable kind code (``FREE``, ``NONNEG``, ``BOX``)."""
        kinds = np.asarray(kinds)
        n = kinds.size
        u = np.zeros(n) if u is None else np.asarray(u, dtype=float)
        return cls(
            Q_diag, A, b, c,
            np.flatnonzero(kinds == FREE), np.flatnonzero(kinds == NONNEG), np.flatnonzero(kinds == BOX),
            u, name, meta or {},
        )

    @property
    def n(self) -> int:
        return self.A.cols

    @property
    def m(self) -> int:
        return self.A.rows

    @property
    def kinds(self) -> np.ndarray:
        k = np.full(self.n, FREE)
        k[self.nonneg_mask] = NONNEG
        k[self.box_mask] = BOX
        return k

    @property
    def n_complementarity(self) -> int:
        """``|I u J| + |J|``, the number of complementarity pairs."""
        return int(self.bounded_mask.sum() + self.box_mask.sum())

    def objective(self, x) -> float:
        return float(0.5 * x @ (self.Q_diag * x) + self.c @ x)


@dataclass
class IterateState:
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    w: np.ndarray
    s: np.ndarray
    mu: float = 0.0

    def copy(self) -> "IterateState":
        return IterateState(self.x.copy(), self.y.copy(), self.z.copy(), self.w.copy(), self.s.copy(), self.mu)


@dataclass
class PmmParams:
    rho: float
    delta: float
    lambda_est: np.ndarray
    zeta_est: np.ndarray

    def copy(self) -> "PmmParams":
        return replace(self, lambda_est=self.lambda_est.copy(), zeta_est=self.zeta_est.copy())


@dataclass
class Residuals:
    r_p: np.ndarray
    r_d: np.ndarray
    r_u: np.ndarray
    rel_p: float
    rel_d: float
    rel_u: float
    rel_gap: float
    extra: dict = field(default_factory=dict)

    @property
    def primal_norm(self) -> float:
        return float(np.hypot(np.linalg.norm(self.r_p), np.linalg.norm(self.r_u)))

    @property
    def dual_norm(self) -> float:
        return float(np.linalg.norm(self.r_d))


def validate(problem: QpProblem, probes: int = 3, seed: int = 0) -> list[str]:
    """Return every violated invariant of ``problem`` (empty list when valid)."""
    errs: list[str] = []
    n, m = problem.n, problem.m

    for name, vec, size in (("Q_diag", problem.Q_diag, n), ("c", problem.c, n), ("u", problem.u, n), ("b", problem.b, m)):
        if vec.shape != (size,):
            errs.append(f"{name} has shape {vec.shape}, expected ({size},)")
        elif not np.all(np.isfinite(vec)):
            errs.append(f"{name} has non-finite entries at {np.flatnonzero(~np.isfinite(vec))[:5].tolist()}")
    if errs:
        return errs
    neg = np.flatnonzero(problem.Q_diag < 0)
    if neg.size:
        errs.append(f"Q_diag negative at indices {neg[:5].tolist()}")

    counts = np.zeros(n, dtype=int)
    for label, idx in (("free", problem.idx_free), ("nonneg", problem.idx_nonneg), ("box", problem.idx_box)):
        out = idx[(idx < 0) | (idx >= n)]
        if out.size:
            errs.append(f"partition: {label} indices out of range {out[:5].tolist()}")
        idx = idx[(idx >= 0) & (idx < n)]
        np.add.at(counts, idx, 1)
    dup = np.flatnonzero(counts > 1)
    if dup.size:
        errs.append(f"partition: index sets overlap at {dup[:5].tolist()}")
    missing = np.flatnonzero(counts == 0)
    if missing.size:
        errs.append(f"partition: indices not covered {missing[:5].tolist()}")

    u = problem.u
    bad_box = np.flatnonzero(problem.box_mask & ~(u > 0))
    if bad_box.size:
        errs.append(f"bounds: u must be > 0 on box indices, violated at {bad_box[:5].tolist()}")
    bad_rest = np.flatnonzero(~problem.box_mask & (u != 0))
    if bad_rest.size:
        errs.append(f"bounds: u must be 0 off box indices, violated at {bad_rest[:5].tolist()}")

    A = problem.A.with_counter(None)
    rng = np.random.default_rng(seed)
    for k in range(probes):
        p, q = rng.standard_normal(n), rng.standard_normal(m)
        lhs, rhs = float(A.apply(p) @ q), float(p @ A.apply_adjoint(q))
        if abs(lhs - rhs) > 1e-10 * max(1.0, abs(lhs), abs(rhs)):
            errs.append(f"adjoint mismatch on probe {k}: <Ap,q>={lhs:.6e}, <p,A^T q>={rhs:.6e}")
    return errs


def check(problem: QpProblem) -> QpProblem:
    errs = validate(problem)
    if errs:
        raise ValidationError(errs)
    return problem


def duality_measure(state: IterateState, problem: QpProblem) -> float:
    """Average complementarity ``(x_IJ^T z_IJ + w_J^T s_J) / (|IJ| + |J|)``; 0 with no bounds."""
    denom = problem.n_complementarity
    if denom == 0:
        return 0.0
    bm, jm = problem.bounded_mask, problem.box_mask
    return float((state.x[bm] @ state.z[bm] + state.w[jm] @ state.s[jm]) / denom)


def compute_residuals(problem: QpProblem, state: IterateState) -> Residuals:
    x, y, z, w, s = state.x, state.y, state.z, state.w, state.s
    r_p = problem.A.apply(x) - problem.b
    r_d = problem.c + problem.Q_diag * x - problem.A.apply_adjoint(y) - z + s
    r_u = np.where(problem.box_mask, problem.u - x - w, 0.0)
    return Residuals(
        r_p, r_d, r_u,
        float(np.linalg.norm(r_p) / (1.0 + np.linalg.norm(problem.b))),
        float(np.linalg.norm(r_d) / (1.0 + np.linalg.norm(problem.c))),
        float(np.linalg.norm(r_u) / (1.0 + np.linalg.norm(problem.u))),
        duality_measure(state, problem),
    )


def positivity_violations(state: IterateState, problem: QpProblem) -> list[str]:
    """Strict-positivity and structural-zero violations of ``state``."""
    bm, jm = problem.bounded_mask, problem.box_mask
    out = []
    for name, vec, mask in (("x", state.x, bm), ("z", state.z, bm), ("w", state.w, jm), ("s", state.s, jm)):
        bad = np.flatnonzero(mask & ~(vec > 0))
        if bad.size:
            out.append(f"{name} not strictly positive at {bad[:5].tolist()}")
    for name, vec, mask in (("z", state.z, problem.free_mask), ("w", state.w, ~jm), ("s", state.s, ~jm)):
        bad = np.flatnonzero(mask & (vec != 0))
        if bad.size:
            out.append(f"{name} should be structurally zero at {bad[:5].tolist()}")
    return out

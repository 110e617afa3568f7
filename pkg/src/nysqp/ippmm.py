"""Regularized interior-point proximal method of multipliers with preconditioned CG.

Each outer iteration builds the normal-equations operator for the current
scaling, builds a preconditioner for it (randomized Nystrom, partial
Cholesky, or none) and takes one Mehrotra predictor-corrector step.  The
reduced system is the only one solved iteratively; the four remaining
blocks of the Newton direction are recovered in closed form, so they hold
to rounding error while the second block carries the CG residual.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Optional

import numpy as np

from .errors import NumericalBreakdown, ParameterError, SketchFailure, IndefiniteError
from .linops import LinearOperator, MatvecCounter, NormalEquationsOperator, make_normal_operator
from .nystrom import build_nystrom_preconditioner, nystrom_approximation
from .partial_cholesky import PartialCholeskyPreconditioner, build_partial_cholesky
from .pcg import PcgConfig, PcgResult, pcg_solve, residual_tolerance_schedule
from .qp_model import (
    REG_FLOOR,
    IterateState,
    PmmParams,
    QpProblem,
    Residuals,
    compute_residuals,
    duality_measure,
    positivity_violations,
)

log = logging.getLogger(__name__)

STEP_FRACTION = 0.995
STALL_ALPHA = 1e-12
MAX_ESCALATIONS = 3
ESCALATION_FACTOR = 100.0
BACKTRACK_STEPS = 40

# Fixed offsets from the run seed, one per random consumer.
SEED_INIT = 1
SEED_SKETCH = 1000

PRECONDITIONERS = ("none", "nystrom", "chol")


@dataclass
class SolverConfig:
    tol: float = 1e-8
    max_outer: int = 100
    preconditioner: str = "nystrom"
    rank: int = 20
    pcg_max_iters: Optional[int] = None
    inexact_c: float = 1e-2
    tol_floor: float = 1e-10
    rng_seed: int = 0
    rho0: float = 8.0
    delta0: float = 8.0
    init_delta: float = 10.0
    adaptive_rank: bool = False
    pcg_budget: Optional[int] = None
    entrywise_diag: Optional[bool] = None
    svd_method: str = "lapack"
    snapshot_stages: tuple = ()
    newton_callback: Optional[Callable] = None
    verbose: bool = False

    def __post_init__(self):
        if not self.tol > 0:
            raise ParameterError(f"tol must be positive, got {self.tol}")
        if self.preconditioner not in PRECONDITIONERS:
            raise ParameterError(f"preconditioner must be one of {PRECONDITIONERS}, got {self.preconditioner!r}")
        if self.rank < 1:
            raise ParameterError(f"rank must be >= 1, got {self.rank}")
        if self.max_outer < 1:
            raise ParameterError(f"max_outer must be >= 1, got {self.max_outer}")


@dataclass
class NewtonRhs:
    r_d: np.ndarray
    r_p: np.ndarray
    r_u: np.ndarray
    r_xz: np.ndarray
    r_ws: np.ndarray

    def norm(self) -> float:
        return float(np.sqrt(sum(float(v @ v) for v in (self.r_d, self.r_p, self.r_u, self.r_xz, self.r_ws))))


@dataclass
class Direction:
    dx: np.ndarray
    dy: np.ndarray
    dz: np.ndarray
    dw: np.ndarray
    ds: np.ndarray

    def __add__(self, other: "Direction") -> "Direction":
        return Direction(self.dx + other.dx, self.dy + other.dy, self.dz + other.dz, self.dw + other.dw, self.ds + other.ds)


class Progress(NamedTuple):
    primal_improved: bool
    dual_improved: bool
    mu_ratio: float


@dataclass
class StepDiagnostics:
    alpha_p: float
    alpha_d: float
    alpha_p_pred: float
    alpha_d_pred: float
    mu_aff: float
    mu_tilde: float
    inner_pred: int
    inner_corr: int
    pcg_applications: int
    safeguard: str = ""


@dataclass
class IterationRecord:
    iter: int
    mu: float
    rel_p: float
    rel_d: float
    rel_u: float
    inner_pred: int
    inner_corr: int
    pcg_applications: int
    matvecs_forward: int
    matvecs_adjoint: int
    build_s: float
    pcg_s: float
    time_s: float
    rho: float
    delta: float
    alpha_p: float
    alpha_d: float
    rank: int
    accepted: bool = True
    mu_next: float = float("nan")
    note: str = ""


@dataclass
class SolveReport:
    status: str
    outer_iters: int
    records: list
    state: IterateState
    params: PmmParams
    residuals: Residuals
    positivity_violations: int = 0
    max_alpha: float = 0.0
    snapshots: list = field(default_factory=list)
    total_s: float = 0.0
    matvecs_forward: int = 0
    matvecs_adjoint: int = 0

    @property
    def sum_inner_iters(self) -> int:
        return sum(r.inner_pred + r.inner_corr for r in self.records)

    @property
    def converged(self) -> bool:
        return self.status == "optimal"


class NewtonSolveFailure(Exception):
    """PCG did not reach its tolerance even after the enlarged retry."""

    def __init__(self, result: PcgResult, tol: float):
        self.result = result
        super().__init__(f"PCG stopped at residual {result.final_residual_norm:.3e} > {tol:.3e} after {result.iters} iterations")


class _Stall(Exception):
    pass


def theta_inverse(problem: QpProblem, state: IterateState) -> np.ndarray:
    """``0`` on free, ``z/x`` on nonnegative, ``z/x + s/w`` on box variables."""
    ti = np.zeros(problem.n)
    bm, jm = problem.bounded_mask, problem.box_mask
    ti[bm] = state.z[bm] / state.x[bm]
    ti[jm] += state.s[jm] / state.w[jm]
    return ti


def build_normal_operator(problem: QpProblem, state: IterateState, params: PmmParams) -> NormalEquationsOperator:
    return make_normal_operator(problem.A, problem.Q_diag, theta_inverse(problem, state), params.rho, params.delta)


def solve_newton(
    problem: QpProblem,
    state: IterateState,
    params: PmmParams,
    rhs: NewtonRhs,
    precond_inverse,
    pcg_cfg: PcgConfig,
    normal_op: Optional[NormalEquationsOperator] = None,
) -> tuple[Direction, PcgResult]:
    """Newton direction from the reduced normal equations plus closed-form recovery.

    Raises :class:`NewtonSolveFailure` if PCG misses its tolerance twice
    (the second attempt with four times the iteration limit).
    """
    if normal_op is None:
        normal_op = build_normal_operator(problem, state, params)
    A = problem.A
    x, z, w, s = state.x, state.z, state.w, state.s
    bm, jm = problem.bounded_mask, problem.box_mask

    xi_au = np.zeros(problem.n)
    xi_au[bm] = -rhs.r_xz[bm] / x[bm]
    xi_au[jm] += (rhs.r_ws[jm] - s[jm] * rhs.r_u[jm]) / w[jm]

    d_inv = normal_op.d_inv
    g = rhs.r_d + xi_au
    xi = rhs.r_p + A.apply(d_inv * g)

    result = pcg_solve(normal_op, xi, precond_inverse, pcg_cfg)
    if not result.converged:
        retry = replace(pcg_cfg, max_iters=4 * pcg_cfg.max_iters)
        second = pcg_solve(normal_op, xi, precond_inverse, retry, warm_start=result.solution)
        second.iters += result.iters
        second.applications += result.applications
        result = second
        if not result.converged:
            raise NewtonSolveFailure(result, pcg_cfg.abs_tol)

    dy = result.solution
    dx = d_inv * (A.apply_adjoint(dy) - g)
    dw = np.where(jm, rhs.r_u - dx, 0.0)
    dz = np.zeros(problem.n)
    dz[bm] = (rhs.r_xz[bm] - z[bm] * dx[bm]) / x[bm]
    ds = np.zeros(problem.n)
    ds[jm] = (rhs.r_ws[jm] - s[jm] * dw[jm]) / w[jm]
    return Direction(dx, dy, dz, dw, ds), result


def predictor_rhs(problem: QpProblem, state: IterateState, params: PmmParams) -> NewtonRhs:
    x, y, z, w, s = state.x, state.y, state.z, state.w, state.s
    bm, jm = problem.bounded_mask, problem.box_mask
    A = problem.A
    r_d = problem.c + problem.Q_diag * x - A.apply_adjoint(y) - z + s + params.rho * (x - params.zeta_est)
    r_p = problem.b - A.apply(x) - params.delta * (y - params.lambda_est)
    r_u = np.where(jm, problem.u - x - w, 0.0)
    r_xz = np.where(bm, -x * z, 0.0)
    r_ws = np.where(jm, -w * s, 0.0)
    return NewtonRhs(r_d, r_p, r_u, r_xz, r_ws)


def corrector_rhs(problem: QpProblem, pred: Direction, mu_tilde: float) -> NewtonRhs:
    bm, jm = problem.bounded_mask, problem.box_mask
    n, m = problem.n, problem.m
    r_xz = np.where(bm, mu_tilde - pred.dx * pred.dz, 0.0)
    r_ws = np.where(jm, mu_tilde - pred.dw * pred.ds, 0.0)
    return NewtonRhs(np.zeros(n), np.zeros(m), np.zeros(n), r_xz, r_ws)


def _ratio_min(v, dv, mask):
    neg = mask & (dv < 0)
    if not np.any(neg):
        return np.inf
    return float(np.min(-v[neg] / dv[neg]))


def stepsizes(problem: QpProblem, state: IterateState, direction: Direction) -> tuple[float, float]:
    """Fraction-to-boundary steps ``0.995 * min(1, ratio tests)`` for primal and dual."""
    bm, jm = problem.bounded_mask, problem.box_mask
    ap = min(1.0, _ratio_min(state.x, direction.dx, bm), _ratio_min(state.w, direction.dw, jm))
    ad = min(1.0, _ratio_min(state.z, direction.dz, bm), _ratio_min(state.s, direction.ds, jm))
    return STEP_FRACTION * ap, STEP_FRACTION * ad


def _complementarity(problem, x, z, w, s):
    denom = problem.n_complementarity
    bm, jm = problem.bounded_mask, problem.box_mask
    return float((x[bm] @ z[bm] + w[jm] @ s[jm]) / denom)


def _mu_after(problem, state, d, ap, ad):
    return _complementarity(problem, state.x + ap * d.dx, state.z + ad * d.dz, state.w + ap * d.dw, state.s + ad * d.ds)


def _take_step(problem, state, d, ap, ad) -> IterateState:
    new = IterateState(
        state.x + ap * d.dx,
        state.y + ad * d.dy,
        state.z + ad * d.dz,
        state.w + ap * d.dw,
        state.s + ad * d.ds,
    )
    # Keep the structural zeros exact.
    new.z[problem.free_mask] = 0.0
    new.w[~problem.box_mask] = 0.0
    new.s[~problem.box_mask] = 0.0
    new.mu = duality_measure(new, problem)
    return new


def predictor_corrector_step(
    problem: QpProblem,
    state: IterateState,
    params: PmmParams,
    precond_inverse,
    pcg_cfg: PcgConfig,
    normal_op: Optional[NormalEquationsOperator] = None,
    newton_callback: Optional[Callable] = None,
) -> tuple[IterateState, StepDiagnostics]:
    """One Mehrotra predictor-corrector step; both solves share ``precond_inverse``.

    If the combined step would not reduce the duality measure it is
    shortened (equal primal and dual steps, halved repeatedly) and, failing
    that, replaced by a shortened predictor step.  ``diagnostics.safeguard``
    names the fallback used, if any.
    """
    if normal_op is None:
        normal_op = build_normal_operator(problem, state, params)
    mu = state.mu

    rhs_p = predictor_rhs(problem, state, params)
    pred, res_p = solve_newton(problem, state, params, rhs_p, precond_inverse, pcg_cfg, normal_op)
    if newton_callback is not None:
        newton_callback(problem, state, params, rhs_p, pred, res_p, pcg_cfg.abs_tol)
    ap_bar, ad_bar = stepsizes(problem, state, pred)
    mu_aff = _mu_after(problem, state, pred, ap_bar, ad_bar)
    mu_tilde = mu_aff ** 3 / mu ** 2

    rhs_c = corrector_rhs(problem, pred, mu_tilde)
    corr, res_c = solve_newton(problem, state, params, rhs_c, precond_inverse, pcg_cfg, normal_op)
    if newton_callback is not None:
        newton_callback(problem, state, params, rhs_c, corr, res_c, pcg_cfg.abs_tol)
    d = pred + corr
    ap, ad = stepsizes(problem, state, d)

    safeguard = ""
    if not _mu_after(problem, state, d, ap, ad) < mu:
        ap, ad, safeguard = _backtrack(problem, state, d, min(ap, ad), mu, "combined")
        if not ap > 0:
            d = pred
            ap, ad, safeguard = _backtrack(problem, state, d, min(ap_bar, ad_bar), mu, "predictor")
    diag = StepDiagnostics(ap, ad, ap_bar, ad_bar, mu_aff, mu_tilde, res_p.iters, res_c.iters,
                           res_p.applications + res_c.applications, safeguard)
    if not ap > 0:
        return state, diag
    return _take_step(problem, state, d, ap, ad), diag


def _backtrack(problem, state, d, alpha, mu, label):
    for _ in range(BACKTRACK_STEPS):
        if _mu_after(problem, state, d, alpha, alpha) < mu:
            return alpha, alpha, f"{label}-backtrack"
        alpha *= 0.5
    return 0.0, 0.0, f"{label}-failed"


def update_pmm_params(params: PmmParams, new_state: IterateState, progress: Progress) -> PmmParams:
    """Shrink the regularization and move the proximal centers.

    A parameter whose infeasibility improved shrinks by ``max(0.1, mu+/mu)``
    and its estimate moves to the new iterate; otherwise it halves.
    Both are floored at ``REG_FLOOR``.
    """
    factor = max(0.1, float(progress.mu_ratio))
    out = params.copy()
    if progress.primal_improved:
        out.delta = max(REG_FLOOR, params.delta * factor)
        out.lambda_est = new_state.y.copy()
    else:
        out.delta = max(REG_FLOOR, 0.5 * params.delta)
    if progress.dual_improved:
        out.rho = max(REG_FLOOR, params.rho * factor)
        out.zeta_est = new_state.x.copy()
    else:
        out.rho = max(REG_FLOOR, 0.5 * params.rho)
    return out


def check_termination(problem: QpProblem, state: IterateState, params: Optional[PmmParams] = None, tol: float = 1e-8,
                      residuals: Optional[Residuals] = None) -> str:
    """``"optimal"`` when scaled primal, dual, bound residuals and ``mu`` are all ``<= tol``."""
    res = residuals if residuals is not None else compute_residuals(problem, state)
    mu = duality_measure(state, problem)
    if res.rel_p <= tol and res.rel_d <= tol and res.rel_u <= tol and mu <= tol:
        return "optimal"
    return "continue"


def _pcg_solve_relative(op, rhs, precond, rel_tol=1e-10, max_iters=None):
    cfg = PcgConfig(abs_tol=max(1e-14, rel_tol * float(np.linalg.norm(rhs))),
                    max_iters=max_iters or max(100, 10 * op.rows))
    return pcg_solve(op, rhs, precond, cfg).solution


def initial_point(problem: QpProblem, config: Optional[SolverConfig] = None) -> IterateState:
    """Shifted Mehrotra-style starting point.

    The candidate solves the primal and dual equality constraints on
    ``A A^T + init_delta I`` (Nystrom PCG) with ``x`` centered at ``u / 2``;
    uniform shifts then make every guarded component strictly positive.
    """
    config = config or SolverConfig()
    A, Q, b, c, u = problem.A, problem.Q_diag, problem.b, problem.c, problem.u
    n, m = problem.n, problem.m
    bm, jm = problem.bounded_mask, problem.box_mask
    free = problem.free_mask

    if m > 0:
        aat = NormalEquationsOperator(A, np.ones(n), config.init_delta)
        ell = min(config.rank, m)
        factors = nystrom_approximation(aat.without_shift(), ell, config.rng_seed + SEED_INIT, config.svd_method)
        precond = build_nystrom_preconditioner(factors, config.init_delta)
        x_t = 0.5 * u + A.apply_adjoint(_pcg_solve_relative(aat, b - 0.5 * A.apply(u), precond))
        y_t = _pcg_solve_relative(aat, A.apply(c + Q * x_t), precond)
    else:
        x_t = 0.5 * u
        y_t = np.zeros(0)
    g = c - (A.apply_adjoint(y_t) if m > 0 else 0.0) + Q * x_t

    z_t = np.where(jm, 0.5 * g, g)
    z_t[free] = 0.0
    s_t = np.where(jm, -z_t, 0.0)
    w_t = np.where(jm, u - x_t, 0.0)

    def shift(*arrs):
        vals = [v for v in arrs if v.size]
        if not vals:
            return 0.0
        return max(0.0, *(-1.5 * float(v.min()) for v in vals))

    xi, zi, wj, sj = x_t[bm], z_t[bm], w_t[jm], s_t[jm]
    dp = shift(xi, wj)
    dd = shift(zi, sj)
    gamma = float((xi + dp) @ (zi + dd) + (wj + dp) @ (sj + dd))
    den_p = float(np.sum(zi + dd) + np.sum(sj + dd))
    den_d = float(np.sum(xi + dp) + np.sum(wj + dp))

    x0, z0, w0, s0 = x_t.copy(), np.zeros(n), np.zeros(n), np.zeros(n)
    ok = den_p > 0 and den_d > 0 and np.isfinite(gamma)
    if ok:
        dp_t = dp + 0.5 * gamma / den_p
        dd_t = dd + 0.5 * gamma / den_d
        x0[bm] = xi + dp_t
        w0[jm] = wj + dp_t
        z0[bm] = zi + dd_t
        s0[jm] = sj + dd_t
        ok = bool(np.all(x0[bm] > 0) and np.all(z0[bm] > 0) and np.all(w0[jm] > 0) and np.all(s0[jm] > 0))
    if not ok:
        log.warning("degenerate initial-point shifts; falling back to unit complementarity pairs")
        x0[problem.nonneg_mask] = 1.0
        x0[jm] = 0.5 * u[jm]
        w0[jm] = 0.5 * u[jm]
        z0[bm] = 1.0
        s0[jm] = 1.0
    state = IterateState(x0, y_t.copy(), z0, w0, s0)
    state.mu = duality_measure(state, problem)
    return state


def _build_preconditioner(problem, normal_op, params, config, rank, k):
    kind = config.preconditioner
    if kind == "none":
        return None
    if kind == "nystrom":
        factors = nystrom_approximation(normal_op.without_shift(), rank, config.rng_seed + SEED_SKETCH + k,
                                        config.svd_method)
        return build_nystrom_preconditioner(factors, params.delta)
    factors = build_partial_cholesky(problem.A, normal_op.d_reg, params.delta, rank, config.entrywise_diag)
    return PartialCholeskyPreconditioner(factors)


def snapshot_operator(problem: QpProblem, snapshot: dict) -> NormalEquationsOperator:
    """Rebuild the normal-equations operator recorded in a snapshot."""
    ti = np.asarray(snapshot["theta_inv"], dtype=float)
    return make_normal_operator(problem.A, problem.Q_diag, ti, snapshot["rho"], snapshot["delta"])


def _merit(res: Residuals, mu: float) -> float:
    return max(res.rel_p, res.rel_d, res.rel_u, mu)


def solve(problem: QpProblem, config: Optional[SolverConfig] = None) -> SolveReport:
    """Run the outer loop until the scaled KKT residuals and ``mu`` reach ``config.tol``."""
    config = config or SolverConfig()
    t_start = time.perf_counter()
    counter = MatvecCounter()
    problem = replace(problem, A=problem.A.with_counter(counter))
    n, m = problem.n, problem.m
    pure_equality = problem.n_complementarity == 0

    state = initial_point(problem, config)
    params = PmmParams(config.rho0, config.delta0, state.y.copy(), state.x.copy())
    res = compute_residuals(problem, state)
    mu0 = state.mu if state.mu > 0 else 1.0
    rank = min(config.rank, max(m, 1))
    pcg_max = config.pcg_max_iters or max(100, 10 * m)
    budget = config.pcg_budget or max(20, m // 2)

    records: list[IterationRecord] = []
    snapshots: list[dict] = []
    pending_stages = sorted(config.snapshot_stages, reverse=True)
    violations = 0
    max_alpha = 0.0
    escalations = 0
    stalls_in_row = 0
    best = (_merit(res, state.mu), state, res, params)
    status = "max_iters"

    for k in range(config.max_outer + 1):
        while pending_stages and _merit(res, state.mu) <= pending_stages[0]:
            snapshots.append({
                "stage": pending_stages.pop(0), "iter": k, "theta_inv": theta_inverse(problem, state).tolist(),
                "rho": params.rho, "delta": params.delta, "problem_id": problem.name,
            })
        if check_termination(problem, state, params, config.tol, res) == "optimal":
            status = "optimal"
            break
        if k == config.max_outer:
            break

        t_iter = time.perf_counter()
        fwd0, adj0 = counter.snapshot()
        normal_op = build_normal_operator(problem, state, params)
        t0 = time.perf_counter()
        try:
            precond = _build_preconditioner(problem, normal_op, params, config, rank, k)
        except (SketchFailure, IndefiniteError) as exc:
            log.warning("preconditioner construction failed at iteration %d: %s", k, exc)
            precond = None
        build_s = time.perf_counter() - t0

        if pure_equality:
            scale = float(np.linalg.norm(res.r_p) + np.linalg.norm(res.r_d))
            tol_k = max(config.tol_floor, config.inexact_c * scale)
        else:
            tol_k = residual_tolerance_schedule(state.mu, mu0, config.tol_floor, config.inexact_c)
        pcg_cfg = PcgConfig(abs_tol=tol_k, max_iters=pcg_max)

        t0 = time.perf_counter()
        note = ""
        try:
            if pure_equality:
                new_state, diag = _equality_step(problem, state, params, precond, pcg_cfg, normal_op, config.newton_callback)
            else:
                new_state, diag = predictor_corrector_step(problem, state, params, precond, pcg_cfg, normal_op,
                                                           config.newton_callback)
            stalled = min(diag.alpha_p, diag.alpha_d) < STALL_ALPHA
            note = diag.safeguard
        except (NewtonSolveFailure, NumericalBreakdown) as exc:
            log.warning("iteration %d: %s", k, exc)
            new_state, diag, stalled, note = state, None, True, f"solve-failure: {exc}"
        pcg_s = time.perf_counter() - t0

        if diag is not None and not pure_equality:
            max_alpha = max(max_alpha, diag.alpha_p, diag.alpha_d, diag.alpha_p_pred, diag.alpha_d_pred)

        accepted = not stalled
        if stalled:
            stalls_in_row += 1
            if stalls_in_row >= 2 or diag is None:
                escalations += 1
                stalls_in_row = 0
                params = params.copy()
                params.rho = min(config.rho0, params.rho * ESCALATION_FACTOR)
                params.delta = min(config.delta0, params.delta * ESCALATION_FACTOR)
                note = (note + "; " if note else "") + f"escalation {escalations}"
            new_state = state
        else:
            stalls_in_row = 0

        fwd1, adj1 = counter.snapshot()
        rec = IterationRecord(
            k, state.mu, res.rel_p, res.rel_d, res.rel_u,
            diag.inner_pred if diag else 0, diag.inner_corr if diag else 0,
            diag.pcg_applications if diag else 0, fwd1 - fwd0, adj1 - adj0,
            build_s, pcg_s, 0.0, params.rho, params.delta,
            diag.alpha_p if diag else 0.0, diag.alpha_d if diag else 0.0, rank, accepted, new_state.mu, note,
        )

        if accepted:
            if positivity_violations(new_state, problem):
                violations += 1
            new_res = compute_residuals(problem, new_state)
            ratio = new_state.mu / state.mu if state.mu > 0 else 0.0
            progress = Progress(new_res.primal_norm < res.primal_norm, new_res.dual_norm < res.dual_norm, ratio)
            params = update_pmm_params(params, new_state, progress)
            state, res = new_state, new_res
            if _merit(res, state.mu) < best[0]:
                best = (_merit(res, state.mu), state, res, params)
            if config.adaptive_rank and diag is not None and diag.inner_pred + diag.inner_corr > budget:
                rank = min(2 * rank, m)

        rec.time_s = time.perf_counter() - t_iter
        records.append(rec)
        if config.verbose:
            log.info("iter %3d mu %.3e rel_p %.3e rel_d %.3e inner %d+%d %s", rec.iter, rec.mu, rec.rel_p,
                     rec.rel_d, rec.inner_pred, rec.inner_corr, rec.note)

        if escalations > MAX_ESCALATIONS:
            status = "numerical_failure"
            break

    if status == "max_iters":
        _, state, res, params = best
    fwd, adj = counter.snapshot()
    return SolveReport(status, len(records), records, state, params, res, violations, max_alpha, snapshots,
                       time.perf_counter() - t_start, fwd, adj)


def _equality_step(problem, state, params, precond, pcg_cfg, normal_op, newton_callback=None):
    """Full regularized Newton step for problems without bounded variables."""
    rhs = predictor_rhs(problem, state, params)
    d, res = solve_newton(problem, state, params, rhs, precond, pcg_cfg, normal_op)
    if newton_callback is not None:
        newton_callback(problem, state, params, rhs, d, res, pcg_cfg.abs_tol)
    new = _take_step(problem, state, d, 1.0, 1.0)
    return new, StepDiagnostics(1.0, 1.0, 1.0, 1.0, 0.0, 0.0, res.iters, 0, res.applications)

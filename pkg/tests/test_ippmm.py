import numpy as np
import pytest

from nysqp.errors import ParameterError
from nysqp.ippmm import (
    Direction,
    NewtonRhs,
    Progress,
    SolverConfig,
    build_normal_operator,
    check_termination,
    corrector_rhs,
    initial_point,
    predictor_corrector_step,
    predictor_rhs,
    solve,
    solve_newton,
    stepsizes,
    theta_inverse,
    update_pmm_params,
)
from nysqp.linops import make_dense_operator
from nysqp.oracle import newton_block_residuals, pack_direction, newton_matrix, solve_newton_dense
from nysqp.pcg import PcgConfig
from nysqp.problems import SvmSpec, build_svm_qp, random_separable_qp, synthetic_svm
from nysqp.qp_model import BOX, FREE, NONNEG, IterateState, PmmParams, QpProblem, duality_measure

from conftest import tiny_qp


def _random_state(problem, rng):
    n, m = problem.n, problem.m
    bm, jm = problem.bounded_mask, problem.box_mask
    x = rng.standard_normal(n)
    x[bm] = rng.uniform(0.1, 1.0, bm.sum())
    z = np.where(bm, rng.uniform(0.1, 2.0, n), 0.0)
    w = np.where(jm, rng.uniform(0.1, 1.0, n), 0.0)
    s = np.where(jm, rng.uniform(0.1, 2.0, n), 0.0)
    st = IterateState(x, rng.standard_normal(m), z, w, s)
    st.mu = duality_measure(st, problem)
    return st


def _params(problem, rng, rho=0.5, delta=0.3):
    return PmmParams(rho, delta, rng.standard_normal(problem.m), rng.standard_normal(problem.n))


def test_tiny_qp_solution():
    rep = solve(tiny_qp(), SolverConfig(tol=1e-8))
    assert rep.status == "optimal"
    assert rep.state.x[0] == pytest.approx(1.0, abs=1e-7)
    assert rep.state.y[0] == pytest.approx(1.0, abs=1e-7)
    assert rep.state.z[0] == pytest.approx(0.0, abs=1e-7)
    assert rep.residuals.rel_p <= 1e-8 and rep.residuals.rel_d <= 1e-8
    assert len(rep.records) == rep.outer_iters


def test_config_validation():
    with pytest.raises(ParameterError):
        SolverConfig(tol=0)
    with pytest.raises(ParameterError):
        SolverConfig(rank=0)
    with pytest.raises(ParameterError):
        SolverConfig(preconditioner="ilu")
    with pytest.raises(ParameterError):
        SolverConfig(max_outer=0)


def test_theta_inverse_cases():
    A = make_dense_operator(np.ones((1, 3)))
    prob = QpProblem.from_kinds(np.zeros(3), A, np.ones(1), np.zeros(3), [FREE, NONNEG, BOX], np.array([0, 0, 2.0]))
    st = IterateState(np.array([5.0, 2.0, 1.0]), np.zeros(1), np.array([0.0, 4.0, 3.0]),
                      np.array([0.0, 0.0, 1.0]), np.array([0.0, 0.0, 0.5]))
    np.testing.assert_allclose(theta_inverse(prob, st), [0.0, 2.0, 3.5])


def test_initial_point_single_nonneg():
    prob = QpProblem.from_kinds(np.zeros(1), make_dense_operator(np.eye(1)), np.ones(1), np.zeros(1), [NONNEG])
    st = initial_point(prob)
    assert st.x[0] > 0 and st.z[0] > 0


def test_initial_point_svm_positivity():
    X, y = synthetic_svm(4, 9, 2)
    prob = build_svm_qp(SvmSpec(X, y, 1.0))
    st = initial_point(prob)
    jm = prob.box_mask
    assert np.all(st.x[jm] > 0) and np.all(st.z[jm] > 0) and np.all(st.w[jm] > 0) and np.all(st.s[jm] > 0)
    # both x and w carry the same primal shift, so the bound residual is uniform and finite
    gap = (st.x + st.w - prob.u)[jm]
    assert np.all(np.isfinite(gap))
    np.testing.assert_allclose(gap, gap[0], atol=1e-12)
    np.testing.assert_array_equal(st.z[~jm], 0.0)


def test_initial_point_centered_box():
    n = 5
    u = np.arange(1.0, n + 1)
    prob = QpProblem.from_kinds(np.ones(n), make_dense_operator(np.zeros((1, n))), np.zeros(1), np.zeros(n),
                                np.full(n, BOX), u)
    st = initial_point(prob)
    shift = st.x - u / 2
    np.testing.assert_allclose(shift, shift[0], atol=1e-12)


def test_zero_rhs_gives_zero_direction(rng):
    prob, _ = random_separable_qp(6, 3, 0)
    st, par = _random_state(prob, rng), _params(prob, rng)
    z = np.zeros(prob.n)
    rhs = NewtonRhs(z, np.zeros(prob.m), z, z, z)
    d, res = solve_newton(prob, st, par, rhs, None, PcgConfig(abs_tol=1e-12))
    assert res.iters == 0
    for v in (d.dx, d.dy, d.dz, d.dw, d.ds):
        np.testing.assert_array_equal(v, 0.0)


@pytest.mark.parametrize("seed", range(3))
def test_direction_matches_dense_oracle(rng, seed):
    prob, A = random_separable_qp(3, 2, seed, frac_free=0.34, frac_box=0.33)
    st, par = _random_state(prob, rng), _params(prob, rng)
    rhs = predictor_rhs(prob, st, par)
    d, _ = solve_newton(prob, st, par, rhs, None, PcgConfig(abs_tol=1e-10))
    _, lay = newton_matrix(prob, st, par, A)
    np.testing.assert_allclose(pack_direction(d, lay), solve_newton_dense(prob, st, par, rhs, A), atol=1e-6)


@pytest.mark.parametrize("precond", ["none", "nystrom", "chol"])
def test_block_residual_split(rng, precond):
    prob, A = random_separable_qp(10, 4, 5)
    st, par = _random_state(prob, rng), _params(prob, rng)
    rhs = predictor_rhs(prob, st, par)
    tol = 1e-6
    from nysqp.ippmm import _build_preconditioner

    op = build_normal_operator(prob, st, par)
    P = _build_preconditioner(prob, op, par, SolverConfig(preconditioner=precond, rank=2), 2, 0)
    d, res = solve_newton(prob, st, par, rhs, P, PcgConfig(abs_tol=tol), op)
    blocks, rnorm = newton_block_residuals(prob, st, par, rhs, d, A)
    for k in (0, 2, 3, 4):
        assert blocks[k] <= 1e-12 * (1 + rnorm)
    assert blocks[1] <= tol
    assert blocks[1] == pytest.approx(res.final_residual_norm, rel=1e-6, abs=1e-13)


def test_direction_structural_zeros(rng):
    prob, _ = random_separable_qp(12, 4, 8)
    st, par = _random_state(prob, rng), _params(prob, rng)
    d, _ = solve_newton(prob, st, par, predictor_rhs(prob, st, par), None, PcgConfig(abs_tol=1e-10))
    np.testing.assert_array_equal(d.dz[prob.free_mask], 0.0)
    np.testing.assert_array_equal(d.dw[~prob.box_mask], 0.0)
    np.testing.assert_array_equal(d.ds[~prob.box_mask], 0.0)


def _nonneg_problem(n):
    return QpProblem.from_kinds(np.ones(n), make_dense_operator(np.ones((1, n))), np.ones(1), np.zeros(n),
                                np.full(n, NONNEG))


def test_stepsizes_examples():
    prob = _nonneg_problem(2)
    st = IterateState(np.ones(2), np.zeros(1), np.ones(2), np.zeros(2), np.zeros(2))
    zero = np.zeros(2)
    ap, ad = stepsizes(prob, st, Direction(np.array([1.0, 0.0]), zero[:1], np.array([0.5, 0.0]), zero, zero))
    assert ap == ad == 0.995
    ap, _ = stepsizes(prob, st, Direction(np.array([-2.0, -0.5]), zero[:1], zero, zero, zero))
    assert ap == pytest.approx(0.4975)


def test_stepsizes_keep_positivity(rng):
    prob, _ = random_separable_qp(10, 2, 1)
    bm, jm = prob.bounded_mask, prob.box_mask
    n, m = prob.n, prob.m
    for _ in range(1000):
        st = _random_state(prob, rng)
        scale = rng.choice([0.1, 10.0])
        d = Direction(scale * rng.standard_normal(n), rng.standard_normal(m),
                      np.where(bm, scale * rng.standard_normal(n), 0.0),
                      np.where(jm, scale * rng.standard_normal(n), 0.0),
                      np.where(jm, scale * rng.standard_normal(n), 0.0))
        ap, ad = stepsizes(prob, st, d)
        assert 0 < ap <= 0.995 and 0 < ad <= 0.995
        assert np.all((st.x + ap * d.dx)[bm] > 0) and np.all((st.w + ap * d.dw)[jm] > 0)
        assert np.all((st.z + ad * d.dz)[bm] > 0) and np.all((st.s + ad * d.ds)[jm] > 0)


def test_corrector_rhs_formula():
    prob = _nonneg_problem(3)
    pred = Direction(np.array([1.0, 2.0, 3.0]), np.zeros(1), np.array([1.0, -1.0, 0.5]), np.zeros(3), np.zeros(3))
    mu, mu_aff = 0.2, 0.2
    rhs = corrector_rhs(prob, pred, mu_aff ** 3 / mu ** 2)
    np.testing.assert_allclose(rhs.r_xz, 0.2 - pred.dx * pred.dz)
    np.testing.assert_array_equal(rhs.r_d, 0.0)
    np.testing.assert_array_equal(rhs.r_p, 0.0)
    rhs0 = corrector_rhs(prob, pred, 0.0 ** 3 / mu ** 2)
    np.testing.assert_allclose(rhs0.r_xz, -pred.dx * pred.dz)


def test_centered_step_reduces_mu():
    # Feasible, perfectly centered start for min (x1^2 + x2^2)/2 s.t. x1 + x2 = 2: x = (1, 1), z = (1, 1), y = 0.
    prob = QpProblem.from_kinds(np.ones(2), make_dense_operator(np.ones((1, 2))), np.array([2.0]), np.zeros(2) + 1.0,
                                np.full(2, NONNEG))
    st = IterateState(np.ones(2), np.array([1.0]), np.ones(2), np.zeros(2), np.zeros(2))
    st.mu = duality_measure(st, prob)
    par = PmmParams(1e-8, 1e-8, st.y.copy(), st.x.copy())
    new, diag = predictor_corrector_step(prob, st, par, None, PcgConfig(abs_tol=1e-12))
    assert new.mu < st.mu
    assert diag.alpha_p <= 0.995 and diag.alpha_d <= 0.995


def test_update_pmm_params_rules():
    st = IterateState(np.full(2, 3.0), np.full(1, 4.0), np.zeros(2), np.zeros(2), np.zeros(2))
    par = PmmParams(1.0, 1.0, np.zeros(1), np.zeros(2))
    out = update_pmm_params(par, st, Progress(True, True, 0.05))
    assert out.delta == pytest.approx(0.1) and out.rho == pytest.approx(0.1)
    np.testing.assert_array_equal(out.lambda_est, st.y)
    np.testing.assert_array_equal(out.zeta_est, st.x)
    out = update_pmm_params(par, st, Progress(False, False, 0.5))
    assert out.delta == 0.5 and out.rho == 0.5
    np.testing.assert_array_equal(out.lambda_est, 0.0)
    out = update_pmm_params(PmmParams(6e-10, 6e-10, np.zeros(1), np.zeros(2)), st, Progress(True, False, 0.01))
    assert out.delta == 5e-10 and out.rho == 5e-10


def test_regularization_sequences_monotone():
    prob, _ = random_separable_qp(15, 6, 21)
    rep = solve(prob, SolverConfig(tol=1e-8))
    rhos = [r.rho for r in rep.records]
    deltas = [r.delta for r in rep.records]
    assert all(b <= a for a, b in zip(rhos, rhos[1:])) and min(rhos) >= 5e-10
    assert all(b <= a for a, b in zip(deltas, deltas[1:])) and min(deltas) >= 5e-10


def test_check_termination():
    prob = tiny_qp()
    exact = IterateState(np.array([1.0]), np.array([1.0]), np.array([0.0]), np.zeros(1), np.zeros(1))
    assert check_termination(prob, exact, tol=1e-8) == "optimal"
    zero = IterateState(np.zeros(1), np.zeros(1), np.zeros(1), np.zeros(1), np.zeros(1))
    assert check_termination(prob, zero, tol=1e-8) == "continue"


def test_check_termination_inclusive_boundary():
    # rel_p = 0.25 / 1, rel_d = 0, mu = 0.25 * 1: residual and mu sit exactly on tol.
    prob = QpProblem.from_kinds(np.zeros(1), make_dense_operator(np.eye(1)), np.zeros(1), np.ones(1), [NONNEG])
    st = IterateState(np.array([0.25]), np.zeros(1), np.array([1.0]), np.zeros(1), np.zeros(1))
    assert check_termination(prob, st, tol=0.25) == "optimal"
    assert check_termination(prob, st, tol=np.nextafter(0.25, 0)) == "continue"


def test_pure_equality_problem():
    A = np.array([[1.0, 2.0, 0.0], [0.0, 1.0, 1.0]])
    prob = QpProblem.from_kinds(np.ones(3), make_dense_operator(A), np.array([1.0, 2.0]), np.array([0.5, 0, -1]),
                                np.full(3, FREE))
    rep = solve(prob, SolverConfig(tol=1e-9))
    assert rep.status == "optimal"
    K = np.block([[np.eye(3), -A.T], [A, np.zeros((2, 2))]])
    ref = np.linalg.solve(K, np.concatenate([-prob.c, prob.b]))
    np.testing.assert_allclose(rep.state.x, ref[:3], atol=1e-7)


def test_max_iters_returns_best():
    prob, _ = random_separable_qp(12, 5, 2)
    rep = solve(prob, SolverConfig(tol=1e-12, max_outer=3))
    assert rep.status == "max_iters"
    assert rep.outer_iters == 3


def test_numerical_failure_after_escalations():
    X, y = synthetic_svm(40, 120, 0)
    prob = build_svm_qp(SvmSpec(X, y, 1.0))
    rep = solve(prob, SolverConfig(tol=1e-8, preconditioner="none", pcg_max_iters=1))
    assert rep.status == "numerical_failure"
    assert sum("escalation" in r.note for r in rep.records) == 4


@pytest.mark.parametrize("precond", ["nystrom", "chol"])
def test_matvec_accounting(precond):
    prob, _ = random_separable_qp(14, 6, 4)
    rank = 3
    rep = solve(prob, SolverConfig(tol=1e-8, preconditioner=precond, rank=rank))
    assert rep.status == "optimal"
    build = rank  # sketch products or pivot columns
    for r in rep.records:
        extra_f = r.matvecs_forward - r.pcg_applications - build
        extra_a = r.matvecs_adjoint - r.pcg_applications - build
        assert 0 <= extra_f <= 8 and 0 <= extra_a <= 8 + prob.m * (precond == "chol")
    setup = rep.matvecs_forward - sum(r.matvecs_forward for r in rep.records)
    assert 0 <= setup <= 4 * prob.m + 60  # initial point and final residuals


def test_adaptive_rank_doubles():
    X, y = synthetic_svm(60, 150, 1)
    prob = build_svm_qp(SvmSpec(X, y, 1.0))
    rep = solve(prob, SolverConfig(tol=1e-8, rank=2, adaptive_rank=True, pcg_budget=5))
    ranks = [r.rank for r in rep.records]
    assert ranks[0] == 2 and max(ranks) > 2
    assert all(b >= a for a, b in zip(ranks, ranks[1:]))
    assert rep.status == "optimal"


def test_final_state_passes_independent_check():
    prob, _ = random_separable_qp(16, 5, 9)
    for pc in ("none", "nystrom", "chol"):
        rep = solve(prob, SolverConfig(tol=1e-8, preconditioner=pc, rank=3))
        fresh = IterateState(rep.state.x.copy(), rep.state.y.copy(), rep.state.z.copy(), rep.state.w.copy(),
                             rep.state.s.copy())
        assert check_termination(prob, fresh, tol=1e-8) == "optimal"

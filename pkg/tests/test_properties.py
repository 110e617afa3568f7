import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_psd
from nysqp.ippmm import theta_inverse
from nysqp.linops import make_dense_operator, make_normal_operator
from nysqp.nystrom import build_nystrom_preconditioner, nystrom_approximation
from nysqp.pcg import PcgConfig, pcg_solve
from nysqp.problems import random_separable_qp
from nysqp.qp_model import IterateState, duality_measure

seeds = st.integers(0, 2**31 - 1)
SETTINGS = settings(max_examples=40, deadline=None)


@SETTINGS
@given(seeds, st.integers(1, 12), st.integers(1, 12))
def test_adjoint_consistency(seed, rows, cols):
    rng = np.random.default_rng(seed)
    op = make_dense_operator(rng.standard_normal((rows, cols)))
    p, q = rng.standard_normal(cols), rng.standard_normal(rows)
    lhs, rhs = op.apply(p) @ q, p @ op.apply_adjoint(q)
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))


@SETTINGS
@given(seeds, st.integers(2, 30), st.integers(0, 2**20))
def test_nystrom_below_operator(seed, m, sketch_seed):
    rng = np.random.default_rng(seed)
    N = random_psd(rng, m, rank=int(rng.integers(1, m + 1)))
    ell = int(rng.integers(1, m + 1))
    f = nystrom_approximation(make_dense_operator(N), ell, sketch_seed)
    gap = np.linalg.eigvalsh(N - f.dense())
    assert gap.min() >= -1e-10 * max(1.0, np.linalg.norm(N, 2))
    assert np.all(f.lambda_hat >= 0) and np.all(np.diff(f.lambda_hat) <= 1e-12 * f.lambda_hat[0] + 1e-300)


@SETTINGS
@given(seeds, st.integers(2, 25), st.floats(1e-6, 1.0))
def test_preconditioned_pcg_residual(seed, m, delta):
    rng = np.random.default_rng(seed)
    N = random_psd(rng, m, rank=max(1, m // 2))
    op = make_dense_operator(N + delta * np.eye(m))
    rhs = rng.standard_normal(m)
    P = build_nystrom_preconditioner(nystrom_approximation(make_dense_operator(N), max(1, m // 3), seed), delta)
    res = pcg_solve(op, rhs, P, PcgConfig(abs_tol=1e-8, max_iters=10 * m))
    assert res.converged
    assert np.linalg.norm(rhs - op.apply(res.solution)) <= 1e-8


@SETTINGS
@given(seeds)
def test_duality_measure_and_normal_operator(seed):
    rng = np.random.default_rng(seed)
    prob, A = random_separable_qp(10, 4, seed % 1000)
    bm, jm = prob.bounded_mask, prob.box_mask
    x = np.where(bm, rng.uniform(0.1, 1.0, 10) * np.where(jm, prob.u, 1.0), rng.standard_normal(10))
    z = np.where(bm, rng.uniform(0.1, 2.0, 10), 0.0)
    w = np.where(jm, prob.u - x, 0.0)
    s = np.where(jm, rng.uniform(0.1, 2.0, 10), 0.0)
    state = IterateState(x, rng.standard_normal(4), z, w, s)
    mu = duality_measure(state, prob)
    assert mu >= 0
    expected = (x[bm] @ z[bm] + w[jm] @ s[jm]) / (bm.sum() + jm.sum())
    assert np.isclose(mu, expected, rtol=1e-14)

    ti = theta_inverse(prob, state)
    assert np.all(ti[prob.free_mask] == 0) and np.all(ti[bm] > 0)
    op = make_normal_operator(prob.A, prob.Q_diag, ti, 1e-2, 1e-3)
    dense = A @ np.diag(1.0 / (prob.Q_diag + ti + 1e-2)) @ A.T + 1e-3 * np.eye(4)
    v = rng.standard_normal(4)
    np.testing.assert_allclose(op.apply(v), dense @ v, rtol=1e-10, atol=1e-12)

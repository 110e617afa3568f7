import numpy as np
import pytest

from nysqp.errors import ParameterError
from nysqp.linops import LinearOperator, MatvecCounter, make_dense_operator
from nysqp.partial_cholesky import (
    PartialCholeskyPreconditioner,
    apply_partial_cholesky_inverse,
    build_partial_cholesky,
    compute_diag_matrix_free,
)


def _normal(M, d, delta):
    return M @ np.diag(1.0 / d) @ M.T + delta * np.eye(M.shape[0])


def _no_rows(M, counter=None):
    return LinearOperator(M.shape, lambda v: M @ v, lambda v: M.T @ v, counter=counter, batched=True)


def test_diag_identity_case():
    np.testing.assert_allclose(compute_diag_matrix_free(make_dense_operator(np.eye(2)), np.array([2.0, 2.0]), 1.0),
                               [1.5, 1.5])


@pytest.mark.parametrize("entrywise", [None, False, True])
def test_diag_matches_dense(rng, entrywise):
    M = rng.standard_normal((6, 4))
    d = rng.uniform(0.5, 2.0, 4)
    got = compute_diag_matrix_free(make_dense_operator(M), d, 0.3, entrywise)
    np.testing.assert_allclose(got, np.diag(_normal(M, d, 0.3)), atol=1e-12)


def test_diag_matrix_free_uses_m_adjoints(rng):
    counter = MatvecCounter()
    M = rng.standard_normal((300, 7))
    got = compute_diag_matrix_free(_no_rows(M, counter), np.ones(7), 0.0)
    assert counter.snapshot() == (0, 300)
    np.testing.assert_allclose(got, np.einsum("ij,ij->i", M, M))


def test_diagonal_normal_matrix_is_exact(rng):
    d = rng.uniform(0.5, 2.0, 6)
    A = make_dense_operator(np.diag(rng.uniform(1, 3, 6)))
    for ell in (1, 3, 6):
        f = build_partial_cholesky(A, d, 0.2, ell)
        np.testing.assert_allclose(f.dense(), _normal(np.diag(A.apply(np.ones(6))), d, 0.2), atol=1e-12)


def test_full_rank_is_exact(rng):
    M = rng.standard_normal((5, 8))
    d = rng.uniform(0.5, 2.0, 8)
    N = _normal(M, d, 0.1)
    f = build_partial_cholesky(make_dense_operator(M), d, 0.1, 5)
    np.testing.assert_allclose(f.dense(), N, rtol=1e-10, atol=1e-12)
    Pinv = np.column_stack([apply_partial_cholesky_inverse(f, e) for e in np.eye(5)])
    np.testing.assert_allclose(Pinv @ N, np.eye(5), atol=1e-8)


def test_matches_bruteforce_pivoted_cholesky(rng):
    M = rng.standard_normal((4, 6)) * np.array([3.0, 1.0, 0.5, 2.0])[:, None]
    d = rng.uniform(0.5, 2.0, 6)
    N = _normal(M, d, 0.05)
    f = build_partial_cholesky(_no_rows(M), d, 0.05, 2, entrywise=False)

    perm = np.argsort(-np.diag(N), kind="stable")
    Np = N[np.ix_(perm, perm)]
    L11 = np.linalg.cholesky(Np[:2, :2])
    L21 = np.linalg.solve(L11, Np[:2, 2:]).T
    schur = np.diag(Np[2:, 2:] - L21 @ L21.T)
    np.testing.assert_array_equal(f.perm, perm)
    np.testing.assert_allclose(f.L11, L11, atol=1e-10)
    np.testing.assert_allclose(f.L21, L21, atol=1e-10)
    np.testing.assert_allclose(f.schur_diag, schur, atol=1e-10)


def test_pivots_greedy_and_spd(rng):
    M = rng.standard_normal((40, 60)) * rng.uniform(0.1, 5, 40)[:, None]
    d = rng.uniform(0.1, 3, 60)
    f = build_partial_cholesky(make_dense_operator(M), d, 1e-3, 10)
    diag = np.diag(_normal(M, d, 1e-3))
    piv = diag[f.perm[:10]]
    assert np.all(np.diff(piv) <= 0)
    assert piv.min() >= np.delete(diag, f.perm[:10]).max()
    assert np.all(np.diag(f.L11) > 0) and np.all(f.schur_diag > 0)
    assert np.linalg.eigvalsh(f.dense()).min() > 0


def test_apply_inverse_roundtrip(rng):
    M = rng.standard_normal((30, 45))
    d = rng.uniform(0.2, 2.0, 45)
    f = build_partial_cholesky(make_dense_operator(M), d, 0.01, 7)
    P = f.dense()
    w = rng.standard_normal(30)
    np.testing.assert_allclose(apply_partial_cholesky_inverse(f, P @ w), w, atol=1e-10 * np.abs(w).max() * 1e2)
    dense_inv = np.linalg.inv(P)
    v = rng.standard_normal(30)
    np.testing.assert_allclose(PartialCholeskyPreconditioner(f)(v), dense_inv @ v,
                               rtol=1e-8, atol=1e-8 * np.abs(dense_inv @ v).max())


def test_permutation_roundtrip(rng):
    M = rng.standard_normal((6, 6))
    f = build_partial_cholesky(make_dense_operator(M), np.ones(6), 1.0, 2)
    v = rng.standard_normal(6)
    w = v[f.perm]
    back = np.empty_like(w)
    back[f.perm] = w
    np.testing.assert_array_equal(back, v)


def test_schur_clamp(caplog):
    # Rank-1 normal matrix with delta tiny: trailing Schur entries are ~0 and get clamped.
    M = np.ones((4, 1))
    f = build_partial_cholesky(make_dense_operator(M), np.ones(1), 1e-300, 1)
    floor = np.finfo(float).eps * 1.0
    assert np.all(f.schur_diag >= floor)
    assert f.clamped == 3


def test_rank_validation(rng):
    A = make_dense_operator(np.eye(3))
    with pytest.raises(ParameterError):
        build_partial_cholesky(A, np.ones(3), 1.0, 0)
    with pytest.raises(ParameterError):
        build_partial_cholesky(A, np.ones(3), 1.0, 4)
    with pytest.raises(ParameterError):
        build_partial_cholesky(A, np.ones(3), 0.0, 1)

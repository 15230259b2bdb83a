import numpy as np
import pytest
from hypothesis import given, strategies as st

from funcdict.errors import InvalidInput, SolverError
from funcdict.solver import (
    KKT_TOL,
    kkt_violation,
    solve_box_ls,
    solve_ridge_ls,
    solve_shared_box_ls,
)
from oracles import grid_box_ls_k2


def test_identity_interpolates():
    f = np.array([0.2, 0.0, 1.0, 0.7])
    x, rep = solve_box_ls(np.eye(4), f)
    np.testing.assert_allclose(x, f, atol=1e-12)
    assert rep.converged and rep.residual < 1e-20


def test_active_upper_bound():
    f = np.array([0.2, 1.7, 0.5])
    x, rep = solve_box_ls(np.eye(3), f)
    np.testing.assert_allclose(x, [0.2, 1.0, 0.5], atol=1e-12)
    assert abs(rep.residual - 0.49) < 1e-12


def test_random_6x2_against_grid():
    gen = np.random.default_rng(3)
    A, f = gen.random((6, 2)), gen.random(6)
    x, rep = solve_box_ls(A, f)
    best, _ = grid_box_ls_k2(A, f)
    assert rep.residual <= best + 1e-9


@given(seed=st.integers(0, 2**32 - 1), n=st.integers(8, 60), k=st.integers(1, 8))
def test_kkt_and_restart_agreement(seed, n, k):
    gen = np.random.default_rng(seed)
    A = gen.normal(size=(n, k))
    f = gen.normal(size=n)
    x, rep = solve_box_ls(A, f)
    assert rep.converged and rep.kkt_violation < KKT_TOL
    assert np.all((x >= 0) & (x <= 1))
    # convex problem: any feasible start reaches the same objective
    x2, rep2 = solve_box_ls(A, f, x0=gen.random(k))
    assert abs(rep2.residual - rep.residual) <= 1e-9 * max(1.0, rep.residual)
    # no random feasible point does better
    for z in gen.random((20, k)):
        assert rep.residual <= np.sum((A @ z - f) ** 2) + 1e-12


def test_ill_conditioned_columns():
    gen = np.random.default_rng(9)
    A = gen.random((64, 8))
    A[:, 3] *= 1e-5
    A[:, 5] = A[:, 4] + 1e-7 * gen.random(64)
    f = gen.random(64)
    x, rep = solve_box_ls(A, f)
    assert rep.converged and rep.kkt_violation < KKT_TOL


def test_unbounded_matches_normal_equations():
    gen = np.random.default_rng(4)
    A, f = gen.normal(size=(20, 5)), gen.normal(size=20)
    x, rep = solve_box_ls(A, f, lower=-np.inf, upper=np.inf)
    np.testing.assert_allclose(x, np.linalg.lstsq(A, f, rcond=None)[0], atol=1e-8)
    np.testing.assert_allclose(x, solve_ridge_ls(A, f, eps=0.0), atol=1e-8)


def test_kkt_violation_definition():
    Q, b = np.eye(2), np.array([2.0, -1.0])
    # x at upper bound 1 with gradient pushing out, x at lower bound 0 with gradient pushing out
    assert kkt_violation(Q, b, np.array([1.0, 0.0]), 0.0, 1.0) == 0.0
    # interior point with r = (-1.5, 1): projected gradient 2r, scaled by 1 + max|r|
    v = kkt_violation(Q, b, np.array([0.5, 0.0]), 0.0, 1.0)
    assert abs(v - 3.0 / 2.5) < 1e-15


def test_rejects_bad_shapes():
    with pytest.raises(InvalidInput):
        solve_box_ls(np.ones((3, 4)), np.ones(3))
    with pytest.raises(InvalidInput):
        solve_box_ls(np.ones((3, 2)), np.ones(4))
    with pytest.raises(InvalidInput):
        solve_box_ls(np.full((3, 2), np.nan), np.ones(3))


def test_ridge_orthonormal_and_zero():
    gen = np.random.default_rng(5)
    Qm, _ = np.linalg.qr(gen.normal(size=(10, 3)))
    f = gen.normal(size=10)
    np.testing.assert_allclose(solve_ridge_ls(Qm, f, eps=0.0), Qm.T @ f, atol=1e-12)
    np.testing.assert_array_equal(solve_ridge_ls(Qm, np.zeros(10)), np.zeros(3))


def test_ridge_matches_pseudoinverse():
    gen = np.random.default_rng(6)
    A, f = gen.normal(size=(12, 4)), gen.normal(size=12)
    np.testing.assert_allclose(solve_ridge_ls(A, f, eps=1e-12), np.linalg.pinv(A) @ f, atol=1e-8)


def test_ridge_singular_raises():
    A = np.zeros((6, 2))
    A[:, 0] = 1.0
    with pytest.raises(SolverError):
        solve_ridge_ls(A, np.ones(6), eps=0.0)
    with pytest.raises(InvalidInput):
        solve_ridge_ls(A, np.ones(6), eps=-1.0)


def test_shared_duplicated_problem():
    gen = np.random.default_rng(7)
    A, f = gen.random((30, 4)), gen.random(30)
    x1, r1 = solve_box_ls(A, f)
    x2, r2 = solve_shared_box_ls(A, f, A, f)
    np.testing.assert_allclose(x1, x2, atol=1e-7)
    assert abs(r2.residual - 2 * r1.residual) < 1e-9


@given(seed=st.integers(0, 2**32 - 1))
def test_shared_relaxation_bound(seed):
    gen = np.random.default_rng(seed)
    A1, A2 = gen.random((20, 4)), gen.random((20, 4))
    f1, f2 = gen.random(20), gen.random(20)
    _, rs = solve_shared_box_ls(A1, f1, A2, f2)
    _, r1 = solve_box_ls(A1, f1)
    _, r2 = solve_box_ls(A2, f2)
    assert rs.residual >= r1.residual + r2.residual - 1e-9


def test_shared_k2_against_grid():
    gen = np.random.default_rng(8)
    A1, A2 = gen.random((6, 2)), gen.random((5, 2))
    f1, f2 = gen.random(6), gen.random(5)
    _, rep = solve_shared_box_ls(A1, f1, A2, f2)
    best, _ = grid_box_ls_k2(np.vstack([A1, A2]), np.concatenate([f1, f2]))
    assert rep.residual <= best + 1e-9
    with pytest.raises(InvalidInput):
        solve_shared_box_ls(A1, f1, gen.random((5, 3)), f2)

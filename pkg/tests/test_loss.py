import numpy as np
from hypothesis import given, strategies as st

from funcdict.loss import grad_wrt_A, l21_norm, loss_value, projection_error
from oracles import central_difference, rel_err


def test_l21_examples():
    assert l21_norm(np.eye(7)[:, :3]) == 3.0
    assert l21_norm(np.zeros((5, 4))) == 0.0


@given(seed=st.integers(0, 2**32 - 1), alpha=st.floats(0, 100))
def test_l21_homogeneous(seed, alpha):
    A = np.random.default_rng(seed).normal(size=(6, 3))
    assert abs(l21_norm(alpha * A) - alpha * l21_norm(A)) <= 1e-12 * max(1.0, alpha * l21_norm(A))


def test_loss_examples():
    A = np.random.default_rng(0).random((5, 2))
    x = np.array([0.3, 0.6])
    assert loss_value(A, x, A @ x, 0.0) < 1e-28
    f = np.arange(5.0)
    assert loss_value(A, np.zeros(2), f, 0.0) == f @ f


def test_loss_direct_recomputation():
    gen = np.random.default_rng(1)
    A, x, f = gen.normal(size=(7, 3)), gen.normal(size=3), gen.normal(size=7)
    want = sum((sum(A[i, j] * x[j] for j in range(3)) - f[i]) ** 2 for i in range(7))
    want += 0.7 * sum(np.sqrt(sum(A[i, j] ** 2 for i in range(7))) for j in range(3))
    assert abs(loss_value(A, x, f, 0.7) - want) < 1e-12
    assert abs(projection_error(A, x, f) - np.sum((A @ x - f) ** 2)) < 1e-12


def test_grad_zero_x():
    A = np.random.default_rng(2).normal(size=(5, 3))
    np.testing.assert_array_equal(grad_wrt_A(A, np.zeros(3), np.ones(5), 0.0), 0.0)


@given(seed=st.integers(0, 2**32 - 1), gamma=st.sampled_from([0.0, 0.5, 2.0]))
def test_grad_finite_differences(seed, gamma):
    gen = np.random.default_rng(seed)
    A, x, f = gen.normal(size=(6, 3)), gen.random(3), gen.normal(size=6)
    fd = central_difference(lambda M: loss_value(M, x, f, gamma), A, 1e-6)
    assert rel_err(grad_wrt_A(A, x, f, gamma), fd) < 1e-5


def test_zero_column_guard():
    A = np.random.default_rng(3).normal(size=(5, 3))
    A[:, 1] = 0.0
    G = grad_wrt_A(A, np.ones(3), np.ones(5), 1.0)
    assert np.all(np.isfinite(G))

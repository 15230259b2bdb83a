"""Projection loss with column-group sparsity, and its gradient at fixed coefficients."""
import numpy as np

L21_GUARD = 1e-9


def l21_norm(A):
    """Sum of the Euclidean norms of the columns of A."""
    A = np.asarray(A, dtype=float)
    return float(np.sqrt((A**2).sum(axis=0)).sum())


def projection_error(A, x, f):
    r = np.asarray(A) @ np.asarray(x) - np.asarray(f)
    return float(r @ r)


def loss_value(A, x, f, gamma):
    return projection_error(A, x, f) + gamma * l21_norm(A)


def grad_wrt_A(A, x, f, gamma):
    """d/dA of ||A x - f||^2 + gamma ||A||_{2,1} with x held fixed.

    Zero columns use the guarded direction a_j / max(||a_j||, 1e-9), which is 0.
    """
    A = np.asarray(A, dtype=float)
    x = np.asarray(x, dtype=float)
    r = A @ x - np.asarray(f, dtype=float)
    G = 2.0 * np.outer(r, x)
    if gamma:
        norms = np.sqrt((A**2).sum(axis=0))
        G += gamma * A / np.maximum(norms, L21_GUARD)
    return G

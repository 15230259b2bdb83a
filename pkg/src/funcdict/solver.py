"""Inner least-squares problems: min_x ||A x - f||^2 over a box, or ridge-regularized."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import InvalidInput, SolverError

log = logging.getLogger(__name__)

KKT_TOL = 1e-8
MAX_ITER = 10_000
POLISH_EVERY = 10


@dataclass
class SolveReport:
    residual: float
    iterations: int
    converged: bool
    kkt_violation: float


def kkt_violation(Q, b, x, lower, upper):
    """Scaled projected-gradient norm of F(x) = ||Ax - f||^2 on the box.

    With r = Q x - b (so dF/dx = 2 r), returns
    max_j |projected 2 r_j| / (1 + ||r||_inf).
    """
    r = Q @ x - b
    g = 2.0 * r
    at_lo = x <= lower
    at_hi = x >= upper
    pg = np.where(at_lo, np.minimum(g, 0.0), np.where(at_hi, np.maximum(g, 0.0), g))
    return float(np.abs(pg).max(initial=0.0) / (1.0 + np.abs(r).max(initial=0.0)))


def _projected_newton(Q, b, x, lower, upper, tol, max_iter=60):
    """Projected Newton refinement on the box (Bertsekas-style active set).

    Coordinates at a bound whose gradient pushes outward are held there; the
    rest take a pseudo-inverse Newton step, followed by projection and Armijo
    backtracking. Returns (x, iterations, converged).
    """

    def phi(z):
        return 0.5 * z @ Q @ z - b @ z

    fx = phi(x)
    for it in range(max_iter):
        if kkt_violation(Q, b, x, lower, upper) < tol:
            return x, it, True
        g = Q @ x - b
        eps = min(1e-9, 1e-3 * np.abs(g).max())
        held = ((x <= lower + eps) & (g > 0)) | ((x >= upper - eps) & (g < 0))
        free = ~held
        d = np.zeros_like(x)
        if free.any():
            d[free] = -np.linalg.lstsq(Q[np.ix_(free, free)], g[free], rcond=1e-13)[0]
        alpha = 1.0
        while True:
            x_new = np.clip(x + alpha * d, lower, upper)
            x_new[held] = np.where(g[held] > 0, lower, upper)
            f_new = phi(x_new)
            if f_new <= fx + 1e-4 * (g @ (x_new - x)) or alpha < 1e-12:
                break
            alpha *= 0.5
        if f_new > fx or np.array_equal(x_new, x):
            break
        x, fx = x_new, f_new
    return x, max_iter, kkt_violation(Q, b, x, lower, upper) < tol


def _box_qp(Q, b, lower, upper, x0, tol, max_iter):
    k = Q.shape[0]
    x = np.clip(np.zeros(k) if x0 is None else np.asarray(x0, dtype=float), lower, upper)
    lip = float(np.linalg.eigvalsh(Q)[-1]) if k else 0.0
    if lip <= 0.0:
        # Q = 0: every feasible point is optimal
        return x, 0, True

    def phi(z):
        return 0.5 * z @ Q @ z - b @ z

    y, t, fx = x.copy(), 1.0, phi(x)
    for it in range(1, max_iter + 1):
        x_new = np.clip(y - (Q @ y - b) / lip, lower, upper)
        f_new = phi(x_new)
        if f_new > fx:
            # non-monotone: drop momentum and take a plain projected step from x
            t, y = 1.0, x
            x_new = np.clip(x - (Q @ x - b) / lip, lower, upper)
            f_new = phi(x_new)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = x_new + ((t - 1.0) / t_new) * (x_new - x)
        x, t, fx = x_new, t_new, f_new
        if it % POLISH_EVERY == 0:
            if kkt_violation(Q, b, x, lower, upper) < tol:
                return x, it, True
            xp, n_newton, ok = _projected_newton(Q, b, x, lower, upper, tol)
            if ok:
                return xp, it + n_newton, True
    return x, max_iter, kkt_violation(Q, b, x, lower, upper) < tol


def _check_inputs(A, f):
    A = np.asarray(A, dtype=float)
    f = np.asarray(f, dtype=float)
    if A.ndim != 2 or f.ndim != 1 or A.shape[0] != f.shape[0]:
        raise InvalidInput(f"shape mismatch: A {A.shape}, f {f.shape}")
    if A.shape[0] < A.shape[1]:
        raise InvalidInput(f"need n >= k, got A of shape {A.shape}")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(f))):
        raise InvalidInput("A and f must be finite")
    return A, f


def solve_box_ls(A, f, lower=0.0, upper=1.0, x0=None, tol=KKT_TOL, max_iter=MAX_ITER):
    """Minimize ||A x - f||^2 subject to lower <= x <= upper.

    Accelerated projected gradient with step 1/L, momentum restart on ascent,
    and a projected-Newton refinement on the estimated free set every few
    iterations (needed when near-empty atoms make A^T A ill-conditioned).
    Pass ``lower=-np.inf, upper=np.inf`` to drop the box.
    """
    A, f = _check_inputs(A, f)
    Q, b = A.T @ A, A.T @ f
    x, iters, ok = _box_qp(Q, b, lower, upper, x0, tol, max_iter)
    if not ok:
        log.warning("box LS did not converge in %d iterations", max_iter)
    r = A @ x - f
    return x, SolveReport(float(r @ r), iters, ok, kkt_violation(Q, b, x, lower, upper))


def solve_shared_box_ls(A1, f1, A2, f2, **kw):
    """One coefficient vector for two dictionaries: min ||A1 x - f1||^2 + ||A2 x - f2||^2."""
    A1, f1 = _check_inputs(A1, f1)
    A2, f2 = _check_inputs(A2, f2)
    if A1.shape[1] != A2.shape[1]:
        raise InvalidInput(f"dictionaries disagree on k: {A1.shape[1]} vs {A2.shape[1]}")
    return solve_box_ls(np.vstack([A1, A2]), np.concatenate([f1, f2]), **kw)


def solve_ridge_ls(A, f, eps=1e-9):
    """x = (A^T A + eps I)^{-1} A^T f by a symmetric positive-definite solve."""
    if eps < 0:
        raise InvalidInput("eps must be >= 0")
    A, f = _check_inputs(A, f)
    M = A.T @ A + eps * np.eye(A.shape[1])
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
            return scipy.linalg.solve(M, A.T @ f, assume_a="pos")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgWarning) as exc:
        raise SolverError(f"ridge system is numerically singular (eps={eps}): {exc}") from exc

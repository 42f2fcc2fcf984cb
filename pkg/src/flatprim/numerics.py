"""Shared dense linear algebra and root finding.

Small hand-rolled kernels (systems up to ~24x24) so the solvers stay
auditable and independent of the LAPACK-backed oracle path.
"""

from __future__ import annotations

import numpy as np


class SingularMatrixError(np.linalg.LinAlgError):
    """Pivot below the singularity threshold during factorization."""


class ConvergenceError(RuntimeError):
    """Iteration cap exceeded or Jacobian unusable after damping."""

    def __init__(self, message, best_x=None, best_residual=None, iterations=0):
        super().__init__(message)
        self.best_x = best_x
        self.best_residual = best_residual
        self.iterations = iterations


def lu_factor(A, pivot_tol=1e-14):
    """Partial-pivoting LU. Returns (LU, piv); raises on tiny pivots."""
    A = np.array(A, dtype=float)
    n, m = A.shape
    if n != m:
        raise ValueError(f"square matrix required, got {n}x{m}")
    scale = np.max(np.abs(A)) or 1.0
    piv = np.arange(n)
    for k in range(n):
        p = k + int(np.argmax(np.abs(A[k:, k])))
        if abs(A[p, k]) < pivot_tol * scale:
            raise SingularMatrixError(f"pivot {abs(A[p, k]):.3e} below {pivot_tol:.0e}*|A| at column {k}")
        if p != k:
            A[[k, p]] = A[[p, k]]
            piv[[k, p]] = piv[[p, k]]
        A[k + 1:, k] /= A[k, k]
        A[k + 1:, k + 1:] -= np.outer(A[k + 1:, k], A[k, k + 1:])
    return A, piv


def lu_backsolve(LU, piv, b):
    b = np.asarray(b, dtype=float)
    x = b[piv].copy()
    n = LU.shape[0]
    for k in range(1, n):
        x[k] -= LU[k, :k] @ x[:k]
    for k in range(n - 1, -1, -1):
        x[k] = (x[k] - LU[k, k + 1:] @ x[k + 1:]) / LU[k, k]
    return x


def condition_estimate_1norm(A, LU, piv):
    """Hager-style 1-norm condition estimate from an existing factorization."""
    n = A.shape[0]
    anorm = np.max(np.abs(A).sum(axis=0))
    # power iteration on |A^-T| |A^-1| via repeated solves
    x = np.full(n, 1.0 / n)
    est = 0.0
    for _ in range(5):
        y = lu_backsolve(LU, piv, x)
        est = np.abs(y).sum()
        s = np.sign(y)
        s[s == 0] = 1.0
        # solve A^T z = s using the same factorization of A^T via transpose trick
        z = np.linalg.solve(A.T, s)
        j = int(np.argmax(np.abs(z)))
        if np.abs(z[j]) <= z @ x:
            break
        x = np.zeros(n)
        x[j] = 1.0
    return anorm * est


def lu_solve(A, b, pivot_tol=1e-14, want_condition=False):
    """Dense LU solve; optionally returns a 1-norm condition estimate."""
    A = np.asarray(A, dtype=float)
    LU, piv = lu_factor(A, pivot_tol=pivot_tol)
    x = lu_backsolve(LU, piv, np.asarray(b, dtype=float))
    if want_condition:
        return x, condition_estimate_1norm(A, LU, piv)
    return x


def least_squares(A, b, rank_tol=1e-12):
    """Minimum-residual solve of an overdetermined system via Householder QR.

    No normal equations (conditioning). Returns (x, residual_norm).
    """
    A = np.array(A, dtype=float)
    b = np.array(b, dtype=float)
    m, n = A.shape
    if m < n:
        raise ValueError(f"rows ({m}) must be >= columns ({n})")
    scale = np.max(np.abs(A)) or 1.0
    for k in range(n):
        x = A[k:, k]
        alpha = -np.sign(x[0] if x[0] != 0 else 1.0) * np.linalg.norm(x)
        if abs(alpha) < rank_tol * scale:
            raise SingularMatrixError(f"rank deficiency at column {k} (|R_kk| ~ {abs(alpha):.3e})")
        v = x.copy()
        v[0] -= alpha
        v /= np.linalg.norm(v)
        A[k:, k:] -= 2.0 * np.outer(v, v @ A[k:, k:])
        b[k:] -= 2.0 * v * (v @ b[k:])
    sol = np.zeros(n)
    for k in range(n - 1, -1, -1):
        sol[k] = (b[k] - A[k, k + 1:] @ sol[k + 1:]) / A[k, k]
    return sol, float(np.linalg.norm(b[n:])) if m > n else 0.0


class RootResult:
    def __init__(self, x, residual, iterations, converged):
        self.x = x
        self.residual = residual
        self.residual_norm = float(np.max(np.abs(residual)))
        self.iterations = iterations
        self.converged = converged


def newton_root(residual, x0, transform=None, max_iter=100, tol=1e-8,
                least_squares_mode=False, ls_tol=1e-6, fd_step=1e-6):
    """Damped Newton / Levenberg on a finite-difference Jacobian.

    ``residual`` maps the transformed parameter vector to a residual vector of
    equal (square) or larger (least-squares mode) dimension.  ``transform``,
    when given, maps parameters to the physical variables purely for the
    caller's bookkeeping; ordering constraints are enforced by construction
    inside the caller's transform (e.g. exponential gaps), so iterates can
    roam freely here.

    Convergence: residual inf-norm < ``tol`` (square) or 2-norm < ``ls_tol``
    (least-squares).  On cap exhaustion raises ConvergenceError carrying the
    best iterate.
    """
    x = np.array(x0, dtype=float)
    n = x.size
    F = np.asarray(residual(x), dtype=float)
    best = (x.copy(), F.copy())

    def norm(F):
        return float(np.max(np.abs(F))) if not least_squares_mode else float(np.linalg.norm(F))

    def done(F):
        return norm(F) < (tol if not least_squares_mode else ls_tol)

    lam = 0.0
    for it in range(1, max_iter + 1):
        if done(F):
            return RootResult(x, F, it - 1, True)
        m = F.size
        J = np.empty((m, n))
        for j in range(n):
            h = fd_step * max(1.0, abs(x[j]))
            xp = x.copy()
            xp[j] += h
            xm = x.copy()
            xm[j] -= h
            J[:, j] = (np.asarray(residual(xp)) - np.asarray(residual(xm))) / (2.0 * h)
        # damped Newton step with Levenberg fallback on the normal system
        step = None
        if m == n and lam == 0.0:
            try:
                step = lu_solve(J, -F)
            except SingularMatrixError:
                lam = 1e-6
        if step is None:
            JtJ = J.T @ J
            g = J.T @ F
            lam_try = max(lam, 1e-12)
            for _ in range(60):
                try:
                    step = lu_solve(JtJ + lam_try * np.eye(n) * max(np.trace(JtJ) / n, 1e-30), -g)
                    break
                except SingularMatrixError:
                    lam_try *= 10.0
            else:
                raise ConvergenceError("Jacobian singular after damping floor",
                                       best_x=best[0], best_residual=best[1], iterations=it)
            lam = lam_try
        # backtracking line search on the residual norm
        accepted = False
        alpha = 1.0
        f0 = norm(F)
        for _ in range(40):
            xn = x + alpha * step
            Fn = np.asarray(residual(xn), dtype=float)
            if np.all(np.isfinite(Fn)) and norm(Fn) < f0:
                x, F = xn, Fn
                accepted = True
                lam = max(lam / 4.0, 0.0) if lam > 1e-12 else 0.0
                break
            alpha *= 0.5
        if not accepted:
            lam = max(lam * 10.0, 1e-8)
            if lam > 1e12:
                raise ConvergenceError("damping floor reached without progress",
                                       best_x=best[0], best_residual=best[1], iterations=it)
        if norm(F) < norm(best[1]):
            best = (x.copy(), F.copy())
    if done(F):
        return RootResult(x, F, max_iter, True)
    raise ConvergenceError(f"no convergence in {max_iter} iterations (best |r| = {norm(best[1]):.3e})",
                           best_x=best[0], best_residual=best[1], iterations=max_iter)


def golden_section_max(f, a, b, tol=1e-9):
    """Maximize a scalar unimodal function on [a, b] to tolerance ``tol`` (argument)."""
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    x1 = b - invphi * (b - a)
    x2 = a + invphi * (b - a)
    f1, f2 = f(x1), f(x2)
    while b - a > tol:
        if f1 < f2:
            a, x1, f1 = x1, x2, f2
            x2 = a + invphi * (b - a)
            f2 = f(x2)
        else:
            b, x2, f2 = x2, x1, f1
            x1 = b - invphi * (b - a)
            f1 = f(x1)
    xm = 0.5 * (a + b)
    return xm, f(xm)

"""Sparse iterative solvers: Jacobi-preconditioned CG (with optional projection of
the constant null space) and BiCGStab for the nonsymmetric convective systems."""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class SolverError(RuntimeError):
    """Raised when a linear solve does not reach its tolerance."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass
class SolveReport:
    iterations: int
    residual: float
    converged: bool
    history: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _diag_of(A, diag):
    if diag is not None:
        d = np.asarray(diag, dtype=float)
    else:
        d = np.asarray(A.diagonal(), dtype=float)
    d = np.where(np.abs(d) > 0, d, 1.0)
    return d


def cg_solve(A, b, tol=1e-10, max_iter=None, project_constants=False, x0=None,
             diag=None, callback=None):
    """Preconditioned conjugate gradients for SPD (or semidefinite) systems.

    With `project_constants` the right-hand side and every iterate are kept
    mean-free, which handles the pure-Neumann periodic systems whose kernel is
    the constants; the returned solution then has zero mean.  Convergence is
    relative: ||b - A x|| <= tol * ||b||.
    """
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    if max_iter is None:
        max_iter = max(1000, 10 * n)
    dinv = 1.0 / _diag_of(A, diag)

    def proj(v):
        return v - v.mean() if project_constants else v

    b = proj(b)
    nb = np.linalg.norm(b)
    if nb == 0.0:
        return np.zeros(n), SolveReport(0, 0.0, True, np.zeros(0))

    x = np.zeros(n) if x0 is None else proj(np.asarray(x0, dtype=float).copy())
    r = b - A @ x
    r = proj(r)
    z = proj(dinv * r)
    p = z.copy()
    rz = float(r @ z)
    history = [np.linalg.norm(r) / nb]
    it = 0
    while it < max_iter and history[-1] > tol:
        Ap = A @ p
        pAp = float(p @ Ap)
        if pAp <= 0.0:
            break  # loss of positive definiteness (round-off on semidefinite systems)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        r = proj(r)
        it += 1
        history.append(np.linalg.norm(r) / nb)
        if callback is not None:
            callback(it, x)
        if history[-1] <= tol:
            break
        z = proj(dinv * r)
        rz_new = float(r @ z)
        beta = rz_new / rz
        rz = rz_new
        p = z + beta * p
    x = proj(x)
    res = history[-1]
    return x, SolveReport(it, res, res <= tol, np.asarray(history))


def cg_solve_block(A, B, tol=1e-10, max_iter=None, X0=None, diag=None):
    """CG on many right-hand sides at once (independent SPD solves, one matrix).

    Column k stops updating once its relative residual is below tol; the
    operation order is fixed, so results are bit-reproducible.
    """
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        return cg_solve(A, B, tol=tol, max_iter=max_iter, x0=X0, diag=diag)
    n, m = B.shape
    if max_iter is None:
        max_iter = max(1000, 10 * n)
    dinv = (1.0 / _diag_of(A, diag))[:, None]

    X = np.zeros((n, m)) if X0 is None else np.array(X0, dtype=float, copy=True)
    R = B - A @ X
    Z = dinv * R
    P = Z.copy()
    rz = np.einsum("ij,ij->j", R, Z)
    nb = np.linalg.norm(B, axis=0)
    nb_safe = np.where(nb > 0, nb, 1.0)
    active = np.linalg.norm(R, axis=0) / nb_safe > tol
    it = 0
    while it < max_iter and active.any():
        AP = A @ P
        pAp = np.einsum("ij,ij->j", P, AP)
        alpha = np.where(active & (pAp > 0), rz / np.where(pAp > 0, pAp, 1.0), 0.0)
        X += alpha * P
        R -= alpha * AP
        it += 1
        res = np.linalg.norm(R, axis=0) / nb_safe
        active = res > tol
        if not active.any():
            break
        Z = dinv * R
        rz_new = np.einsum("ij,ij->j", R, Z)
        beta = np.where(active & (rz != 0), rz_new / np.where(rz != 0, rz, 1.0), 0.0)
        rz = rz_new
        P = Z + beta * P
    res = float(np.max(np.linalg.norm(B - A @ X, axis=0) / nb_safe))
    return X, SolveReport(it, res, res <= tol * 1.001, np.zeros(0))


def bicgstab_solve(A, b, tol=1e-8, max_iter=None, x0=None, diag=None):
    """Jacobi-preconditioned BiCGStab for the upwind-convection systems."""
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    if max_iter is None:
        max_iter = max(2000, 10 * n)
    dinv = 1.0 / _diag_of(A, diag)
    nb = np.linalg.norm(b)
    if nb == 0.0:
        return np.zeros(n), SolveReport(0, 0.0, True, np.zeros(0))

    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    r = b - A @ x
    r_hat = r.copy()
    rho = alpha = omega = 1.0
    v = np.zeros(n)
    p = np.zeros(n)
    history = [np.linalg.norm(r) / nb]
    it = 0
    while it < max_iter and history[-1] > tol:
        rho_new = float(r_hat @ r)
        if rho_new == 0.0 or omega == 0.0:
            break  # breakdown; caller decides what to do with converged=False
        beta = (rho_new / rho) * (alpha / omega)
        rho = rho_new
        p = r + beta * (p - omega * v)
        ph = dinv * p
        v = A @ ph
        denom = float(r_hat @ v)
        if denom == 0.0:
            break
        alpha = rho / denom
        s = r - alpha * v
        if np.linalg.norm(s) / nb <= tol:
            x += alpha * ph
            it += 1
            history.append(np.linalg.norm(b - A @ x) / nb)
            break
        sh = dinv * s
        t = A @ sh
        tt = float(t @ t)
        omega = float(t @ s) / tt if tt > 0 else 0.0
        x += alpha * ph + omega * sh
        r = s - omega * t
        it += 1
        history.append(np.linalg.norm(r) / nb)
    res = float(np.linalg.norm(b - A @ x) / nb)
    return x, SolveReport(it, res, res <= tol, np.asarray(history))


def symmetry_defect(A, trials=5, seed=0):
    """max over random pairs of |<Ax,y> - <x,Ay>| / (||Ax|| ||y||)."""
    rng = np.random.default_rng(seed)
    n = A.shape[0]
    worst = 0.0
    for _ in range(trials):
        x = rng.standard_normal(n)
        y = rng.standard_normal(n)
        ax = A @ x
        ay = A @ y
        denom = max(np.linalg.norm(ax) * np.linalg.norm(y), 1e-300)
        worst = max(worst, abs(float(ax @ y) - float(x @ ay)) / denom)
    return worst


def constant_nullspace_defect(A):
    """||A 1|| / ||A||_max relative to the vector length, for null-space checks."""
    n = A.shape[0]
    ones = np.ones(n)
    scale = max(float(np.abs(A.diagonal()).max()), 1e-300)
    return float(np.linalg.norm(A @ ones)) / (scale * np.sqrt(n))


def as_csr(rows, cols, vals, n):
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))

"""Krylov solvers with Jacobi preconditioning and a damped Newton driver.

Matrices are ``scipy.sparse`` CSR matrices; the iterations themselves are
written out here so that iteration counts and stopping rules are under our
control.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import PreconditionerError

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10


@dataclass
class SolveReport:
    iterations: int
    final_residual: float
    converged: bool
    message: str = ""


def _as_csr(A):
    if sp.issparse(A):
        return A.tocsr()
    return sp.csr_matrix(np.asarray(A, dtype=float))


def _relres(A, x, b, bnorm):
    return float(np.linalg.norm(b - A @ x) / bnorm)


def is_symmetric(A, tol=1e-12):
    A = _as_csr(A)
    if A.shape[0] != A.shape[1]:
        return False
    scale = abs(A).max() if A.nnz else 0.0
    diff = abs(A - A.T)
    return (diff.max() if diff.nnz else 0.0) <= tol * max(scale, 1.0)


def cg_solve(A, b, tol=DEFAULT_TOL, max_iter=None, x0=None, callback=None):
    """Jacobi-preconditioned conjugate gradients for SPD ``A``.

    Stops when ``||b - A x|| / ||b|| <= tol``.  ``callback(x)`` is invoked
    after every iteration.
    """
    A = _as_csr(A)
    b = np.asarray(b, dtype=float)
    n = len(b)
    if not np.all(np.isfinite(b)):
        raise ValueError("right-hand side must be finite")
    if not is_symmetric(A):
        raise ValueError("cg_solve needs a symmetric matrix")
    diag = A.diagonal()
    if np.any(diag == 0):
        raise PreconditionerError("zero diagonal entry; Jacobi preconditioner undefined")
    max_iter = 10 * n if max_iter is None else max_iter
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), SolveReport(0, 0.0, True)

    inv_d = 1.0 / diag
    r = b - A @ x
    res = np.linalg.norm(r) / bnorm
    if res <= tol:
        return x, SolveReport(0, float(res), True)
    z = inv_d * r
    p = z.copy()
    rz = r @ z
    it = 0
    while it < max_iter:
        Ap = A @ p
        pAp = p @ Ap
        if pAp <= 0:
            return x, SolveReport(it, float(res), False, "matrix not positive definite")
        step = rz / pAp
        x += step * p
        r -= step * Ap
        it += 1
        if callback is not None:
            callback(x)
        res = np.linalg.norm(r) / bnorm
        if res <= tol:
            break
        z = inv_d * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    true_res = _relres(A, x, b, bnorm)
    converged = true_res <= tol
    return x, SolveReport(it, true_res, converged, "" if converged else "maximum iterations reached")


def krylov_nonsym_solve(A, b, tol=DEFAULT_TOL, max_iter=None, x0=None, restarts=3):
    """BiCGStab with Jacobi right preconditioning for general square ``A``.

    On breakdown the iteration restarts from the current iterate with a fresh
    shadow residual, at most ``restarts`` times.
    """
    A = _as_csr(A)
    b = np.asarray(b, dtype=float)
    n = len(b)
    if not np.all(np.isfinite(b)):
        raise ValueError("right-hand side must be finite")
    max_iter = 10 * n if max_iter is None else max_iter
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), SolveReport(0, 0.0, True)
    diag = A.diagonal()
    inv_d = np.where(diag != 0, 1.0 / np.where(diag != 0, diag, 1.0), 1.0)

    it = 0
    tiny = np.finfo(float).tiny
    msg = "maximum iterations reached"
    for _ in range(restarts + 1):
        r = b - A @ x
        if np.linalg.norm(r) / bnorm <= tol:
            return x, SolveReport(it, _relres(A, x, b, bnorm), True)
        r_hat = r.copy()
        rho = alpha = omega = 1.0
        v = np.zeros(n)
        p = np.zeros(n)
        broke = False
        while it < max_iter:
            rho_new = r_hat @ r
            if abs(rho_new) <= tiny or omega == 0.0:
                broke = True
                break
            beta = (rho_new / rho) * (alpha / omega)
            p = r + beta * (p - omega * v)
            ph = inv_d * p
            v = A @ ph
            denom = r_hat @ v
            if abs(denom) <= tiny:
                broke = True
                break
            alpha = rho_new / denom
            s = r - alpha * v
            it += 1
            if np.linalg.norm(s) / bnorm <= tol:
                x = x + alpha * ph
                r = s
                break
            sh = inv_d * s
            t = A @ sh
            tt = t @ t
            if tt <= tiny:
                x = x + alpha * ph
                r = s
                broke = True
                break
            omega = (t @ s) / tt
            x = x + alpha * ph + omega * sh
            r = s - omega * t
            rho = rho_new
            if not np.all(np.isfinite(x)):
                msg = "non-finite iterate"
                broke = True
                break
            if np.linalg.norm(r) / bnorm <= tol:
                break
        if not np.all(np.isfinite(x)):
            return np.zeros(n), SolveReport(it, float("inf"), False, "non-finite iterate")
        res = _relres(A, x, b, bnorm)
        if res <= tol:
            return x, SolveReport(it, res, True)
        if not broke:
            break
        msg = "breakdown"
    return x, SolveReport(it, _relres(A, x, b, bnorm), False, msg)


def newton_solve(space, problem, initial=None, tol=DEFAULT_TOL, max_iter=50,
                 linear_tol=1e-12, order=None):
    """Newton iteration on the weak nonlinear residual with step halving.

    Converged when ``max|residual| <= tol``.  A trial step whose residual
    norm exceeds the current one is halved, at most ten times.  Returns the
    last iterate and a :class:`SolveReport` whose ``iterations`` counts
    Newton updates.
    """
    from .assembly import LOAD_ORDER, assemble_linearized, nonlinear_residual

    order = LOAD_ORDER if order is None else order
    w = space.zero() if initial is None else initial
    F = nonlinear_residual(space, w, problem, order)
    res = float(np.max(np.abs(F))) if F.size else 0.0
    it = 0
    while res > tol and it < max_iter:
        J = assemble_linearized(space, w, problem, order)
        delta, rep = krylov_nonsym_solve(J, -F, tol=linear_tol)
        if not rep.converged:
            log.warning("Newton linear solve: %s (relres %.2e)", rep.message, rep.final_residual)
        step = 1.0
        for _ in range(11):
            trial = space.function(w.coefficients + step * delta)
            F_trial = nonlinear_residual(space, trial, problem, order)
            res_trial = float(np.max(np.abs(F_trial)))
            if res_trial <= res or step < 2 ** -9:
                break
            step *= 0.5
        w, F, res = trial, F_trial, res_trial
        it += 1
    converged = res <= tol
    return w, SolveReport(it, res, converged, "" if converged else "maximum Newton iterations reached")


def newton_step(space, w, problem, linear_tol=1e-12, order=None):
    """One undamped Newton update ``w - J(w)^{-1} F(w)``; returns ``(u, report)``."""
    from .assembly import LOAD_ORDER, assemble_linearized, nonlinear_residual

    order = LOAD_ORDER if order is None else order
    F = nonlinear_residual(space, w, problem, order)
    J = assemble_linearized(space, w, problem, order)
    delta, rep = krylov_nonsym_solve(J, -F, tol=linear_tol)
    return space.function(w.coefficients + delta), rep

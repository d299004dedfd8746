"""Assembly of P1 bilinear forms, load vectors and nonlinear residuals.

A single kernel, :func:`assemble_form`, covers every bilinear form used by the
drivers::

    (K grad v, grad xi) + (B . grad v, xi) + (C v, grad xi) + (M v, xi)

with coefficients sampled at quadrature nodes.  Rows are test functions,
columns trial functions; boundary vertices are eliminated (homogeneous
Dirichlet data).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .quadrature import physical_points, quad_rule

MATRIX_ORDER = 4
LOAD_ORDER = 6


@dataclass
class AssembledSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray


def _finite(name, a):
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"non-finite {name} coefficient at quadrature nodes")
    return a


def _sample(coef, x, y, tail):
    """Evaluate a callback or broadcast a constant to the quadrature grid."""
    val = coef(x, y) if callable(coef) else np.asarray(coef, dtype=float)
    return np.broadcast_to(val, x.shape + tail)


def _to_matrix(space, local):
    dofs = space.local_dofs
    I = np.broadcast_to(dofs[:, :, None], local.shape)
    J = np.broadcast_to(dofs[:, None, :], local.shape)
    mask = (I >= 0) & (J >= 0)
    n = space.n_dofs
    A = sp.coo_matrix((local[mask], (I[mask], J[mask])), shape=(n, n)).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def _to_vector(space, local):
    dofs = space.local_dofs
    mask = dofs >= 0
    return np.bincount(dofs[mask], weights=local[mask], minlength=space.n_dofs)


def _weights(mesh, rule):
    return rule.weights[None, :] * mesh.areas[:, None]


def assemble_form(space, diffusion=None, convection=None, transport=None, reaction=None,
                  order=MATRIX_ORDER):
    """Sparse matrix of the general second-order form.

    Each coefficient is ``None``, a constant, a callback ``(x, y) -> array`` or
    an array already sampled on the (nt, nq) quadrature grid:
    ``diffusion`` (..., 2, 2), ``convection`` and ``transport`` (..., 2),
    ``reaction`` (...).
    """
    mesh = space.mesh
    rule = quad_rule(order)
    x, y = physical_points(mesh, rule)
    wk = _weights(mesh, rule)
    G = mesh.grad_lambda
    phi = rule.points
    local = np.zeros((mesh.nt, 3, 3))
    if diffusion is not None:
        K = _finite("diffusion", _sample(diffusion, x, y, (2, 2)))
        Kw = np.einsum("tq,tqab->tab", wk, K)
        local += np.einsum("tab,tjb,tia->tij", Kw, G, G)
    if convection is not None:
        B = _finite("convection", _sample(convection, x, y, (2,)))
        local += np.einsum("tq,tqb,tjb,qi->tij", wk, B, G, phi)
    if transport is not None:
        C = _finite("transport", _sample(transport, x, y, (2,)))
        local += np.einsum("tq,tqa,qj,tia->tij", wk, C, phi, G)
    if reaction is not None:
        M = _finite("reaction", _sample(reaction, x, y, ()))
        local += np.einsum("tq,tq,qj,qi->tij", wk, M, phi, phi)
    return _to_matrix(space, local)


def assemble_AS(space, alpha, order=MATRIX_ORDER):
    """Symmetric principal part ``(alpha grad v, grad xi)``."""
    return assemble_form(space, diffusion=alpha, order=order)


def assemble_AN_matrix(space, beta, gamma, order=MATRIX_ORDER):
    """Lower-order part ``(beta . grad v + gamma v, xi)``."""
    return assemble_form(space, convection=beta, reaction=gamma, order=order)


def assemble_linear(space, problem, order=MATRIX_ORDER):
    """Full non-symmetric operator ``A_S + A_N`` of a linear problem."""
    return assemble_form(space, diffusion=problem.alpha, convection=problem.beta,
                         reaction=problem.gamma, order=order)


def assemble_load(space, source, order=LOAD_ORDER):
    """Vector ``(source, phi_i)``."""
    mesh = space.mesh
    rule = quad_rule(order)
    x, y = physical_points(mesh, rule)
    f = _finite("source", _sample(source, x, y, ()))
    local = np.einsum("tq,tq,qi->ti", _weights(mesh, rule), f, rule.points)
    return _to_vector(space, local)


def _state(w, rule, x):
    """Values (nt, nq) and gradients (nt, nq, 2) of a P1 function at quadrature nodes."""
    val = w.at_points(rule.points)
    grad = np.broadcast_to(w.gradients[:, None, :], x.shape + (2,))
    return val, grad


def nonlinear_residual(space, w, problem, order=LOAD_ORDER):
    """Entries ``A(w, phi_i) - (source, phi_i)`` of the weak nonlinear residual."""
    general = problem.as_general()
    mesh = space.mesh
    rule = quad_rule(order)
    x, y = physical_points(mesh, rule)
    wk = _weights(mesh, rule)
    val, z = _state(w, rule, x)
    F = _finite("flux", general.flux(x, y, val, z))
    g = _finite("g", general.g(x, y, val, z) - general.source(x, y))
    local = np.einsum("tq,tqa,tia->ti", wk, F, mesh.grad_lambda)
    local += np.einsum("tq,tq,qi->ti", wk, g, rule.points)
    return _to_vector(space, local)


def assemble_linearized(space, w, problem, order=LOAD_ORDER):
    """Matrix of ``A_2(w; v, xi)``, the Jacobian of :func:`nonlinear_residual` at ``w``."""
    general = problem.as_general()
    rule = quad_rule(order)
    x, y = physical_points(space.mesh, rule)
    val, z = _state(w, rule, x)
    return assemble_form(
        space,
        diffusion=general.a(x, y, val, z),
        transport=general.b(x, y, val, z),
        convection=general.c(x, y, val, z),
        reaction=general.d(x, y, val, z),
        order=order,
    )


def assemble_frozen(space, w, mild, order=LOAD_ORDER):
    """System of ``A_1(w; u, xi) = 0``: coefficients frozen at ``w``.

    ``gamma(x, w)`` does not multiply the unknown, so it moves to the
    right-hand side: ``(alpha(w) grad u, grad xi) + (beta(w) . grad u, xi)
    = (source - gamma(w), xi)``.
    """
    rule = quad_rule(order)
    x, y = physical_points(space.mesh, rule)
    val = w.at_points(rule.points)
    A = assemble_form(space, diffusion=mild.alpha(x, y, val),
                      convection=mild.beta(x, y, val), order=order)
    rhs = assemble_load(space, mild.source(x, y) - mild.gamma(x, y, val), order=order)
    return AssembledSystem(A, rhs)

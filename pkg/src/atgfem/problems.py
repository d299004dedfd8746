"""Coefficient packs, manufactured sources and exact solutions.

All callbacks are vectorized: ``x``, ``y`` and ``u`` are arrays of a common
shape ``S``; gradients ``z`` have shape ``S + (2,)``.  Matrix coefficients
return ``S + (2, 2)``, vector coefficients ``S + (2,)``.

Every problem is posed as ``L(u) = source`` on ``[-1, 1]^2`` with ``u = 0`` on
the boundary.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

PI = np.pi


def _eye(shape):
    return np.broadcast_to(np.eye(2), tuple(shape) + (2, 2)).copy()


def _iso(s):
    s = np.asarray(s, dtype=float)
    return s[..., None, None] * np.eye(2)


def _zeros_vec(shape):
    return np.zeros(tuple(shape) + (2,))


def _dot(v, z):
    return np.einsum("...i,...i->...", v, z)


def _matvec(A, z):
    return np.einsum("...ij,...j->...i", A, z)


@dataclass(frozen=True)
class ExactSolution:
    u: Callable
    grad: Callable
    hessian: Callable | None = None


def sine_solution():
    """``u = sin(pi x) sin(pi y)``, zero on the boundary of ``[-1, 1]^2``."""

    def u(x, y):
        return np.sin(PI * x) * np.sin(PI * y)

    def grad(x, y):
        return np.stack([PI * np.cos(PI * x) * np.sin(PI * y),
                         PI * np.sin(PI * x) * np.cos(PI * y)], axis=-1)

    def hessian(x, y):
        sx, sy, cx, cy = np.sin(PI * x), np.sin(PI * y), np.cos(PI * x), np.cos(PI * y)
        hxx = -PI ** 2 * sx * sy
        hxy = PI ** 2 * cx * cy
        return np.stack([np.stack([hxx, hxy], -1), np.stack([hxy, hxx], -1)], -2)

    return ExactSolution(u, grad, hessian)


@dataclass(frozen=True)
class LinearProblem:
    """``-div(alpha grad u) + beta . grad u + gamma u = source``."""

    alpha: Callable
    beta: Callable
    gamma: Callable
    source: Callable
    exact: ExactSolution | None = None
    name: str = "linear"
    div_alpha: Callable | None = None   # row-wise divergence of alpha, (..., 2)

    def energy_weight(self, x, y):
        return self.alpha(x, y)

    def as_mild(self):
        """Mildly nonlinear view with ``gamma(x, u) = gamma(x) u``."""
        p = self
        return MildlyNonlinearProblem(
            alpha=lambda x, y, u: p.alpha(x, y),
            alpha_u=lambda x, y, u: np.zeros(np.shape(u) + (2, 2)),
            beta=lambda x, y, u: p.beta(x, y),
            beta_u=lambda x, y, u: _zeros_vec(np.shape(u)),
            gamma=lambda x, y, u: p.gamma(x, y) * u,
            gamma_u=lambda x, y, u: p.gamma(x, y) + 0.0 * u,
            source=p.source, exact=p.exact, name=p.name, mildly_nonlinear=False,
            div_alpha_x=(None if p.div_alpha is None else lambda x, y, u: p.div_alpha(x, y)),
        )

    def as_general(self):
        return self.as_mild().as_general()


@dataclass(frozen=True)
class MildlyNonlinearProblem:
    """``-div(alpha(x, u) grad u) + beta(x, u) . grad u + gamma(x, u) = source``.

    ``*_u`` are partial derivatives with respect to ``u``.  ``div_alpha_x``
    is the optional row-wise divergence of ``alpha`` in ``x`` at fixed ``u``.
    """

    alpha: Callable
    alpha_u: Callable
    beta: Callable
    beta_u: Callable
    gamma: Callable
    gamma_u: Callable
    source: Callable
    exact: ExactSolution | None = None
    name: str = "mild"
    mildly_nonlinear: bool = True
    div_alpha_x: Callable | None = None

    def energy_weight(self, x, y):
        return self.alpha(x, y, self.exact.u(x, y))

    def as_general(self):
        p = self

        def flux(x, y, u, z):
            return _matvec(p.alpha(x, y, u), z)

        def g(x, y, u, z):
            return _dot(p.beta(x, y, u), z) + p.gamma(x, y, u)

        def b(x, y, u, z):
            return _matvec(p.alpha_u(x, y, u), z)

        def d(x, y, u, z):
            return _dot(p.beta_u(x, y, u), z) + p.gamma_u(x, y, u)

        flux_div_x = None
        if p.div_alpha_x is not None:
            def flux_div_x(x, y, u, z):
                return _dot(p.div_alpha_x(x, y, u), z)

        return GeneralNonlinearProblem(
            flux=flux, g=g,
            a=lambda x, y, u, z: p.alpha(x, y, u),
            b=b,
            c=lambda x, y, u, z: p.beta(x, y, u),
            d=d,
            source=p.source, exact=p.exact, name=p.name, flux_div_x=flux_div_x, mild=p,
        )


@dataclass(frozen=True)
class GeneralNonlinearProblem:
    """``-div f(x, u, grad u) + g(x, u, grad u) = source``.

    ``a = D_z f``, ``b = D_y f``, ``c = D_z g``, ``d = D_y g``, where ``y``
    stands for the value ``u`` and ``z`` for its gradient.  ``flux_div_x`` is
    the optional divergence of ``f`` in ``x`` at fixed ``(y, z)``.
    """

    flux: Callable
    g: Callable
    a: Callable
    b: Callable
    c: Callable
    d: Callable
    source: Callable
    exact: ExactSolution | None = None
    name: str = "general"
    flux_div_x: Callable | None = None
    mild: MildlyNonlinearProblem | None = None

    def energy_weight(self, x, y):
        return self.a(x, y, self.exact.u(x, y), self.exact.grad(x, y))

    def as_general(self):
        return self

    def strong_operator(self, x, y, u, z, hess):
        """``-div f(x, u, grad u) + g`` from pointwise value, gradient and Hessian."""
        div = np.einsum("...ij,...ij->...", self.a(x, y, u, z), hess) + _dot(self.b(x, y, u, z), z)
        if self.flux_div_x is not None:
            div = div + self.flux_div_x(x, y, u, z)
        return -div + self.g(x, y, u, z)


# registered problems -----------------------------------------------------

def _test1_source(x, y):
    s = np.sin(PI * x) * np.sin(PI * y)
    return 2 * PI ** 2 * s + s ** 5


def make_test1():
    """Semilinear ``-Laplace(u) + u^5 = f`` with ``u = sin(pi x) sin(pi y)``.

    Returns the general view; the mildly nonlinear view (``gamma(x, u) = u^5``)
    is attached as ``.mild``.
    """
    exact = sine_solution()
    mild = MildlyNonlinearProblem(
        alpha=lambda x, y, u: _eye(np.shape(u)),
        alpha_u=lambda x, y, u: np.zeros(np.shape(u) + (2, 2)),
        beta=lambda x, y, u: _zeros_vec(np.shape(u)),
        beta_u=lambda x, y, u: _zeros_vec(np.shape(u)),
        gamma=lambda x, y, u: u ** 5,
        gamma_u=lambda x, y, u: 5 * u ** 4,
        source=_test1_source, exact=exact, name="test1",
    )
    return GeneralNonlinearProblem(
        flux=lambda x, y, u, z: np.array(z, dtype=float),
        g=lambda x, y, u, z: u ** 5,
        a=lambda x, y, u, z: _eye(np.shape(u)),
        b=lambda x, y, u, z: _zeros_vec(np.shape(u)),
        c=lambda x, y, u, z: _zeros_vec(np.shape(u)),
        d=lambda x, y, u, z: 5 * u ** 4,
        source=_test1_source, exact=exact, name="test1", mild=mild,
    )


def _test2_source(x, y):
    sx, sy = np.sin(PI * x), np.sin(PI * y)
    return (4 * PI ** 2 * sx * sy + PI ** 2 * sy ** 2 * np.cos(2 * PI * x)
            + PI ** 2 * sx ** 2 * np.cos(2 * PI * y))


def make_test2():
    """Quasilinear ``-div((2 - u) grad u) = f`` with ``u = sin(pi x) sin(pi y)``.

    Returns the mildly nonlinear view; ``.as_general()`` gives the general
    one and :func:`make_test2_general` a hand-written general view.
    """
    return MildlyNonlinearProblem(
        alpha=lambda x, y, u: _iso(2.0 - u),
        alpha_u=lambda x, y, u: _iso(-np.ones(np.shape(u))),
        beta=lambda x, y, u: _zeros_vec(np.shape(u)),
        beta_u=lambda x, y, u: _zeros_vec(np.shape(u)),
        gamma=lambda x, y, u: np.zeros(np.shape(u)),
        gamma_u=lambda x, y, u: np.zeros(np.shape(u)),
        source=_test2_source, exact=sine_solution(), name="test2",
    )


def make_test2_general():
    mild = make_test2()
    return GeneralNonlinearProblem(
        flux=lambda x, y, u, z: (2.0 - u)[..., None] * z,
        g=lambda x, y, u, z: np.zeros(np.shape(u)),
        a=lambda x, y, u, z: _iso(2.0 - u),
        b=lambda x, y, u, z: -np.array(z, dtype=float),
        c=lambda x, y, u, z: _zeros_vec(np.shape(u)),
        d=lambda x, y, u, z: np.zeros(np.shape(u)),
        source=_test2_source, exact=mild.exact, name="test2", mild=mild,
    )


def make_linear_nonspd(reaction=1.0):
    """``-Laplace(u) + (1, 1) . grad u + reaction * u = f`` with the sine solution."""
    exact = sine_solution()

    def source(x, y):
        sx, sy, cx, cy = np.sin(PI * x), np.sin(PI * y), np.cos(PI * x), np.cos(PI * y)
        return 2 * PI ** 2 * sx * sy + PI * cx * sy + PI * sx * cy + reaction * sx * sy

    return LinearProblem(
        alpha=lambda x, y: _eye(np.shape(x)),
        beta=lambda x, y: np.broadcast_to(np.array([1.0, 1.0]), np.shape(x) + (2,)).copy(),
        gamma=lambda x, y: np.full(np.shape(x), float(reaction)),
        source=source, exact=exact, name="linear-nonspd",
    )


PROBLEMS = {
    "test1": make_test1,
    "test2": make_test2,
    "linear-nonspd": make_linear_nonspd,
}


def get_problem(name):
    try:
        return PROBLEMS[name]()
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; valid ids: {', '.join(PROBLEMS)}") from None


def with_source_shift(problem, shift):
    """Copy of ``problem`` whose source is offset by a constant (consistency probes)."""
    src = problem.source
    return replace(problem, source=lambda x, y: src(x, y) + shift)


def verify_manufactured(problem, samples=100, seed=0):
    """Largest pointwise strong-form residual of the exact solution at random interior points."""
    exact = problem.exact
    if exact is None or exact.hessian is None:
        raise ValueError("verification needs an exact solution with a Hessian")
    rng = np.random.default_rng(seed)
    x, y = rng.uniform(-1, 1, size=(2, samples))
    u, z, H = exact.u(x, y), exact.grad(x, y), exact.hessian(x, y)
    general = problem.as_general()
    res = general.strong_operator(x, y, u, z, H) - problem.source(x, y)
    return float(np.max(np.abs(res)))

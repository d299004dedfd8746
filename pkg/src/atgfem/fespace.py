"""Continuous P1 Lagrange spaces with homogeneous Dirichlet boundary values."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import HierarchyError, MeshParseError
from .mesh import Refinement
from .quadrature import physical_points, quad_rule


class FeSpace:
    """One degree of freedom per interior vertex, numbered in vertex order."""

    def __init__(self, mesh):
        self.mesh = mesh
        interior = np.flatnonzero(~mesh.boundary)
        dof = np.full(mesh.nv, -1, dtype=np.int64)
        dof[interior] = np.arange(len(interior))
        dof.setflags(write=False)
        interior.setflags(write=False)
        self.dof_of_vertex = dof
        self.vertex_of_dof = interior

    def __repr__(self):
        return f"FeSpace(n_dofs={self.n_dofs}, mesh={self.mesh!r})"

    @property
    def n_dofs(self):
        return len(self.vertex_of_dof)

    @cached_property
    def local_dofs(self):
        """(nt, 3) dof index per local vertex, -1 on the boundary."""
        return self.dof_of_vertex[self.mesh.triangles]

    def zero(self):
        return FeFunction(self, np.zeros(self.n_dofs))

    def function(self, coefficients):
        return FeFunction(self, coefficients)


def build_space(mesh):
    return FeSpace(mesh)


class FeFunction:
    """Coefficient vector over an :class:`FeSpace`; zero on boundary vertices."""

    def __init__(self, space, coefficients):
        coefficients = np.array(coefficients, dtype=float)
        if coefficients.shape != (space.n_dofs,):
            raise ValueError(f"expected {space.n_dofs} coefficients, got {coefficients.shape}")
        coefficients.setflags(write=False)
        self.space = space
        self.coefficients = coefficients

    def __repr__(self):
        return f"FeFunction(n_dofs={self.space.n_dofs})"

    def __add__(self, other):
        return FeFunction(self.space, self.coefficients + _coeffs(other, self.space))

    def __sub__(self, other):
        return FeFunction(self.space, self.coefficients - _coeffs(other, self.space))

    def __mul__(self, c):
        return FeFunction(self.space, float(c) * self.coefficients)

    __rmul__ = __mul__

    def __neg__(self):
        return FeFunction(self.space, -self.coefficients)

    @cached_property
    def nodal_values(self):
        v = np.zeros(self.space.mesh.nv)
        v[self.space.vertex_of_dof] = self.coefficients
        v.setflags(write=False)
        return v

    @cached_property
    def gradients(self):
        """(nt, 2) constant gradient on every triangle."""
        mesh = self.space.mesh
        return np.einsum("tid,ti->td", mesh.grad_lambda, self.nodal_values[mesh.triangles])

    def at_points(self, bary):
        """Values at barycentric points ``bary`` (nq, 3) on every triangle: (nt, nq)."""
        local = self.nodal_values[self.space.mesh.triangles]
        return local @ np.asarray(bary).T

    def evaluate(self, t, bary):
        """Value and gradient at barycentric coordinates ``bary`` of triangle ``t``."""
        mesh = self.space.mesh
        if not 0 <= t < mesh.nt:
            raise IndexError(f"triangle id {t} out of range [0, {mesh.nt})")
        bary = np.asarray(bary, dtype=float)
        if bary.shape != (3,) or (bary < -1e-14).any() or abs(bary.sum() - 1.0) > 1e-12:
            raise ValueError("barycentric coordinates must be nonnegative and sum to one")
        local = self.nodal_values[mesh.triangles[t]]
        return float(local @ bary), self.gradients[t].copy()

    def to_text(self):
        lines = ["atgfn 1", str(self.space.n_dofs)]
        lines += [repr(float(c)) for c in self.coefficients]
        return "\n".join(lines) + "\n"


def _coeffs(other, space):
    if isinstance(other, FeFunction):
        if other.space is not space and other.space.n_dofs != space.n_dofs:
            raise ValueError("functions live on different spaces")
        return other.coefficients
    return np.asarray(other, dtype=float)


def read_function(text, space):
    """Inverse of :meth:`FeFunction.to_text`."""
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != "atgfn 1":
        raise MeshParseError("expected header 'atgfn 1'", 1)
    try:
        n = int(lines[1])
        coeffs = [float(v) for v in lines[2:]]
    except (IndexError, ValueError):
        raise MeshParseError("malformed function file", 2) from None
    if n != len(coeffs) or n != space.n_dofs:
        raise MeshParseError(f"coefficient count {len(coeffs)} does not match n_dofs {space.n_dofs}", 2)
    return FeFunction(space, coeffs)


def interpolate(space, g):
    """Nodal interpolant of ``g(x, y)``; boundary values are dropped."""
    p = space.mesh.points[space.vertex_of_dof]
    return FeFunction(space, g(p[:, 0], p[:, 1]))


def prolongate(coarse_fn, records, fine_space):
    """Embed a coarse P1 function into the refined space.

    Surviving vertices keep their values and every new midpoint takes the
    mean of its two source endpoints.  ``records`` is the :class:`Refinement`
    returned by :func:`~atgfem.mesh.bisect_marked` or an iterable of
    :class:`~atgfem.mesh.RefinementRecord`.
    """
    coarse_mesh = coarse_fn.space.mesh
    fine_mesh = fine_space.mesh
    vals = np.empty(fine_mesh.nv)
    nvc = coarse_mesh.nv
    if fine_mesh.nv < nvc:
        raise HierarchyError("fine mesh has fewer vertices than the coarse mesh")
    vals[:nvc] = coarse_fn.nodal_values
    filled = np.zeros(fine_mesh.nv, dtype=bool)
    filled[:nvc] = True

    if isinstance(records, Refinement):
        if records.coarse.nv != nvc or records.coarse.nt != coarse_mesh.nt:
            raise HierarchyError("refinement does not start from the function's mesh")
        src = records.midpoint_sources
        new = nvc + np.arange(len(src))
        if new.size and new[-1] >= fine_mesh.nv:
            raise HierarchyError("refinement creates vertices missing from the fine mesh")
        vals[new] = 0.5 * (vals[src[:, 0]] + vals[src[:, 1]])
        filled[new] = True
    else:
        pending = {}
        for rec in records:
            if not 0 <= rec.parent < coarse_mesh.nt:
                raise HierarchyError(f"record parent {rec.parent} absent from the coarse mesh")
            pending[rec.new_vertex] = rec.source_endpoints
        for v in sorted(pending):
            a, b = pending[v]
            if not (0 <= v < fine_mesh.nv and 0 <= a < fine_mesh.nv and 0 <= b < fine_mesh.nv):
                raise HierarchyError(f"record for vertex {v} refers to vertices outside the fine mesh")
            if not (filled[a] and filled[b]):
                raise HierarchyError(f"midpoint {v} depends on unknown vertices {a}, {b}")
            vals[v] = 0.5 * (vals[a] + vals[b])
            filled[v] = True
    if not filled.all():
        raise HierarchyError("records do not account for every new fine vertex")
    return FeFunction(fine_space, vals[fine_space.vertex_of_dof])


@dataclass(frozen=True)
class NormReport:
    l2: float
    h1_semi: float
    energy1: float
    energy2: float


def norms(fn, problem=None, exact=None, order=6):
    """L2, H1-seminorm and energy norms of ``fn`` or of ``exact - fn``.

    ``exact`` may be an exact-solution pack or ``True`` to use
    ``problem.exact``.  Energy norms are weighted by ``problem.energy_weight``
    (the principal coefficient, evaluated at the exact solution for nonlinear
    problems); without a problem they equal the H1-seminorm.
    """
    if exact is True:
        if problem is None or getattr(problem, "exact", None) is None:
            raise ValueError("error norms need an exact solution pack")
        exact = problem.exact
    mesh = fn.space.mesh
    rule = quad_rule(order)
    x, y = physical_points(mesh, rule)
    v = fn.at_points(rule.points)
    g = np.broadcast_to(fn.gradients[:, None, :], x.shape + (2,))
    if exact is not None:
        v = exact.u(x, y) - v
        g = exact.grad(x, y) - g
    wk = rule.weights[None, :] * mesh.areas[:, None]
    l2 = np.sqrt(np.sum(wk * v ** 2))
    h1 = np.sqrt(np.sum(wk * (g ** 2).sum(axis=-1)))
    if problem is None:
        return NormReport(float(l2), float(h1), float(h1), float(h1))
    A = problem.energy_weight(x, y)
    e = np.sqrt(max(np.sum(wk * np.einsum("...i,...ij,...j->...", g, A, g)), 0.0))
    return NormReport(float(l2), float(h1), float(e), float(e))

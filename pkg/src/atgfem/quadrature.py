"""Quadrature rules on triangles (barycentric) and on edges."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

MAX_ORDER = 40


@dataclass(frozen=True)
class QuadratureRule:
    """Points in barycentric coordinates; weights sum to one (multiply by |K|)."""

    points: np.ndarray
    weights: np.ndarray
    order: int

    def __len__(self):
        return len(self.weights)


@dataclass(frozen=True)
class EdgeRule:
    """Points as parameters ``t`` in [0, 1]; weights sum to one (multiply by |E|)."""

    points: np.ndarray
    weights: np.ndarray
    order: int

    def __len__(self):
        return len(self.weights)


def _collapsed_gauss(n):
    # Gauss-Legendre in the collapsed direction times Gauss-Jacobi(1, 0)
    r, wr = np.polynomial.legendre.leggauss(n)
    s, ws = roots_jacobi(n, 1.0, 0.0)
    y = 0.5 * (1.0 + s)
    R, Y = np.meshgrid(r, y, indexing="ij")
    X = 0.5 * (1.0 + R) * (1.0 - Y)
    W = np.outer(wr, ws) / 4.0
    x, y = X.ravel(), Y.ravel()
    bary = np.stack([1.0 - x - y, x, y], axis=1)
    return bary, W.ravel()


@lru_cache(maxsize=None)
def quad_rule(order):
    """Triangle rule exact for polynomials of total degree ``order``.

    Orders 1 and 2 use the centroid and the three-point rule; higher orders
    a collapsed (Duffy) tensor Gauss rule.
    """
    if not isinstance(order, (int, np.integer)) or not 1 <= order <= MAX_ORDER:
        raise ValueError(f"quadrature order must be an integer in [1, {MAX_ORDER}], got {order!r}")
    if order == 1:
        pts = np.array([[1 / 3, 1 / 3, 1 / 3]])
        w = np.array([1.0])
    elif order == 2:
        a, b = 2 / 3, 1 / 6
        pts = np.array([[a, b, b], [b, a, b], [b, b, a]])
        w = np.full(3, 1 / 3)
    else:
        pts, w = _collapsed_gauss((order + 2) // 2)
    pts.setflags(write=False)
    w.setflags(write=False)
    return QuadratureRule(pts, w, order)


@lru_cache(maxsize=None)
def quad_rule_edge(order):
    """Gauss-Legendre rule on [0, 1] exact to degree ``order``."""
    if order < 0:
        raise ValueError("order must be nonnegative")
    n = order // 2 + 1
    x, w = np.polynomial.legendre.leggauss(n)
    t = 0.5 * (x + 1.0)
    w = 0.5 * w
    t.setflags(write=False)
    w.setflags(write=False)
    return EdgeRule(t, w, order)


def physical_points(mesh, rule):
    """Quadrature nodes mapped to every triangle: arrays ``x, y`` of shape (nt, nq)."""
    p = mesh.points[mesh.triangles]            # (nt, 3, 2)
    xy = np.einsum("qi,tid->tqd", rule.points, p)
    return xy[..., 0], xy[..., 1]


def edge_points(mesh, rule, edges=None):
    """Edge quadrature nodes: arrays ``x, y`` of shape (ne, nq)."""
    e = mesh.edges if edges is None else mesh.edges[edges]
    p0 = mesh.points[e[:, 0]]
    p1 = mesh.points[e[:, 1]]
    t = rule.points
    xy = p0[:, None, :] + t[None, :, None] * (p1 - p0)[:, None, :]
    return xy[..., 0], xy[..., 1]

"""Residual-type error estimators, oscillation terms and bulk marking.

All estimators share one layout: an element residual ``R`` sampled at
triangle quadrature nodes and a normal-flux jump ``J`` sampled at edge
quadrature nodes of interior edges, combined as

    eta_{R,K}^2 = H_K^2 ||R||_K^2,      eta_{J,E}^2 = H_E ||J||_E^2

with ``H_K = |K|^(1/2)`` and ``H_E = |E|``.  Oscillations replace ``R`` and
``J`` by their deviation from the element (edge) mean.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .problems import GeneralNonlinearProblem, LinearProblem, MildlyNonlinearProblem
from .quadrature import edge_points, physical_points, quad_rule, quad_rule_edge

ESTIMATOR_ORDER = 6
EDGE_ORDER = 6
# rho in the estimator-reduction inequality
REDUCTION_RHO = 1.0 - 1.0 / np.sqrt(2.0)


@dataclass
class EstimatorReport:
    """Squared local indicators.

    ``eta2_J`` and ``osc2_J`` are aligned with ``interior_edges`` (edge ids of
    ``mesh``).
    """

    mesh: object
    eta2_R: np.ndarray
    eta2_J: np.ndarray
    osc2_R: np.ndarray
    osc2_J: np.ndarray
    interior_edges: np.ndarray

    @property
    def eta_R(self):
        return float(np.sqrt(self.eta2_R.sum()))

    @property
    def eta_J(self):
        return float(np.sqrt(self.eta2_J.sum()))

    @property
    def eta_global(self):
        return float(np.sqrt(self.eta2_R.sum() + self.eta2_J.sum()))

    @property
    def osc_global(self):
        return float(np.sqrt(self.osc2_R.sum() + self.osc2_J.sum()))

    def edge_elements(self):
        return self.mesh.edge_tris[self.interior_edges]

    def element_indicators(self):
        """Per-element totals with each edge indicator split evenly onto its neighbours."""
        return element_totals(self.eta2_R, self.eta2_J, self.edge_elements())

    def full_edge_array(self, values=None):
        out = np.zeros(self.mesh.ne)
        out[self.interior_edges] = self.eta2_J if values is None else values
        return out


def _mean_dev2(samples, weights):
    """Weighted mean square and mean-square deviation per row (weights sum to one)."""
    mean = samples @ weights
    ms = (samples ** 2) @ weights
    dev = ((samples - mean[:, None]) ** 2) @ weights
    return ms, dev


def compute_oscillation(mesh, residual, rule, jumps=None, edge_rule=None, edges=None):
    """Squared oscillations ``H_K^2 ||R - mean R||^2`` and ``H_E ||J - mean J||^2``.

    ``residual`` holds (nt, nq) samples at ``rule``; ``jumps`` (m, nqe)
    samples at ``edge_rule`` on edge ids ``edges``.
    """
    area = mesh.areas
    _, dev = _mean_dev2(residual, rule.weights)
    osc2_R = area * area * dev
    if jumps is None:
        return osc2_R, np.zeros(0)
    L = mesh.edge_lengths[edges]
    _, devj = _mean_dev2(jumps, edge_rule.weights)
    return osc2_R, L * L * devj


def _report(mesh, residual, rule, jumps, edge_rule, edges):
    area = mesh.areas
    ms, _ = _mean_dev2(residual, rule.weights)
    L = mesh.edge_lengths[edges]
    msj, _ = _mean_dev2(jumps, edge_rule.weights)
    osc2_R, osc2_J = compute_oscillation(mesh, residual, rule, jumps, edge_rule, edges)
    return EstimatorReport(mesh=mesh, eta2_R=area * area * ms, eta2_J=L * L * msj,
                           osc2_R=osc2_R, osc2_J=osc2_J, interior_edges=edges)


def _edge_trace(fn, mesh, edges, edge_rule):
    """Values of a continuous P1 function at edge quadrature nodes."""
    ends = mesh.edges[edges]
    v = fn.nodal_values
    t = edge_rule.points
    return v[ends[:, 0], None] * (1 - t) + v[ends[:, 1], None] * t


def _check_same_mesh(a, b):
    if a.space.mesh is not b.space.mesh:
        if a.space.mesh.nt != b.space.mesh.nt or a.space.mesh.nv != b.space.mesh.nv:
            raise ValueError("both functions must live on the same mesh")


def _jump(flux_fn, mesh, edges, edge_rule, grad_u):
    """Normal-flux jump samples; ``flux_fn(x, y, grad)`` gives the flux for a side gradient."""
    x, y = edge_points(mesh, edge_rule, edges)
    t0, t1 = mesh.edge_tris[edges].T
    shape = x.shape + (2,)
    F0 = flux_fn(x, y, np.broadcast_to(grad_u[t0][:, None, :], shape))
    F1 = flux_fn(x, y, np.broadcast_to(grad_u[t1][:, None, :], shape))
    n = mesh.edge_normals[edges]
    return np.einsum("eqd,ed->eq", F0 - F1, n)


def estimate_linear(u_fine, u_coarse_on_fine, problem, order=ESTIMATOR_ORDER, edge_order=EDGE_ORDER):
    """Estimator for the linear two-grid iteration.

    ``R = -div(alpha grad u_fine) + beta . grad u_coarse + gamma u_coarse - f``
    and ``J = [alpha grad u_fine . n]``.
    """
    _check_same_mesh(u_fine, u_coarse_on_fine)
    mesh = u_fine.space.mesh
    rule = quad_rule(order)
    erule = quad_rule_edge(edge_order)
    x, y = physical_points(mesh, rule)
    gf = np.broadcast_to(u_fine.gradients[:, None, :], x.shape + (2,))
    gc = np.broadcast_to(u_coarse_on_fine.gradients[:, None, :], x.shape + (2,))
    R = (np.einsum("...i,...i->...", problem.beta(x, y), gc)
         + problem.gamma(x, y) * u_coarse_on_fine.at_points(rule.points)
         - problem.source(x, y))
    if problem.div_alpha is not None:
        R = R - np.einsum("...i,...i->...", problem.div_alpha(x, y), gf)
    edges = mesh.interior_edges

    def flux(xe, ye, g):
        return np.einsum("...ij,...j->...i", problem.alpha(xe, ye), g)

    J = _jump(flux, mesh, edges, erule, u_fine.gradients)
    return _report(mesh, R, rule, J, erule, edges)


def estimate_mild(u_fine, u_coarse_on_fine, problem, order=ESTIMATOR_ORDER, edge_order=EDGE_ORDER):
    """Estimator with coefficients frozen at ``w = u_coarse_on_fine``.

    ``R = -div(alpha(w) grad u) + beta(w) . grad u + gamma(w) - f`` where, for
    piecewise linear ``u``, ``div(alpha(w) grad u) = grad w . alpha_u(w) grad u``
    (plus the explicit ``x``-divergence when supplied); ``J = [alpha(w) grad u . n]``.
    """
    if problem.alpha_u is None:
        raise ValueError("estimate_mild needs the alpha_u derivative callback")
    _check_same_mesh(u_fine, u_coarse_on_fine)
    mesh = u_fine.space.mesh
    rule = quad_rule(order)
    erule = quad_rule_edge(edge_order)
    x, y = physical_points(mesh, rule)
    w = u_coarse_on_fine.at_points(rule.points)
    gu = np.broadcast_to(u_fine.gradients[:, None, :], x.shape + (2,))
    gw = np.broadcast_to(u_coarse_on_fine.gradients[:, None, :], x.shape + (2,))
    div = np.einsum("...i,...ij,...j->...", gw, problem.alpha_u(x, y, w), gu)
    if problem.div_alpha_x is not None:
        div = div + np.einsum("...i,...i->...", problem.div_alpha_x(x, y, w), gu)
    R = (-div + np.einsum("...i,...i->...", problem.beta(x, y, w), gu)
         + problem.gamma(x, y, w) - problem.source(x, y))
    edges = mesh.interior_edges
    we = _edge_trace(u_coarse_on_fine, mesh, edges, erule)

    def flux(xe, ye, g):
        return np.einsum("...ij,...j->...i", problem.alpha(xe, ye, we), g)

    J = _jump(flux, mesh, edges, erule, u_fine.gradients)
    return _report(mesh, R, rule, J, erule, edges)


def estimate_general(u_fine, frozen, problem, order=ESTIMATOR_ORDER, edge_order=EDGE_ORDER):
    """Estimator for ``-div f + g = source`` with the value slot frozen at ``frozen``.

    ``R = -div f(x, w, grad u) + g(x, w, grad u) - source``, where for
    piecewise linear ``u`` the divergence reduces to ``b(x, w, grad u) . grad w``
    (plus the explicit ``x``-divergence when supplied);
    ``J = [f(x, w, grad u) . n]``.
    """
    _check_same_mesh(u_fine, frozen)
    mesh = u_fine.space.mesh
    rule = quad_rule(order)
    erule = quad_rule_edge(edge_order)
    x, y = physical_points(mesh, rule)
    w = frozen.at_points(rule.points)
    gu = np.broadcast_to(u_fine.gradients[:, None, :], x.shape + (2,))
    gw = np.broadcast_to(frozen.gradients[:, None, :], x.shape + (2,))
    div = np.einsum("...i,...i->...", problem.b(x, y, w, gu), gw)
    if problem.flux_div_x is not None:
        div = div + problem.flux_div_x(x, y, w, gu)
    R = -div + problem.g(x, y, w, gu) - problem.source(x, y)
    edges = mesh.interior_edges
    we = _edge_trace(frozen, mesh, edges, erule)

    def flux(xe, ye, g):
        return problem.flux(xe, ye, we, g)

    J = _jump(flux, mesh, edges, erule, u_fine.gradients)
    return _report(mesh, R, rule, J, erule, edges)


def estimate(u, frozen, problem, order=ESTIMATOR_ORDER, edge_order=EDGE_ORDER):
    """Dispatch on the problem type."""
    if isinstance(problem, LinearProblem):
        return estimate_linear(u, frozen, problem, order, edge_order)
    if isinstance(problem, MildlyNonlinearProblem):
        return estimate_mild(u, frozen, problem, order, edge_order)
    if isinstance(problem, GeneralNonlinearProblem):
        return estimate_general(u, frozen, problem, order, edge_order)
    raise TypeError(f"unsupported problem type {type(problem).__name__}")


def estimate_fixed_function(u, frozen, problem, order=24, edge_order=16):
    """Estimator of a function that was prolongated unchanged onto a refined mesh.

    Same as :func:`estimate`, with higher default quadrature so that
    coarse and refined evaluations of the same integrand agree closely.
    """
    return estimate(u, frozen, problem, order, edge_order)


# marking ----------------------------------------------------------------

@dataclass
class MarkedSet:
    elements: np.ndarray
    theta: float
    captured_fraction: float

    def __len__(self):
        return len(self.elements)


def element_totals(eta2_R, eta2_J=None, edge_elements=None):
    totals = np.array(eta2_R, dtype=float)
    if eta2_J is not None and len(eta2_J):
        ee = np.asarray(edge_elements)
        eta2_J = np.asarray(eta2_J, dtype=float)
        two = ee[:, 1] >= 0
        share = np.where(two, 0.5, 1.0) * eta2_J
        totals += np.bincount(ee[:, 0], weights=share, minlength=len(totals))
        totals += np.bincount(ee[two, 1], weights=share[two], minlength=len(totals))
    return totals


def dorfler_mark(eta2_R, eta2_J=None, theta=0.25, edge_elements=None):
    """Smallest greedy prefix of elements capturing a fraction ``theta`` of the estimator.

    Elements are ranked by their totals (edge terms split evenly onto the
    adjacent elements), largest first, ties by ascending id.
    """
    if not 0.0 < theta < 1.0:
        raise ValueError(f"theta must lie in (0, 1), got {theta}")
    if eta2_J is not None and len(eta2_J) and edge_elements is None:
        raise ValueError("edge indicators need the edge-to-element adjacency")
    totals = element_totals(eta2_R, eta2_J, edge_elements)
    if np.any(totals < 0):
        raise ValueError("indicators must be nonnegative")
    total = totals.sum()
    if total <= 0.0:
        return MarkedSet(np.zeros(0, dtype=np.int64), theta, 1.0)
    ids = np.arange(len(totals))
    order = np.lexsort((ids, -totals))
    cum = np.cumsum(totals[order])
    m = int(np.searchsorted(cum, theta * total, side="left")) + 1
    m = min(m, len(order))
    chosen = np.sort(order[:m])
    return MarkedSet(chosen, theta, float(cum[m - 1] / total))


def mark(report, theta):
    return dorfler_mark(report.eta2_R, report.eta2_J, theta, report.edge_elements())


# estimator reduction -----------------------------------------------------

@dataclass
class ReductionCheck:
    """Comparison of the same function's estimator before and after one refinement.

    ``split_error``: max relative mismatch of ``sum_i eta_{K_i}^2 |K|/|K_i|``
    against ``eta_K^2`` over refined elements (exact value 0).
    ``max_child_ratio``: max of ``sum_i eta_{K_i}^2 / eta_K^2`` (at most 1/2).
    ``edge_split_error``: max mismatch of ``2 * sum`` over the two halves of
    a bisected edge against the parent edge indicator, relative to the
    largest coarse edge indicator.
    ``new_edge_jump``: largest jump indicator on edges created inside old elements.
    """

    split_error: float
    max_child_ratio: float
    single_bisection_error: float
    edge_split_error: float
    new_edge_jump: float
    eta2_coarse: float
    eta2_fine: float
    eta2_removed: float

    @property
    def reduction_holds(self):
        rhs = self.eta2_coarse - REDUCTION_RHO * self.eta2_removed
        return self.eta2_fine <= rhs * (1 + 1e-12)


def reduction_check(coarse, fine, refinement):
    """Check per-entity estimator reduction for a fixed prolongated function.

    ``coarse`` and ``fine`` are :class:`EstimatorReport` objects of the same
    function (and frozen coefficients) on the meshes of ``refinement``.
    """
    cm, fm = refinement.coarse, refinement.fine
    refined = refinement.refined
    parent = fm.parent
    eR_c = coarse.eta2_R
    eR_f = fine.eta2_R
    child_sum = np.bincount(parent, weights=eR_f, minlength=cm.nt)
    scaled = np.bincount(parent, weights=eR_f * cm.areas[parent] / fm.areas, minlength=cm.nt)
    ref = np.flatnonzero(refined & (eR_c > 0))
    scale = max(eR_c.max(), 1e-300)
    split_err = np.abs(scaled[ref] - eR_c[ref]) / np.maximum(eR_c[ref], 1e-14 * scale)
    ratio = child_sum[ref] / eR_c[ref]
    once = np.bincount(parent, weights=(fm.generation - cm.generation[parent] > 1).astype(float),
                       minlength=cm.nt) == 0
    single = ref[once[ref]]
    single_err = np.abs(child_sum[single] / eR_c[single] - 0.5) if single.size else np.zeros(0)

    # edges
    cJ = coarse.full_edge_array()
    fJ = fine.full_edge_array()
    cut = np.zeros(cm.ne, dtype=bool)
    cut[refinement.cut_edges] = True
    nvc = cm.nv
    fe = fm.edges
    mid_src = refinement.midpoint_sources
    is_half = np.zeros(fm.ne, dtype=bool)
    half_parent = np.full(fm.ne, -1)
    has_new = fe[:, 1] >= nvc   # sorted pairs: the larger id is the new one, if any
    old_pair = ~has_new
    if old_pair.any():
        idx = cm.edge_index(fe[old_pair])
        half_parent[np.flatnonzero(old_pair)] = idx
    cand = np.flatnonzero(has_new & (fe[:, 0] < nvc))
    if cand.size:
        m = fe[cand, 1] - nvc
        src = mid_src[m]
        hit = (src[:, 0] == fe[cand, 0]) | (src[:, 1] == fe[cand, 0])
        is_half[cand[hit]] = True
        half_parent[cand[hit]] = refinement.cut_edges[m[hit]]
    new_inner = (half_parent < 0)
    new_jump = float(fJ[new_inner].max()) if new_inner.any() else 0.0
    halves = np.flatnonzero(is_half)
    sums = np.bincount(half_parent[halves], weights=fJ[halves], minlength=cm.ne)
    cut_int = np.flatnonzero(cut & (cJ > 0))
    jscale = max(cJ.max(), 1e-300)
    # relative to the largest jump: tiny jumps carry only rounding noise
    edge_err = np.abs(2 * sums[cut_int] - cJ[cut_int]) / jscale if cut_int.size else np.zeros(0)

    removed = eR_c[refined].sum() + cJ[cut].sum()
    return ReductionCheck(
        split_error=float(split_err.max()) if split_err.size else 0.0,
        max_child_ratio=float(ratio.max()) if ratio.size else 0.0,
        single_bisection_error=float(single_err.max()) if single_err.size else 0.0,
        edge_split_error=float(edge_err.max()) if edge_err.size else 0.0,
        new_edge_jump=new_jump,
        eta2_coarse=float(eR_c.sum() + cJ.sum()),
        eta2_fine=float(eR_f.sum() + fJ.sum()),
        eta2_removed=float(removed),
    )

"""Conforming triangulations and newest-vertex bisection.

Triangles are stored as counter-clockwise vertex triples together with a
``peak`` index naming the vertex opposite the refinement edge.  Edge ``i`` of
a triangle is the edge opposite its local vertex ``i``, so the refinement edge
of triangle ``t`` is ``tri_edges[t, peak[t]]``.

Meshes are treated as immutable: :func:`bisect_marked` returns a new mesh and
a :class:`Refinement` describing every bisection it performed.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np

from .errors import MeshError, MeshParseError, OrientationError

# edge i is opposite local vertex i
LOCAL_EDGES = np.array([[1, 2], [2, 0], [0, 1]])


class Vertex(NamedTuple):
    x: float
    y: float
    boundary: bool


class Triangle(NamedTuple):
    v: tuple
    peak: int
    parent: int
    level: int


class Edge(NamedTuple):
    endpoints: tuple
    adjacent: tuple
    boundary: bool


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


class Mesh:
    """A 2D triangulation with refinement-edge tags.

    Parameters
    ----------
    points : (nv, 2) array
    triangles : (nt, 3) int array, counter-clockwise
    peak : (nt,) int array, optional
        Local index of the vertex opposite the refinement edge.  Defaults to
        the vertex opposite the longest edge.
    boundary : (nv,) bool array, optional
        Defaults to the endpoints of edges with a single adjacent triangle.
    parent : (nt,) int array, optional
        Triangle id in the previous level (-1 on the initial mesh).
    generation : (nt,) int array, optional
        Number of bisections separating a triangle from the initial mesh.
    level : int
        Refinement-step index ``k``.
    domain_area : float, optional
        Area of the domain; defaults to the sum of triangle areas.
    """

    def __init__(self, points, triangles, peak=None, boundary=None, parent=None,
                 generation=None, level=0, domain_area=None):
        points = np.asarray(points, dtype=float)
        triangles = np.asarray(triangles, dtype=np.int64)
        if points.ndim != 2 or points.shape[1] != 2:
            raise MeshError("points must have shape (nv, 2)")
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise MeshError("triangles must have shape (nt, 3)")
        if triangles.size and (triangles.min() < 0 or triangles.max() >= len(points)):
            raise MeshError("triangle vertex index out of range")
        self.points = _frozen(points, float)
        self.triangles = _frozen(triangles, np.int64)
        nt = len(triangles)
        if peak is None:
            peak = self._longest_edge_peak()
        peak = np.asarray(peak, dtype=np.int64)
        if peak.shape != (nt,) or (nt and (peak.min() < 0 or peak.max() > 2)):
            raise MeshError("peak must hold one local index in {0,1,2} per triangle")
        self.peak = _frozen(peak, np.int64)
        self.parent = _frozen(np.full(nt, -1) if parent is None else parent, np.int64)
        self.generation = _frozen(np.zeros(nt) if generation is None else generation, np.int64)
        self.level = int(level)
        if boundary is None:
            boundary = np.zeros(len(points), dtype=bool)
            boundary[self.edges[self.boundary_edges].ravel()] = True
        self.boundary = _frozen(boundary, bool)
        self.domain_area = float(self.areas.sum() if domain_area is None else domain_area)

    def __repr__(self):
        return f"Mesh(level={self.level}, nv={self.nv}, nt={self.nt})"

    @property
    def nv(self):
        return len(self.points)

    @property
    def nt(self):
        return len(self.triangles)

    @property
    def ne(self):
        return len(self.edges)

    def _longest_edge_peak(self):
        p = self.points[self.triangles]
        lengths = np.stack([np.linalg.norm(p[:, LOCAL_EDGES[i, 1]] - p[:, LOCAL_EDGES[i, 0]], axis=1)
                            for i in range(3)], axis=1)
        return np.argmax(lengths, axis=1)

    # geometry -----------------------------------------------------------
    @cached_property
    def signed_areas(self):
        p = self.points[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def areas(self):
        return np.abs(self.signed_areas)

    @cached_property
    def grad_lambda(self):
        """(nt, 3, 2) gradients of the barycentric coordinates."""
        p = self.points[self.triangles]
        twice = 2.0 * self.signed_areas
        g = np.empty((self.nt, 3, 2))
        for i in range(3):
            j, k = LOCAL_EDGES[i]
            g[:, i, 0] = p[:, j, 1] - p[:, k, 1]
            g[:, i, 1] = p[:, k, 0] - p[:, j, 0]
        return g / twice[:, None, None]

    # topology -----------------------------------------------------------
    @cached_property
    def _edge_data(self):
        nt, nv = self.nt, self.nv
        pairs = np.sort(self.triangles[:, LOCAL_EDGES], axis=2).reshape(-1, 2)
        keys = pairs[:, 0] * nv + pairs[:, 1]
        uniq, inverse, counts = np.unique(keys, return_inverse=True, return_counts=True)
        ne = len(uniq)
        slot = np.arange(3 * nt)
        first = np.full(ne, 3 * nt)
        last = np.full(ne, -1)
        np.minimum.at(first, inverse, slot)
        np.maximum.at(last, inverse, slot)
        edge_tris = np.stack([first // 3, np.where(counts >= 2, last // 3, -1)], axis=1)
        edges = np.stack([uniq // nv, uniq % nv], axis=1)
        return edges, inverse.reshape(nt, 3), edge_tris, counts, uniq

    @property
    def edges(self):
        """(ne, 2) sorted vertex pairs."""
        return self._edge_data[0]

    @property
    def tri_edges(self):
        """(nt, 3) edge ids; column i is the edge opposite local vertex i."""
        return self._edge_data[1]

    @property
    def edge_tris(self):
        """(ne, 2) adjacent triangles; second column is -1 on boundary edges."""
        return self._edge_data[2]

    @property
    def edge_multiplicity(self):
        return self._edge_data[3]

    @property
    def boundary_edges(self):
        return self.edge_tris[:, 1] < 0

    @property
    def interior_edges(self):
        return np.flatnonzero(~self.boundary_edges)

    @cached_property
    def edge_lengths(self):
        p = self.points[self.edges]
        return np.linalg.norm(p[:, 1] - p[:, 0], axis=1)

    @cached_property
    def edge_normals(self):
        """Unit normals, the edge direction rotated clockwise."""
        p = self.points[self.edges]
        d = p[:, 1] - p[:, 0]
        return np.stack([d[:, 1], -d[:, 0]], axis=1) / self.edge_lengths[:, None]

    def edge_index(self, pairs):
        """Edge ids for an (m, 2) array of vertex pairs; -1 where absent."""
        pairs = np.sort(np.atleast_2d(np.asarray(pairs, dtype=np.int64)), axis=1)
        keys = pairs[:, 0] * self.nv + pairs[:, 1]
        uniq = self._edge_data[4]
        pos = np.searchsorted(uniq, keys)
        pos = np.minimum(pos, len(uniq) - 1)
        return np.where(uniq[pos] == keys, pos, -1)

    @property
    def refinement_edges(self):
        return self.tri_edges[np.arange(self.nt), self.peak]

    # record views -------------------------------------------------------
    def vertex(self, i):
        x, y = self.points[i]
        return Vertex(float(x), float(y), bool(self.boundary[i]))

    def triangle(self, t):
        return Triangle(tuple(int(v) for v in self.triangles[t]), int(self.peak[t]),
                        int(self.parent[t]), int(self.generation[t]))

    def edge(self, e):
        adj = tuple(int(t) for t in self.edge_tris[e] if t >= 0)
        return Edge(tuple(int(v) for v in self.edges[e]), adj, len(adj) == 1)


def build_initial_uniform(n, lower=-1.0, upper=1.0):
    """Uniform ``n`` x ``n`` diagonal triangulation of the square ``[lower, upper]^2``.

    Each square is split by its bottom-left to top-right diagonal, which is
    also the refinement edge of both halves.
    """
    if int(n) != n or n < 1:
        raise MeshError(f"subdivision count must be a positive integer, got {n!r}")
    n = int(n)
    t = np.linspace(lower, upper, n + 1)
    X, Y = np.meshgrid(t, t)
    points = np.stack([X.ravel(), Y.ravel()], axis=1)
    i, j = np.meshgrid(np.arange(n), np.arange(n))
    i, j = i.ravel(), j.ravel()
    v00 = j * (n + 1) + i
    v10 = v00 + 1
    v01 = v00 + n + 1
    v11 = v01 + 1
    lower_tris = np.stack([v00, v10, v11], axis=1)
    upper_tris = np.stack([v00, v11, v01], axis=1)
    triangles = np.stack([lower_tris, upper_tris], axis=1).reshape(-1, 3)
    peak = np.tile([1, 2], n * n)
    boundary = (np.isclose(points, lower) | np.isclose(points, upper)).any(axis=1)
    return Mesh(points, triangles, peak=peak, boundary=boundary)


def sizes(mesh):
    """Element sizes ``H_K = |K|^(1/2)`` and edge sizes ``H_E = |E|``."""
    return np.sqrt(mesh.areas), mesh.edge_lengths.copy()


# refinement --------------------------------------------------------------

@dataclass(frozen=True)
class RefinementRecord:
    """One bisection.

    ``parent`` is the id of the level-k triangle the bisected triangle
    descends from; ``children`` are ids in the refined mesh, or -1 for a child
    that was itself bisected again during the same closure.
    """

    parent: int
    children: tuple
    new_vertex: int
    source_endpoints: tuple
    parent_vertices: tuple
    child_vertices: tuple


@dataclass
class Refinement:
    """Array form of all bisections performed by one :func:`bisect_marked` call."""

    coarse: Mesh
    fine: Mesh
    ancestor: np.ndarray          # (nb,) level-k triangle id
    parent_tris: np.ndarray       # (nb, 3) vertex triple that was bisected
    child_tris: np.ndarray        # (nb, 2, 3)
    children: np.ndarray          # (nb, 2) fine ids or -1
    new_vertex: np.ndarray        # (nb,)
    endpoints: np.ndarray         # (nb, 2) endpoints of the bisected edge
    cut_edges: np.ndarray = field(default=None)  # coarse edge ids that were bisected

    def __len__(self):
        return len(self.ancestor)

    def __getitem__(self, i):
        return RefinementRecord(
            parent=int(self.ancestor[i]),
            children=tuple(int(c) for c in self.children[i]),
            new_vertex=int(self.new_vertex[i]),
            source_endpoints=tuple(int(v) for v in self.endpoints[i]),
            parent_vertices=tuple(int(v) for v in self.parent_tris[i]),
            child_vertices=tuple(tuple(int(v) for v in c) for c in self.child_tris[i]),
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def midpoint_sources(self):
        """(n_new, 2) endpoints for the new vertices ``coarse.nv, coarse.nv+1, ...``."""
        return self.coarse.edges[self.cut_edges]

    @property
    def refined(self):
        """Boolean mask over coarse triangles that were bisected at least once."""
        mask = np.zeros(self.coarse.nt, dtype=bool)
        mask[self.ancestor] = True
        return mask


def _rolled(mesh):
    """Triangles and their edge ids rotated so the peak is local vertex 0."""
    cols = (mesh.peak[:, None] + np.arange(3)) % 3
    rows = np.arange(mesh.nt)[:, None]
    return mesh.triangles[rows, cols], mesh.tri_edges[rows, cols]


def _closure(mesh, marked):
    """Edges cut by newest-vertex bisection of ``marked`` plus conformity closure."""
    base = mesh.refinement_edges
    edge_tris = mesh.edge_tris
    cut = np.zeros(mesh.ne, dtype=bool)
    frontier = marked
    while frontier.size:
        e = np.unique(base[frontier])
        e = e[~cut[e]]
        cut[e] = True
        nb = edge_tris[e].ravel()
        nb = nb[nb >= 0]
        frontier = np.unique(nb[~cut[base[nb]]])
    return cut


def bisect_marked(mesh, marked):
    """Bisect every marked triangle, closing the mesh by newest-vertex bisection.

    Returns ``(fine_mesh, refinement)``.  Every cut edge is an edge of the
    input mesh, so each new vertex is the midpoint of two existing vertices.
    """
    marked = np.asarray(list(marked) if isinstance(marked, (set, frozenset)) else marked)
    if marked.size and not np.issubdtype(marked.dtype, np.integer):
        if marked.dtype == bool and marked.shape == (mesh.nt,):
            marked = np.flatnonzero(marked)
        else:
            raise MeshError("marked set must contain integer triangle ids")
    marked = np.unique(marked.astype(np.int64).ravel())
    if marked.size and (marked[0] < 0 or marked[-1] >= mesh.nt):
        raise MeshError(f"marked triangle id out of range [0, {mesh.nt})")

    cut = _closure(mesh, marked)
    cut_ids = np.flatnonzero(cut)
    nv = mesh.nv
    edge2new = np.full(mesh.ne, -1)
    edge2new[cut_ids] = nv + np.arange(len(cut_ids))
    ends = mesh.edges[cut_ids]
    points = np.vstack([mesh.points, 0.5 * (mesh.points[ends[:, 0]] + mesh.points[ends[:, 1]])])
    boundary = np.concatenate([mesh.boundary, mesh.boundary_edges[cut_ids]])

    tris, tedges = _rolled(mesh)
    base = tedges[:, 0].copy()
    side1 = tedges[:, 1].copy()
    side2 = tedges[:, 2].copy()
    ancestor = np.arange(mesh.nt)
    gen = mesh.generation.copy()

    rec = {k: [] for k in ("ancestor", "parent", "child", "slot", "new", "ends")}
    while True:
        sel = np.flatnonzero((base >= 0) & cut[np.maximum(base, 0)])
        if sel.size == 0:
            break
        p, a, b = tris[sel].T
        m = edge2new[base[sel]]
        c1 = np.stack([m, p, a], axis=1)
        c2 = np.stack([m, b, p], axis=1)
        n_old = len(tris)
        slots2 = n_old + np.arange(len(sel))
        rec["ancestor"].append(ancestor[sel])
        rec["parent"].append(tris[sel].copy())
        rec["child"].append(np.stack([c1, c2], axis=1))
        rec["slot"].append(np.stack([sel, slots2], axis=1))
        rec["new"].append(m)
        rec["ends"].append(np.stack([a, b], axis=1))

        new_base2 = side1[sel]
        new_base1 = side2[sel]
        tris[sel] = c1
        tris = np.vstack([tris, c2])
        base[sel] = new_base1
        base = np.concatenate([base, new_base2])
        side1[sel] = -1
        side2[sel] = -1
        side1 = np.concatenate([side1, np.full(len(sel), -1)])
        side2 = np.concatenate([side2, np.full(len(sel), -1)])
        ancestor = np.concatenate([ancestor, ancestor[sel]])
        gen[sel] += 1
        gen = np.concatenate([gen, gen[sel]])

    fine = Mesh(points, tris, peak=np.zeros(len(tris), dtype=np.int64), boundary=boundary,
                parent=ancestor, generation=gen, level=mesh.level + 1,
                domain_area=mesh.domain_area)

    if rec["ancestor"]:
        slots = np.concatenate(rec["slot"])
        order = np.arange(len(slots))
        # a child slot is final unless a later record bisects it again
        last_parent = np.full(len(tris), -1)
        np.maximum.at(last_parent, slots[:, 0], order)
        flat = slots.ravel()
        final = last_parent[flat] <= np.repeat(order, 2)
        children = np.where(final, flat, -1).reshape(-1, 2)
        refinement = Refinement(
            coarse=mesh, fine=fine,
            ancestor=np.concatenate(rec["ancestor"]),
            parent_tris=np.concatenate(rec["parent"]),
            child_tris=np.concatenate(rec["child"]),
            children=children,
            new_vertex=np.concatenate(rec["new"]),
            endpoints=np.concatenate(rec["ends"]),
            cut_edges=cut_ids,
        )
    else:
        refinement = Refinement(
            coarse=mesh, fine=fine, ancestor=np.zeros(0, np.int64),
            parent_tris=np.zeros((0, 3), np.int64), child_tris=np.zeros((0, 2, 3), np.int64),
            children=np.zeros((0, 2), np.int64), new_vertex=np.zeros(0, np.int64),
            endpoints=np.zeros((0, 2), np.int64), cut_edges=cut_ids,
        )
    return fine, refinement


def refine_uniform(mesh, times=1):
    """Bisect every triangle ``times`` times; returns the mesh and the refinements."""
    steps = []
    for _ in range(times):
        mesh, r = bisect_marked(mesh, np.arange(mesh.nt))
        steps.append(r)
    return mesh, steps


# diagnostics -------------------------------------------------------------

@dataclass
class ConformityReport:
    hanging_nodes: list = field(default_factory=list)   # (edge endpoints, vertex)
    orientation: list = field(default_factory=list)     # triangle ids
    overshared_edges: list = field(default_factory=list)
    boundary_flags: list = field(default_factory=list)  # vertex ids
    area_mismatch: float | None = None

    @property
    def ok(self):
        return not (self.hanging_nodes or self.orientation or self.overshared_edges
                    or self.boundary_flags or self.area_mismatch is not None)

    def messages(self):
        out = [f"hanging node {v} on edge {e}" for e, v in self.hanging_nodes]
        out += [f"triangle {t} is not counter-clockwise" for t in self.orientation]
        out += [f"edge {e} shared by more than two triangles" for e in self.overshared_edges]
        out += [f"vertex {v} boundary flag inconsistent" for v in self.boundary_flags]
        if self.area_mismatch is not None:
            out.append(f"area sum differs from domain area by {self.area_mismatch:.3e}")
        return out


def conformity_check(mesh, domain_area=None, rtol=1e-12):
    """Audit a mesh for hanging nodes, orientation, edge sharing and area coverage."""
    report = ConformityReport()
    report.orientation = np.flatnonzero(mesh.signed_areas <= 0).tolist()
    mult = mesh.edge_multiplicity
    report.overshared_edges = [tuple(mesh.edges[e]) for e in np.flatnonzero(mult > 2)]

    one_sided = np.flatnonzero(mult == 1)
    ends = mesh.edges[one_sided]
    cand = np.unique(ends)
    if len(one_sided) and len(cand):
        P = mesh.points[ends[:, 0]]
        Q = mesh.points[ends[:, 1]]
        X = mesh.points[cand]
        d = Q - P
        L2 = (d ** 2).sum(axis=1)
        tol = 1e-10
        # chunk to bound memory
        for start in range(0, len(one_sided), 512):
            sl = slice(start, start + 512)
            rel = X[None, :, :] - P[sl, None, :]
            s = (rel * d[sl, None, :]).sum(axis=2) / L2[sl, None]
            cross = rel[..., 0] * d[sl, None, 1] - rel[..., 1] * d[sl, None, 0]
            on = (np.abs(cross) <= tol * L2[sl, None]) & (s > tol) & (s < 1 - tol)
            for i, j in zip(*np.nonzero(on)):
                report.hanging_nodes.append((tuple(ends[start + i]), int(cand[j])))

    on_boundary = np.zeros(mesh.nv, dtype=bool)
    on_boundary[ends.ravel()] = True
    if not report.hanging_nodes:
        report.boundary_flags = np.flatnonzero(on_boundary != mesh.boundary).tolist()

    target = mesh.domain_area if domain_area is None else domain_area
    total = mesh.areas.sum()
    if abs(total - target) > rtol * abs(target):
        report.area_mismatch = float(total - target)
    return report


# text format -------------------------------------------------------------

def write_mesh(mesh):
    """Serialize to the ``atgmesh 1`` text format."""
    buf = io.StringIO()
    buf.write("atgmesh 1\n")
    buf.write(f"{mesh.nv} {mesh.nt}\n")
    for (x, y), b in zip(mesh.points, mesh.boundary):
        buf.write(f"{float(x)!r} {float(y)!r} {int(b)}\n")
    for (a, b, c), p in zip(mesh.triangles, mesh.peak):
        buf.write(f"{a} {b} {c} {p}\n")
    return buf.getvalue()


def read_mesh(text):
    """Parse the ``atgmesh 1`` text format; ``#`` starts a comment."""
    lines = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        content = raw.split("#", 1)[0].strip()
        if content:
            lines.append((lineno, content.split()))
    if not lines:
        raise MeshParseError("empty mesh file", 1)
    lineno, tok = lines[0]
    if tok != ["atgmesh", "1"]:
        raise MeshParseError("expected header 'atgmesh 1'", lineno)
    if len(lines) < 2:
        raise MeshParseError("missing counts line", lineno + 1)
    lineno, tok = lines[1]
    try:
        nv, nt = (int(t) for t in tok)
    except ValueError:
        raise MeshParseError("counts line must be '<nv> <nt>'", lineno) from None
    if nv < 0 or nt < 0:
        raise MeshParseError("negative counts", lineno)
    body = lines[2:]
    if len(body) != nv + nt:
        last = body[-1][0] if body else lineno
        raise MeshParseError(f"expected {nv + nt} data lines, found {len(body)}", last)

    points = np.empty((nv, 2))
    bflag = np.empty(nv, dtype=bool)
    for i, (ln, tok) in enumerate(body[:nv]):
        if len(tok) != 3:
            raise MeshParseError("vertex line must be '<x> <y> <bflag>'", ln)
        try:
            points[i] = float(tok[0]), float(tok[1])
            b = int(tok[2])
        except ValueError:
            raise MeshParseError("bad vertex line", ln) from None
        if b not in (0, 1):
            raise MeshParseError("boundary flag must be 0 or 1", ln)
        bflag[i] = bool(b)

    tris = np.empty((nt, 3), dtype=np.int64)
    peak = np.empty(nt, dtype=np.int64)
    for i, (ln, tok) in enumerate(body[nv:]):
        if len(tok) != 4:
            raise MeshParseError("triangle line must be '<v0> <v1> <v2> <peak>'", ln)
        try:
            vals = [int(t) for t in tok]
        except ValueError:
            raise MeshParseError("bad triangle line", ln) from None
        if any(v < 0 or v >= nv for v in vals[:3]):
            raise MeshParseError("vertex index out of range", ln)
        if vals[3] not in (0, 1, 2):
            raise MeshParseError("peak must be 0, 1 or 2", ln)
        p = points[vals[:3]]
        area2 = (p[1, 0] - p[0, 0]) * (p[2, 1] - p[0, 1]) - (p[1, 1] - p[0, 1]) * (p[2, 0] - p[0, 0])
        if area2 <= 0:
            raise OrientationError("triangle is not counter-clockwise", ln)
        tris[i] = vals[:3]
        peak[i] = vals[3]
    return Mesh(points, tris, peak=peak, boundary=bflag)

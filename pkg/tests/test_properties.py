import numpy as np
from hypothesis import given, strategies as st

from atgfem.algorithms import compute_hot, fit_slope, hot_terms
from atgfem.fespace import FeSpace, prolongate
from atgfem.mesh import bisect_marked, build_initial_uniform

errors = st.lists(st.floats(1e-6, 10.0), min_size=3, max_size=12)
zetas = st.floats(0.01, 0.99)


@given(errors, zetas)
def test_hot_scales_quadratically(e, z):
    a = compute_hot(e, z)
    b = compute_hot(2 * np.array(e), z)
    assert np.allclose(b, 4 * a, rtol=1e-12)


@given(errors, zetas)
def test_hot_lagged_sums_are_shifts(e, z):
    # hot2 at k is hot1 at k-1 plus the newest-weighted oldest term; hot3(k) = hot2(k-1)
    for k in range(1, len(e) - 1):
        h1p, h2p, _ = hot_terms(e, k - 1, z)
        _, h2, h3 = hot_terms(e, k, z)
        assert np.isclose(h3, h2p, rtol=1e-12)
        assert np.isclose(h2, h1p + z ** k * e[0] ** 2, rtol=1e-12)


@given(st.floats(-2.0, 0.0), st.floats(0.1, 100.0))
def test_slope_recovers_power_law(p, c):
    d = np.geomspace(50, 5e4, 7)
    assert np.isclose(fit_slope(d, c * d ** p), p, atol=1e-10)


@given(st.lists(st.integers(0, 10_000), min_size=1, max_size=8), st.integers(0, 2 ** 31))
def test_prolongation_reproduces_coarse_function(marks, seed):
    # [DERIVED] every fine vertex value equals the coarse P1 function evaluated there
    m = build_initial_uniform(3)
    V = FeSpace(m)
    u = V.function(np.random.default_rng(seed).standard_normal(V.n_dofs))
    fine, ref = bisect_marked(m, np.unique(np.array(marks) % m.nt))
    uf = prolongate(u, ref, FeSpace(fine))
    tri = m.triangles[fine.parent]               # coarse triangle containing each fine one
    p = m.points[tri]
    T = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)
    for j in range(3):
        x = fine.points[fine.triangles[:, j]]
        lam12 = np.linalg.solve(T, (x - p[:, 0])[..., None])[..., 0]
        lam = np.column_stack([1 - lam12.sum(1), lam12])
        coarse = (lam * u.nodal_values[tri]).sum(1)
        assert np.allclose(uf.nodal_values[fine.triangles[:, j]], coarse, atol=1e-12)

"""Residual estimator and bulk marking for one frozen solve.

Solve Test 1 on the initial mesh, evaluate the element residual and edge jump
indicators, and mark the smallest set carrying 25% of the estimate.
"""
import numpy as np

from atgfem.adaptivity import estimate, mark
from atgfem.fespace import FeSpace, norms
from atgfem.linalg import newton_solve
from atgfem.mesh import build_initial_uniform
from atgfem.problems import get_problem

prob = get_problem("test1")
V = FeSpace(build_initial_uniform(8))
u, rep = newton_solve(V, prob)
print(f"Newton: {rep.iterations} steps, residual {rep.final_residual:.1e}")

est = estimate(u, u, prob)
err = norms(u, prob, exact=True)
print(f"eta = {est.eta_global:.4f} (element part {est.eta_R:.4f}, jump part {est.eta_J:.4f})")
print(f"|u - u_h|_1 = {err.h1_semi:.4f}, effectivity {est.eta_global / err.h1_semi:.2f}")

marked = mark(est, 0.25)
ind = est.element_indicators()
print(f"marked {len(marked)} of {V.mesh.nt} elements, capturing {marked.captured_fraction:.1%}")
print("largest indicators:", np.round(np.sort(ind)[::-1][:5], 5))

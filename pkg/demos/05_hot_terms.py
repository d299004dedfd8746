"""Higher-order terms along an adaptive run.

The h.o.t. sums are zeta-weighted L2 errors; they should fall off faster
than the H1 error and stay well below it.
"""
from atgfem.algorithms import RunConfig, run

h = run(RunConfig(problem="test1", algorithm="atg-mild", theta=0.15, zeta_tilde=0.5))
print(f"{'k':>3} {'dofs':>6} {'H1 err':>10} {'hot1':>10} {'hot2':>10} {'hot3':>10} {'hot/H1':>7}")
for r in h.records[1:]:
    print(f"{r.k:3d} {r.n_dofs:6d} {r.h1_semi_err:10.3e} {r.hot1:10.3e} {r.hot2:10.3e} "
          f"{r.hot3:10.3e} {r.hot / r.h1_semi_err:7.4f}")

"""Newton-based two-grid variants on the strongly nonlinear Test 2.

One Newton step about the prolongated coarse solution (atg-newton1), two
steps (atg-newton2) and the frozen solve followed by a Newton correction
(atg-mild-newton), next to the plain frozen solve.
"""
from atgfem.algorithms import RunConfig, run

algs = ("atg-mild", "atg-mild-newton", "atg-newton1", "atg-newton2")
runs = {a: run(RunConfig(problem="test2", algorithm=a, max_levels=8)) for a in algs}

print("k    dofs  " + "  ".join(f"{a:>15}" for a in algs))
for k in range(9):
    d = runs[algs[0]].records[k].n_dofs
    print(f"{k:<3d} {d:6d}  " + "  ".join(f"{runs[a].records[k].h1_semi_err:15.5e}" for a in algs))

print("\nNewton residual norms per level, atg-newton2:")
for rec in runs["atg-newton2"].records[1:4]:
    print(f"  k={rec.k}: " + " -> ".join(f"{v:.1e}" for v in rec.residual_norms))

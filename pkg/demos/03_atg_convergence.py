"""Adaptive two-grid against the regular adaptive loop on Test 1.

The two-grid variant only solves a frozen-coefficient linear problem on each
finer level; the regular loop runs Newton to convergence.  Their errors
should track each other level by level.
"""
from atgfem.algorithms import RunConfig, convergence_slope, run

hist = {alg: run(RunConfig(problem="test1", algorithm=alg, theta=0.25))
        for alg in ("atg-mild", "regular-adaptive")}

print(f"{'k':>3} {'dofs':>6} {'atg H1':>10} {'regular H1':>11} {'atg eta':>9}")
a, r = hist["atg-mild"].records, hist["regular-adaptive"].records
for ra, rr in zip(a, r):
    print(f"{ra.k:3d} {ra.n_dofs:6d} {ra.h1_semi_err:10.4e} {rr.h1_semi_err:11.4e} {ra.eta:9.4e}")

for alg, h in hist.items():
    print(f"{alg}: last-6 slope H1 {convergence_slope(h):.3f}, eta {convergence_slope(h, column='eta'):.3f}")

"""Newest-vertex bisection on a small mesh.

Mark one corner triangle of a 4x4 grid, bisect it, and watch the closure
spread to neighbours until the mesh is conforming again.
"""
from atgfem.mesh import bisect_marked, build_initial_uniform, conformity_check, sizes

mesh = build_initial_uniform(4)
print(f"start: {mesh.nt} triangles, {mesh.nv} vertices")

for step in range(5):
    mesh, ref = bisect_marked(mesh, [0])
    hk, _ = sizes(mesh)
    print(f"step {step + 1}: {len(ref)} bisections (1 marked), {mesh.nt} triangles, "
          f"min H_K {hk.min():.4f}, conforming: {conformity_check(mesh, domain_area=4.0).ok}")

# every triangle keeps one of the shapes of the initial mesh
print("generations present:", sorted(set(mesh.generation.tolist())))

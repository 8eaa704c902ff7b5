"""
Comparison, shaking and regularity
==================================

Ordered data give ordered solutions, and the terminal gap never grows.
Shaking the coefficients by eps moves the solution by O(eps).
"""

# %%
import numpy as np

from bellman_fd import MeshSpec, build_mesh, catalog, check_comparison, measure_regularity, solve_parabolic
from bellman_fd.perturbation import ShakeSpec, circle_shifts, shake_gap

p, _ = catalog("twocontrol_diffusion")
mesh = build_mesh(MeshSpec(T=1.0, tau=0.05, h=0.05, directions=[[1.0]], index_radius=80))

# %% raise f by one and g by a quarter
f0, g0 = p.f, p.g
upper = p.replace(f=lambda a, t, x: f0(a, t, x) + 1.0, g=lambda x: g0(x) + 0.25)
print(check_comparison(p, upper, mesh).to_text())

u = solve_parabolic(p, mesh).values
v = solve_parabolic(p.replace(g=lambda x: g0(x) + 0.25), mesh).values
print("terminal shift 0.25 moves the field by", (v - u).min(), "to", (v - u).max())

# %% [markdown]
# Shaking: evaluate the coefficients at x + eps*y for y on a small set and
# take the sup over the enlarged control set. gap/eps should stay flat.

# %%
heat, _ = catalog("heat1d")
ref = solve_parabolic(heat, mesh)
for eps in (0.2, 0.1, 0.05):
    gap = shake_gap(heat, mesh, ShakeSpec(eps, circle_shifts(8, dim=1)), reference=ref)
    print(f"eps={eps:<5} gap={gap:.4e} gap/eps={gap / eps:.4f}")

# %% the Lipschitz and Hoelder statistics do not drift under refinement
for h in (0.1, 0.05, 0.025):
    m = build_mesh(MeshSpec(T=1.0, tau=h * h, h=h, directions=[[1.0]], index_radius=int(round(6 / h))))
    r = measure_regularity(solve_parabolic(heat, m))
    print(f"h={h:<6} lipschitz_x={r.lipschitz_x:.4f} holder_t={r.holder_t:.4f}")

"""
Stationary problems: discounted value iteration and optimal stopping
====================================================================
"""

# %%
import numpy as np

from bellman_fd import EllipticConfig, MeshSpec, build_mesh, catalog, check_obstacle_complementarity, solve_elliptic
from bellman_fd.diagnostics import elliptic_horizon_gaps

p, _ = catalog("twocontrol_diffusion", lam=1.0)
mesh = build_mesh(MeshSpec(T=1.0, tau=0.05, h=0.1, directions=[[1.0]], index_radius=80))

# %% two routes to the same fixed point
vi = solve_elliptic(p, mesh, EllipticConfig(mode="value_iteration", tol=1e-8))
lh = solve_elliptic(p, mesh, EllipticConfig(mode="long_horizon", tol=1e-8))
print("value iteration sweeps:", vi.iterations, " marching horizon:", lh.horizon)
print("max difference:", np.abs(vi.u - lh.u).max())

# %% finite-horizon solves approach the stationary one geometrically
for T, gap in zip([2, 4, 8, 16], elliptic_horizon_gaps(p, mesh, [2, 4, 8, 16])):
    print(f"T={T:<3} gap={gap:.3e}")

# %% [markdown]
# Optimal stopping with obstacle 1 - x^2, written as a penalized two-control
# problem. The obstacle residual is the penalty error and halves with M.

# %%
m = build_mesh(MeshSpec(T=1.0, tau=0.1, h=0.05, directions=[[1.0]], index_radius=40))
for M in (250.0, 500.0, 1000.0):
    obs, _ = catalog("obstacle1d", M=M)
    u = solve_elliptic(obs, m, EllipticConfig(tol=1e-10)).u
    r = check_obstacle_complementarity(u, obs.meta["g_obs"], m, M=M)
    print(f"M={M:<7g} operator={r.operator:.1e} obstacle={r.obstacle:.3e} free={r.free:.1e}")

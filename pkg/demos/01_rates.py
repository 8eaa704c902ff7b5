"""
Convergence rates on two closed-form problems
=============================================

A smooth problem and a Lipschitz one, solved on a geometric mesh family.
The smooth heat problem should show second order in h when tau = h^2.
The kinked transport problem sits near order one half.
"""

# %%
import numpy as np

from bellman_fd import ExteriorPolicy, MeshSpec, SolverConfig, catalog, convergence_study

hs = [0.2, 0.1, 0.05, 0.025]


def family(rule, width):
    # same physical box for every mesh
    return [MeshSpec(T=1.0, tau=rule(h), h=h, directions=[[1.0]], index_radius=int(round(width / h))) for h in hs]


# %% [markdown]
# heat1d has u = exp(-(T-t)/2) cos x. Feeding that solution in as the exterior
# value removes the box-edge error, so what remains is the scheme itself.

# %%
heat, heat_exact = catalog("heat1d")
cfg = SolverConfig(exterior=ExteriorPolicy.dirichlet(lambda t, x: heat_exact(t, x, 1.0)))
rep = convergence_study(heat, heat_exact, family(lambda h: h * h, 6.0), cfg)
print(rep.to_text())

# %% [markdown]
# transport_kink starts from g = -|x| and moves with unit speed either way.
# The kink at the origin caps the rate.

# %%
kink, kink_exact = catalog("transport_kink")
rep = convergence_study(kink, kink_exact, family(lambda h: h, 4.0))
print(rep.to_text())

# %%
# the same family through the semidiscrete solver
rep = convergence_study(kink, kink_exact, family(lambda h: h, 4.0), scheme="semidiscrete")
print("semidiscrete fitted order", round(rep.fitted_order, 3))
print("pairwise", np.round(rep.pairwise_orders, 3))

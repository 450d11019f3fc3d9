"""
Solving a sparse control problem and reading off its structure
===============================================================

We minimise a tracking cost for ``y_t - Laplace y + y^3 = u`` on (0, 1)
with an L1 penalty and the box ``[-1, 1]``.  The target is manufactured
so that a known control is stationary, which lets us watch proximal
gradient find it from zero.
"""

import numpy as np

from parabolic_ssc import classify, multiplier_lambda, proximal_gradient, solve_adjoint, solve_state
from parabolic_ssc.instances import sparse_cubic

inst = sparse_cubic(n_x=31, n_t=32, mu=0.1)
spec = inst.spec

# %%
# Proximal gradient from the zero control.  Each step is a prox of the
# L1 term clamped to the box, with backtracking on the step size.
u, trace = proximal_gradient(spec, spec.grid.zeros())
print(f"converged={trace.converged} after {trace.iterations} iterations, J={trace.J[-1]:.6e}")
print(f"max |u - u_bar| = {np.abs(u.values - inst.ubar.values).max():.2e}")

# %%
# First-order structure.  Where the adjoint exceeds ``mu`` in magnitude the
# control sits on a bound; where it is below, the control vanishes.
phi = solve_adjoint(spec, solve_state(spec, u))
cl = classify(u, phi, spec.mu, spec.alpha, spec.beta)
for name, count in cl.counts.items():
    print(f"{name:18s} {count:5d}")
print("structure violations:", cl.violations)

# %%
# The multiplier of the L1 term is ``-phi / mu`` clipped to [-1, 1]; it
# equals the sign of the control wherever the control is nonzero.
lam = multiplier_lambda(phi, spec.mu).values
nz = u.values != 0
print("max |lambda| =", np.abs(lam).max())
print("lambda == sign(u) on the support:", bool(np.all(lam[nz] == np.sign(u.values[nz]))))

"""
Checking the discretization: manufactured solutions and the adjoint
===================================================================

The state solver should converge at second order in space and first
order in time, and the discrete adjoint should be the exact transpose
of the linearized solver, so that the reduced gradient matches finite
differences to rounding.
"""

import numpy as np

from parabolic_ssc import SpaceTimeGrid, inner_Q, norm, riesz_gradient_F, solve_state
from parabolic_ssc.functional import tracking_value
from parabolic_ssc.grid import smooth_random_field
from parabolic_ssc.instances import manufactured_state, tracking_problem
from parabolic_ssc.problem import cubic

# %%
# Spatial order: ``y = t sin(pi x)`` is linear in time, so implicit Euler
# is exact in t and only the space error remains.
for n in (20, 40, 80, 160):
    spec, u, y = manufactured_state(SpaceTimeGrid(1, n, 50, 1.0), cubic(), time_power=1)
    print(f"n_x={n:4d}  max error {norm(solve_state(spec, u) - y, 'Linf'):.3e}")

# %%
# Temporal order: ``y = t^2 sin(pi x)`` on a fine spatial grid.
for m in (10, 20, 40, 80):
    spec, u, y = manufactured_state(SpaceTimeGrid(1, 200, m, 1.0), cubic(), time_power=2)
    print(f"n_t={m:4d}  max error {norm(solve_state(spec, u) - y, 'Linf'):.3e}")

# %%
# Gradient check against central differences.
rng = np.random.default_rng(0)
grid = SpaceTimeGrid(1, 30, 20, 1.0)
spec = tracking_problem(grid, cubic())
u, v = 0.3 * smooth_random_field(grid, rng), smooth_random_field(grid, rng)
eps = 1e-5
fd = (tracking_value(spec, solve_state(spec, u + v * eps)) - tracking_value(spec, solve_state(spec, u - v * eps))) / (2 * eps)
adj = inner_Q(riesz_gradient_F(spec, u), v)
print(f"adjoint {adj:.12e}  finite difference {fd:.12e}  relative gap {abs(fd - adj) / abs(adj):.1e}")

"""Cost ``J = F + mu j``, its gradient, directional derivatives and ``F''``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Field, inner_Omega, inner_Q, norm
from .pde import LinearizedSolver, SolverOptions, solve_adjoint, solve_state
from .problem import ProblemSpec, eval_f, eval_L

TOL_U0 = 1e-12


@dataclass(frozen=True)
class CostBreakdown:
    F_value: float
    j_value: float
    J_value: float
    box_violation: float = 0.0


def tracking_value(spec: ProblemSpec, y: Field) -> float:
    """``F`` evaluated from a state."""
    r = y - spec.cost.y_d
    val = 0.5 * norm(r, "L2", "Q") ** 2
    if spec.nu_omega:
        val += 0.5 * norm(y.terminal() - spec.y_omega, "L2", "OmegaT") ** 2
    return val


def box_violation(spec: ProblemSpec, u: Field) -> float:
    """Largest distance of a nodal value from ``[alpha, beta]``."""
    v = u.values
    return float(max(np.max(spec.alpha - v, initial=0.0), np.max(v - spec.beta, initial=0.0), 0.0))


def eval_cost(spec: ProblemSpec, u: Field, opts: SolverOptions | None = None, y: Field | None = None) -> CostBreakdown:
    """Evaluate ``F``, ``j`` and ``J``; box violations are reported, not rejected."""
    y = solve_state(spec, u, opts) if y is None else y
    F = tracking_value(spec, y)
    j = norm(u, "L1", "Q")
    return CostBreakdown(F, j, F + spec.mu * j, box_violation(spec, u))


def riesz_gradient_F(spec: ProblemSpec, u: Field, opts: SolverOptions | None = None) -> Field:
    """Adjoint state ``phi_u``; ``F'(u) v = inner_Q(phi_u, v)``."""
    return solve_adjoint(spec, solve_state(spec, u, opts), opts)


def dirderiv_j(u: Field, v: Field, tol_u0: float = TOL_U0) -> float:
    """One-sided derivative of ``||.||_{L1(Q)}`` at ``u`` along ``v``."""
    uu, vv = u.values, v.values
    pos, neg = uu > tol_u0, uu < -tol_u0
    zero = ~(pos | neg)
    integrand = np.where(pos, vv, 0.0) - np.where(neg, vv, 0.0) + np.where(zero, np.abs(vv), 0.0)
    return float(u.grid.weight * integrand.sum())


def dirderiv_J(
    spec: ProblemSpec,
    u: Field,
    v: Field,
    opts: SolverOptions | None = None,
    phi: Field | None = None,
) -> float:
    """``J'(u; v) = F'(u) v + mu j'(u; v)``; pass ``phi`` to skip the solves."""
    phi = riesz_gradient_F(spec, u, opts) if phi is None else phi
    val = inner_Q(phi, v)
    if spec.mu:
        val += spec.mu * dirderiv_j(u, v)
    return val


def curvature_weight(spec: ProblemSpec, y: Field, phi: Field) -> np.ndarray:
    """Pointwise ``d2L/dy2 - phi d2f/dy2`` at the state."""
    return eval_L(spec.cost, y.values, spec.cost.y_d.values, 2) - phi.values * eval_f(spec.f, y.values, 2)


def second_variation(spec: ProblemSpec, y: Field, phi: Field, z1: Field, z2: Field, weight=None) -> float:
    """``F''(u)(v1, v2)`` from the state, adjoint and the two sensitivities."""
    if weight is None:
        weight = curvature_weight(spec, y, phi)
    val = float(spec.grid.weight * np.sum(weight * z1.values * z2.values))
    if spec.nu_omega:
        # tracking terminal integrand: d2 L_Omega / dy2 = 1
        val += inner_Omega(z1.terminal(), z2.terminal())
    return val


def hess_F_quadform(
    spec: ProblemSpec, u: Field, v1: Field, v2: Field, opts: SolverOptions | None = None
) -> float:
    """Second derivative of ``F`` at ``u`` applied to ``(v1, v2)``."""
    y = solve_state(spec, u, opts)
    lin = LinearizedSolver(spec, y)
    phi = solve_adjoint(spec, y, opts, solver=lin)
    z1 = lin.forward(v1)
    z2 = z1 if v2 is v1 else lin.forward(v2)
    return second_variation(spec, y, phi, z1, z2)


def state_metric_sq(spec: ProblemSpec, z: Field) -> float:
    """``||z||^2_{L2(Q)} + nu ||z(T)||^2_{L2(Omega)}``."""
    val = norm(z, "L2", "Q") ** 2
    if spec.nu_omega:
        val += norm(z, "L2", "OmegaT") ** 2
    return val

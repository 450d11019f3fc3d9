"""Ready-made problem instances used by the tests, demos and CLI.

Every stationary instance is manufactured: the adjoint is prescribed, the
control follows the bang/sparse rules for it, and the tracking targets are
solved for so that the triple is an exact discrete stationary point.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidInputError
from .grid import Field, SpaceTimeGrid
from .problem import (
    CostIntegrands,
    Exponential,
    Nonlinearity,
    OperatorA,
    ProblemSpec,
    StationaryInstance,
    Zero,
    build_stationary_instance,
    cubic,
    eval_f,
)


def _bump(x: np.ndarray) -> np.ndarray:
    """Product of ``sin(pi x_j)`` over the spatial axes, shape ``(N,)``."""
    return np.prod(np.sin(np.pi * x), axis=1)


def _wave(x: np.ndarray) -> np.ndarray:
    """``sin(2 pi x_0)`` times the bump of the remaining axes."""
    out = np.sin(2 * np.pi * x[:, 0])
    if x.shape[1] > 1:
        out = out * np.sin(np.pi * x[:, 1])
    return out


def convex_baseline(n_x: int = 31, n_t: int = 32, d: int = 1, T: float = 1.0) -> StationaryInstance:
    """Linear state, ``mu = 0``: bang-bang where the adjoint is nonzero, interior on a plateau.

    The adjoint ``(T - t) * shrink(sin(2 pi x))`` vanishes on a band around
    the nodal lines of the wave, so the control is free there and the
    critical cone is nontrivial.
    """
    grid = SpaceTimeGrid(d, n_x, n_t, T)

    def phibar(x, t):
        w = _wave(x)
        return 0.5 * (T - t) * np.sign(w) * np.maximum(np.abs(w) - 0.5, 0.0)

    return build_stationary_instance(grid, OperatorA.laplacian(d), Zero(), 0.0, -1.0, 1.0, phibar)


def sparse_cubic(
    n_x: int = 31, n_t: int = 32, d: int = 1, T: float = 1.0, mu: float = 0.1, nu_omega: int = 0
) -> StationaryInstance:
    """``f = y^3`` with sparsity: upper-bound, sparse and biactive plateaus.

    The adjoint is ``mu * clip(profile, -2.5, 1)``, so it equals ``mu``
    exactly on a region where the control is zero.  That region is biactive
    and carries the critical cone.
    """
    grid = SpaceTimeGrid(d, n_x, n_t, T)

    def phibar(x, t):
        profile = 3.9 * np.cos(np.pi * t / T) * _bump(x) * _wave(x)
        return mu * np.clip(profile, -2.5, 1.0)

    return build_stationary_instance(
        grid, OperatorA.laplacian(d), cubic(), mu, -1.0, 1.0, phibar, nu_omega=nu_omega
    )


def indefinite_exponential(
    n_x: int = 31, n_t: int = 32, d: int = 1, T: float = 1.0, mu: float = 2.0
) -> StationaryInstance:
    """Stationary point where the second-order condition fails.

    With ``f = exp`` the curvature weight is ``1 - phibar exp(ybar)``.  The
    adjoint sits on ``mu = 2`` over a large biactive plateau, so the weight
    is negative exactly where the critical directions live.
    """
    grid = SpaceTimeGrid(d, n_x, n_t, T)

    def phibar(x, t):
        return mu * np.minimum(1.0, 1.5 * _bump(x)) + 0.0 * t

    return build_stationary_instance(grid, OperatorA.laplacian(d), Exponential(1.0), mu, -1.0, 1.0, phibar)


def tracking_problem(
    grid: SpaceTimeGrid,
    f: Nonlinearity,
    target_control: Field | None = None,
    mu: float = 0.0,
    alpha: float = -1.0,
    beta: float = 1.0,
) -> ProblemSpec:
    """Problem whose target ``y_d`` is the state of ``target_control``.

    With ``mu = 0`` and an interior target control the minimum value is
    zero and is attained at that control.
    """
    from .pde import solve_state

    if target_control is None:
        target_control = grid.evaluate(lambda x, t: 0.5 * _bump(x) * np.cos(np.pi * t / grid.T))
    A = OperatorA.laplacian(grid.d)
    probe = ProblemSpec(grid, A, f, CostIntegrands(grid.zeros()), alpha, beta, mu)
    y_d = solve_state(probe, target_control)
    return probe.replace(cost=CostIntegrands(y_d))


def manufactured_state(grid: SpaceTimeGrid, f: Nonlinearity, time_power: int = 1):
    """Control reproducing ``y* = t^p prod sin(pi x_j)`` for ``y_t - Laplace y + f(y) = u``.

    Returns ``(spec, u, y_exact)``.  For ``p = 1`` the exact solution is
    linear in time, so implicit Euler adds no time error and the study
    isolates the spatial error; ``p = 2`` exposes the first-order time error.
    """
    if time_power < 1:
        raise InvalidInputError("time_power must be at least 1")
    x = grid.coordinates()
    t = grid.times[:, None]
    s = _bump(x)[None, :]
    p = time_power
    y = t**p * s
    u = p * t ** (p - 1) * s + grid.d * np.pi**2 * y + eval_f(f, y, 0)
    # the box only has to contain the forcing
    alpha, beta = float(u.min()) - 1.0, float(u.max()) + 1.0
    spec = ProblemSpec(grid, OperatorA.laplacian(grid.d), f, CostIntegrands(grid.zeros()), alpha, beta)
    return spec, Field(grid, u), Field(grid, y)


STANDARD = {
    "convex_baseline": convex_baseline,
    "sparse_cubic": sparse_cubic,
    "indefinite_exponential": indefinite_exponential,
}

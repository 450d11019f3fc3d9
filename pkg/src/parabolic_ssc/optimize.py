"""Proximal gradient for ``min F(u) + mu ||u||_1`` over the control box."""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .functional import tracking_value
from .grid import Field, inner_Q, norm, smooth_random_field
from .pde import SolverOptions, solve_adjoint, solve_state
from .problem import ProblemSpec


@dataclass(frozen=True)
class OptimizeOptions:
    s0: float = 1.0
    backtrack: float = 0.5
    sufficient_decrease: float = 1e-4
    max_iters: int = 2000
    stop_tol: float = 1e-8
    seed: int = 0
    max_step: float = 1e4

    def __post_init__(self):
        if not (self.s0 > 0 and self.sufficient_decrease > 0 and self.stop_tol > 0 and self.max_iters > 0):
            raise InvalidInputError("optimizer options must be positive")
        if not 0 < self.backtrack < 1:
            raise InvalidInputError("backtrack factor must lie in (0, 1)")


@dataclass
class OptimizeTrace:
    J: list = field(default_factory=list)
    residual: list = field(default_factory=list)
    step: list = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.J)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "J", "residual", "step"])
            for i, row in enumerate(zip(self.J, self.residual, self.step)):
                w.writerow([i, *(repr(float(x)) for x in row)])


def prox_box_l1(w, s: float, mu: float, alpha: float, beta: float):
    """Pointwise minimiser of ``(p - w)^2 / 2 + s mu |p|`` over ``[alpha, beta]``.

    Accepts a :class:`Field` or an array.  Entries with ``|w| <= s mu`` come
    out as exact zeros whenever zero is admissible.
    """
    if isinstance(w, Field):
        return w.with_values(prox_box_l1(w.values, s, mu, alpha, beta))
    w = np.asarray(w, dtype=float)
    t = s * mu
    soft = np.sign(w) * np.maximum(np.abs(w) - t, 0.0)
    return np.clip(soft, alpha, beta)


def stationarity_residual(
    spec: ProblemSpec, u: Field, s: float = 1.0, opts: SolverOptions | None = None, phi: Field | None = None
) -> float:
    """``||u - prox(u - s phi_u)||_{L2(Q)}``; zero exactly at stationary points."""
    if not s > 0:
        raise InvalidInputError("step must be positive")
    if phi is None:
        phi = solve_adjoint(spec, solve_state(spec, u, opts), opts)
    return norm(u - prox_box_l1(u - s * phi, s, spec.mu, spec.alpha, spec.beta), "L2", "Q")


def proximal_gradient(
    spec: ProblemSpec,
    u0: Field,
    opts: OptimizeOptions | None = None,
    solver_opts: SolverOptions | None = None,
):
    """Minimise ``J`` from ``u0`` (clamped into the box).

    The step is backtracked until the quadratic upper model of ``F`` holds
    at the trial point and ``J`` does not increase; after an accepted step
    the next trial step is enlarged by one backtracking factor.

    Returns
    -------
    u : Field
        Final (best) iterate.
    trace : OptimizeTrace
        Per-iteration ``J``, fixed-point residual and step; ``converged``
        is False when ``max_iters`` was reached.
    """
    opts = opts or OptimizeOptions()
    mu, a, b = spec.mu, spec.alpha, spec.beta
    u = u0.with_values(np.clip(u0.values, a, b))
    y = solve_state(spec, u, solver_opts)
    F = tracking_value(spec, y)
    J = F + mu * norm(u, "L1", "Q")
    s = opts.s0
    trace = OptimizeTrace()
    c = opts.sufficient_decrease

    for _ in range(opts.max_iters):
        phi = solve_adjoint(spec, y, solver_opts)
        while True:
            u_new = prox_box_l1(u - s * phi, s, mu, a, b)
            d = u_new - u
            dd = norm(d, "L2", "Q") ** 2
            if dd == 0.0:
                trace.J.append(J)
                trace.residual.append(0.0)
                trace.step.append(s)
                trace.converged = True
                return u, trace
            y_new = solve_state(spec, u_new, solver_opts)
            F_new = tracking_value(spec, y_new)
            J_new = F_new + mu * norm(u_new, "L1", "Q")
            model = F + inner_Q(phi, d) + (1.0 - c) * dd / (2.0 * s)
            if F_new <= model and J_new <= J:
                break
            s *= opts.backtrack
            if s < 1e-16:
                # no decrease at rounding level: the iterate is as good as it gets
                res = stationarity_residual(spec, u, opts.s0, phi=phi) / opts.s0
                trace.converged = bool(res <= opts.stop_tol)
                return u, trace
        residual = np.sqrt(dd) / s
        trace.J.append(J_new)
        trace.residual.append(residual)
        trace.step.append(s)
        u, y, F, J = u_new, y_new, F_new, J_new
        if residual <= opts.stop_tol:
            trace.converged = True
            break
        s = min(s / opts.backtrack, opts.max_step)
    return u, trace


@dataclass
class LocalSolution:
    seed: int
    u: Field
    J: float
    residual: float
    trace: OptimizeTrace


def multistart(
    spec: ProblemSpec,
    seeds,
    opts: OptimizeOptions | None = None,
    solver_opts: SolverOptions | None = None,
    workers: int = 1,
) -> list[LocalSolution]:
    """Proximal gradient from random smooth admissible starts, one per seed.

    Results are sorted by ``(J, seed)``; no global optimality is implied.
    """
    opts = opts or OptimizeOptions()

    def run(seed):
        rng = np.random.default_rng(seed)
        r = smooth_random_field(spec.grid, rng, noise_fraction=0.0)
        mid, half = 0.5 * (spec.alpha + spec.beta), 0.5 * (spec.beta - spec.alpha)
        u, trace = proximal_gradient(spec, mid + half * r, opts, solver_opts)
        res = trace.residual[-1] if trace.residual else float("nan")
        return LocalSolution(int(seed), u, trace.J[-1] if trace.J else float("nan"), res, trace)

    seeds = list(seeds)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            found = list(pool.map(run, seeds))
    else:
        found = [run(sd) for sd in seeds]
    return sorted(found, key=lambda r: (r.J, r.seed))

"""Implicit Euler solvers for the state, linearized, adjoint and backward equations.

One step of the state equation solves

    (I + dt A_h) y^k + dt f(y^k) = y^{k-1} + dt u^k

by Newton.  The linearized equation uses the step matrices
``M_k = I + dt A_h + dt diag(f'(y^k))``; the adjoint and backward sweeps use
their transposes, so the discrete duality identities hold to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg.lapack import dgttrf as _gttrf, dgttrs as _gttrs
from scipy.sparse.linalg import splu

from .errors import InvalidInputError, NonconvergenceError, SingularStepError
from .grid import SPACE_TIME, TERMINAL, Field, SpaceTimeGrid
from .problem import OperatorA, ProblemSpec, Zero, eval_f

_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class SolverOptions:
    newton_tol: float = 1e-12
    newton_max_iter: int = 50
    max_halvings: int = 10

    def __post_init__(self):
        if not self.newton_tol > 0:
            raise InvalidInputError("newton_tol must be positive")
        if self.newton_max_iter < 1:
            raise InvalidInputError("newton_max_iter must be at least 1")


DEFAULT_OPTIONS = SolverOptions()


def _difference_matrices(n: int, h: float):
    ones = np.ones(n)
    d2 = sp.diags([ones[:-1], -2 * ones, ones[:-1]], [-1, 0, 1], format="csr") / h**2
    d1 = sp.diags([-ones[:-1], ones[:-1]], [-1, 1], format="csr") / (2 * h)
    return d2, d1


def assemble_operator(grid: SpaceTimeGrid, A: OperatorA) -> sp.csr_matrix:
    """Central difference matrix of ``-div(a grad) + b . grad`` on interior nodes."""
    d2, d1 = _difference_matrices(grid.n_x, grid.h)
    a, b = A.a, A.b
    if grid.d == 1:
        return (-a[0, 0] * d2 + b[0] * d1).tocsr()
    eye = sp.identity(grid.n_x, format="csr")
    dxx, dyy = sp.kron(d2, eye), sp.kron(eye, d2)
    dx, dy = sp.kron(d1, eye), sp.kron(eye, d1)
    mixed = sp.kron(d1, d1)
    op = -(a[0, 0] * dxx + a[1, 1] * dyy + (a[0, 1] + a[1, 0]) * mixed) + b[0] * dx + b[1] * dy
    return op.tocsr()


def step_matrix(spec: ProblemSpec) -> sp.csc_matrix:
    """``I + dt A_h``."""
    g = spec.grid
    return (sp.identity(g.n_space, format="csr") + g.dt * assemble_operator(g, spec.A)).tocsc()


class _Tridiagonal:
    def __init__(self, lapack_factors):
        self._f = lapack_factors

    def solve(self, b, trans="N"):
        dl2, d2, du1, du2, ipiv = self._f
        x, info = _gttrs(dl2, d2, du1, du2, ipiv, b, trans=trans)
        return x


class StepSystem:
    """``K = I + dt A_h`` plus cheap factorization of ``K + diag(shift)``.

    One dimension uses the LAPACK tridiagonal routines; two dimensions reuse
    the CSC pattern of ``K`` and hand the shifted matrix to SuperLU.
    """

    def __init__(self, spec: ProblemSpec):
        self.K = step_matrix(spec)
        self._Kcsr = self.K.tocsr()
        self.n = self.K.shape[0]
        if spec.grid.d == 1:
            self._tri = (
                self.K.diagonal(-1).copy(),
                self.K.diagonal(0).copy(),
                self.K.diagonal(1).copy(),
            )
        else:
            self._tri = None
            K = self.K.copy()
            K.sort_indices()
            self._pattern = K
            diag_pos = np.empty(self.n, dtype=np.int64)
            for j in range(self.n):
                lo, hi = K.indptr[j], K.indptr[j + 1]
                hit = np.nonzero(K.indices[lo:hi] == j)[0]
                diag_pos[j] = lo + hit[0]
            self._diag_pos = diag_pos

    def matvec(self, Y):
        return self._Kcsr @ Y

    def factor(self, shift=None):
        if self._tri is not None:
            dl, d, du = self._tri
            dd = d if shift is None else d + shift
            dl2, d2, du1, du2, ipiv, info = _gttrf(dl, dd, du)
            if info != 0:
                raise SingularStepError(f"tridiagonal step matrix is singular (info={info})")
            return _Tridiagonal((dl2, d2, du1, du2, ipiv))
        if shift is None:
            return _factor(self._pattern)
        data = self._pattern.data.copy()
        data[self._diag_pos] += shift
        mat = sp.csc_matrix((data, self._pattern.indices, self._pattern.indptr), shape=self._pattern.shape)
        return _factor(mat)


def _factor(mat):
    try:
        return splu(sp.csc_matrix(mat))
    except RuntimeError as exc:
        raise SingularStepError(str(exc)) from exc


def _check_field(spec: ProblemSpec, fld: Field, name: str, kind: str = SPACE_TIME):
    if fld.grid != spec.grid:
        raise InvalidInputError(f"{name} lives on a different grid")
    if fld.kind != kind:
        raise InvalidInputError(f"{name} must be a {kind} field")


class LinearizedSolver:
    """Factorized step matrices of the linearization at a fixed state.

    Build one per state and reuse it for many directions.  Instances hold
    SuperLU factors and are not meant to be shared between threads.
    """

    def __init__(self, spec: ProblemSpec, y: Field, system: StepSystem | None = None):
        _check_field(spec, y, "state")
        self.spec = spec
        self.grid = spec.grid
        system = system or StepSystem(spec)
        dt = self.grid.dt
        if isinstance(spec.f, Zero):
            self._factors = [system.factor()] * self.grid.n_t
        else:
            fy = eval_f(spec.f, y.values, 1)
            self._factors = [system.factor(dt * fy[k]) for k in range(self.grid.n_t)]

    def forward(self, v: Field) -> Field:
        """``z`` with ``M_k z^k = z^{k-1} + dt v^k``, ``z^0 = 0``."""
        _check_field(self.spec, v, "direction")
        dt = self.grid.dt
        z = np.empty(self.grid.shape)
        prev = np.zeros(self.grid.n_space)
        for k, lu in enumerate(self._factors):
            prev = lu.solve(prev + dt * v.values[k])
            z[k] = prev
        return Field(self.grid, z)

    def backward(self, source=None, terminal=None) -> np.ndarray:
        """``p`` with ``M_k^T p^k = p^{k+1} + source^k (+ terminal at k = n_t)``."""
        n_t, n = self.grid.shape
        p = np.empty((n_t, n))
        nxt = np.zeros(n)
        for k in range(n_t - 1, -1, -1):
            rhs = nxt.copy()
            if source is not None:
                rhs += source[k]
            if terminal is not None and k == n_t - 1:
                rhs += terminal
            nxt = self._factors[k].solve(rhs, trans="T")
            p[k] = nxt
        return p


def solve_state(
    spec: ProblemSpec,
    u: Field,
    opts: SolverOptions | None = None,
    history: list | None = None,
) -> Field:
    """Solve the semilinear state equation with control ``u``.

    If ``history`` is a list, one list of Newton residual norms per time step
    is appended to it.
    """
    opts = opts or DEFAULT_OPTIONS
    _check_field(spec, u, "control")
    g = spec.grid
    dt = g.dt
    system = StepSystem(spec)
    f = spec.f
    y = np.empty(g.shape)
    prev = spec.y0.values.copy()

    if isinstance(f, Zero):
        lu = system.factor()
        for k in range(g.n_t):
            rhs = prev + dt * u.values[k]
            prev = lu.solve(rhs)
            y[k] = prev
            if history is not None:
                history.append([float(np.abs(system.matvec(prev) - rhs).max(initial=0.0))])
        return Field(g, y)

    for k in range(g.n_t):
        rhs = prev + dt * u.values[k]
        Y = prev.copy()

        def residual(Yv):
            return system.matvec(Yv) + dt * f.value(Yv) - rhs

        r = residual(Y)
        rn = float(np.abs(r).max(initial=0.0))
        trail = [rn]
        converged = rn <= opts.newton_tol
        for _ in range(opts.newton_max_iter):
            if converged:
                break
            dY = system.factor(dt * f.d1(Y)).solve(-r)
            lam = 1.0
            for _ in range(opts.max_halvings + 1):
                Yn = Y + lam * dY
                r_new = residual(Yn)
                rn_new = float(np.abs(r_new).max(initial=0.0))
                if rn_new < rn:
                    break
                lam *= 0.5
            step = lam * float(np.abs(dY).max(initial=0.0))
            Y, r, rn = Yn, r_new, rn_new
            trail.append(rn)
            # rounding floor: the update no longer changes the iterate
            converged = rn <= opts.newton_tol or step <= 8 * _EPS * (1.0 + float(np.abs(Y).max()))
        if not converged:
            raise NonconvergenceError(k + 1, rn)
        if history is not None:
            history.append(trail)
        y[k] = Y
        prev = Y
    return Field(g, y)


def solve_linearized(spec: ProblemSpec, y: Field, v: Field, opts: SolverOptions | None = None) -> Field:
    """Derivative of the control-to-state map at state ``y`` in direction ``v``."""
    return LinearizedSolver(spec, y).forward(v)


def adjoint_sources(spec: ProblemSpec, y: Field):
    """Distributed source and terminal injection of the discrete adjoint."""
    _check_field(spec, y, "state")
    source = spec.grid.dt * (y.values - spec.cost.y_d.values)
    terminal = None
    if spec.nu_omega:
        terminal = y.values[-1] - spec.y_omega.values
    return source, terminal


def solve_adjoint(spec: ProblemSpec, y: Field, opts: SolverOptions | None = None, solver=None) -> Field:
    """Discrete adjoint state: the exact transpose of the linearized sweep."""
    solver = solver or LinearizedSolver(spec, y)
    source, terminal = adjoint_sources(spec, y)
    return Field(spec.grid, solver.backward(source, terminal))


def solve_backward(
    spec: ProblemSpec, y: Field, terminal: Field, opts: SolverOptions | None = None, solver=None
) -> Field:
    """Homogeneous backward sweep from a prescribed terminal slice."""
    _check_field(spec, terminal, "terminal datum", TERMINAL)
    solver = solver or LinearizedSolver(spec, y)
    return Field(spec.grid, solver.backward(None, terminal.values))


def adjoint_operator_residual(spec: ProblemSpec, y: Field, phi: Field) -> np.ndarray:
    """``M_k^T phi^k - phi^{k+1}`` with ``phi^{n_t+1} = 0`` at each level."""
    g = spec.grid
    base_T = step_matrix(spec).T.tocsr()
    fy = eval_f(spec.f, y.values, 1)
    p = phi.values
    out = np.empty(g.shape)
    for k in range(g.n_t):
        nxt = p[k + 1] if k + 1 < g.n_t else 0.0
        out[k] = base_T @ p[k] + g.dt * fy[k] * p[k] - nxt
    return out

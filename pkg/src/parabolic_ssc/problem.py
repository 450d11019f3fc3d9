"""Problem data: operator, nonlinearity, tracking cost and control box.

Also holds the assumption checks and the builder for manufactured
stationary instances, whose adjoint is prescribed in closed form and whose
target is reverse engineered so that the discrete first-order system holds.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Union

import numpy as np

from .errors import DegenerateInstanceError, InvalidInputError, SaturationError
from .grid import SPACE_TIME, TERMINAL, Field, SpaceTimeGrid

EXP_LIMIT = 700.0


@dataclass(frozen=True)
class OperatorA:
    """Constant coefficient operator ``-div(a grad y) + b . grad y``."""

    a: np.ndarray
    b: np.ndarray

    def __init__(self, a, b=None):
        a = np.atleast_2d(np.asarray(a, dtype=float))
        d = a.shape[0]
        if a.shape != (d, d):
            raise InvalidInputError(f"diffusion matrix must be square, got {a.shape}")
        b = np.zeros(d) if b is None else np.atleast_1d(np.asarray(b, dtype=float))
        if b.shape != (d,):
            raise InvalidInputError(f"convection vector must have length {d}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @classmethod
    def laplacian(cls, d: int, diffusion: float = 1.0) -> "OperatorA":
        return cls(diffusion * np.eye(d))

    @property
    def d(self) -> int:
        return self.a.shape[0]

    @property
    def ellipticity(self) -> float:
        """Smallest eigenvalue of the symmetric part of ``a``."""
        return float(np.linalg.eigvalsh(0.5 * (self.a + self.a.T)).min())

    def __eq__(self, other):
        return (
            isinstance(other, OperatorA)
            and np.array_equal(self.a, other.a)
            and np.array_equal(self.b, other.b)
        )

    def __hash__(self):
        return hash((self.a.tobytes(), self.b.tobytes()))


@dataclass(frozen=True)
class Zero:
    """``f = 0``: the linear heat equation."""

    def value(self, y):
        return np.zeros_like(np.asarray(y, dtype=float))

    def d1(self, y):
        return np.zeros_like(np.asarray(y, dtype=float))

    def d2(self, y):
        return np.zeros_like(np.asarray(y, dtype=float))


@dataclass(frozen=True)
class OddPolynomial:
    """``f(y) = c_1 y + c_2 y^2 + ... + c_m y^m``."""

    coefficients: tuple

    def __post_init__(self):
        object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))
        if not self.coefficients:
            raise InvalidInputError("OddPolynomial needs at least one coefficient")

    @property
    def degree(self) -> int:
        return len(self.coefficients)

    def _horner(self, y, order):
        c = np.polynomial.polynomial.polyder((0.0, *self.coefficients), order)
        y = np.asarray(y, dtype=float)
        out = np.full(y.shape, c[-1])
        for ck in c[-2::-1]:
            out = out * y + ck
        return out

    def value(self, y):
        return self._horner(y, 0)

    def d1(self, y):
        return self._horner(y, 1)

    def d2(self, y):
        return self._horner(y, 2)


@dataclass(frozen=True)
class Exponential:
    """``f(y) = g exp(y)`` with constant gain ``g >= 0``."""

    gain: float = 1.0

    def _exp(self, y):
        y = np.asarray(y, dtype=float)
        if np.any(y > EXP_LIMIT):
            raise SaturationError(f"exp overflow: state reached {float(np.max(y)):.3g}")
        return self.gain * np.exp(y)

    value = d1 = d2 = _exp


Nonlinearity = Union[Zero, OddPolynomial, Exponential]


def cubic(coefficient: float = 1.0) -> OddPolynomial:
    return OddPolynomial((0.0, 0.0, coefficient))


def eval_f(f: Nonlinearity, y, order: int = 0):
    """``f(y)``, ``f'(y)`` or ``f''(y)`` for ``order`` 0, 1, 2."""
    if order == 0:
        return f.value(y)
    if order == 1:
        return f.d1(y)
    if order == 2:
        return f.d2(y)
    raise InvalidInputError(f"order must be 0, 1 or 2, got {order}")


@dataclass(frozen=True)
class CostIntegrands:
    """Tracking integrands ``(y - y_d)^2 / 2`` and ``nu (y(T) - y_Omega)^2 / 2``."""

    y_d: Field
    nu_omega: int = 0
    y_omega: Field | None = None

    def __post_init__(self):
        if self.y_d.kind != SPACE_TIME:
            raise InvalidInputError("y_d must be a space-time field")
        if self.y_omega is not None and self.y_omega.kind != TERMINAL:
            raise InvalidInputError("y_Omega must be a terminal slice")


def eval_L(cost: CostIntegrands | None, y, target, order: int = 1):
    """Derivatives of the tracking integrand; serves ``L`` and ``L_Omega``."""
    if order == 1:
        return np.asarray(y, dtype=float) - target
    if order == 2:
        return np.ones_like(np.asarray(y, dtype=float) - target)
    raise InvalidInputError(f"order must be 1 or 2, got {order}")


@dataclass(frozen=True)
class ProblemSpec:
    """All data of the box and sparsity constrained control problem."""

    grid: SpaceTimeGrid
    A: OperatorA
    f: Nonlinearity
    cost: CostIntegrands
    alpha: float
    beta: float
    mu: float = 0.0
    y0: Field | None = None

    def __post_init__(self):
        if self.y0 is None:
            object.__setattr__(self, "y0", self.grid.zeros(TERMINAL))
        if self.y0.kind != TERMINAL:
            raise InvalidInputError("y0 must be a terminal slice")
        for fld in (self.cost.y_d, self.cost.y_omega, self.y0):
            if fld is not None and fld.grid != self.grid:
                raise InvalidInputError("problem fields must live on the problem grid")
        if self.A.d != self.grid.d:
            raise InvalidInputError("operator dimension does not match grid")
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "beta", float(self.beta))
        object.__setattr__(self, "mu", float(self.mu))

    @property
    def nu_omega(self) -> int:
        return self.cost.nu_omega

    @property
    def y_omega(self) -> Field:
        if self.cost.y_omega is None:
            return self.grid.zeros(TERMINAL)
        return self.cost.y_omega

    def replace(self, **changes) -> "ProblemSpec":
        from dataclasses import replace

        return replace(self, **changes)


@dataclass
class ValidationReport:
    passed: bool
    lambda_A: float
    df_min: float
    failures: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def __bool__(self):
        return self.passed


def state_bound_guess(spec: ProblemSpec) -> float:
    """A priori sup-norm scale used for derivative scans."""
    box = max(abs(spec.alpha), abs(spec.beta))
    return float(np.abs(spec.y0.values).max(initial=0.0) + spec.grid.T * box + 1.0)


def validate(spec: ProblemSpec, M: float | None = None) -> ValidationReport:
    """Check the ellipticity, growth, cost and constraint assumptions."""
    failures, notes = [], []
    lam = spec.A.ellipticity
    if not np.allclose(spec.A.a, spec.A.a.T):
        failures.append("diffusion matrix is not symmetric")
    if lam <= 0:
        failures.append(f"ellipticity: smallest eigenvalue {lam:.6g} is not positive")

    h = spec.grid.h
    diag = np.diag(spec.A.a)
    with np.errstate(divide="ignore"):
        peclet = np.where(diag > 0, np.abs(spec.A.b) * h / np.where(diag > 0, diag, 1.0), np.inf)
    if np.any(peclet >= 2) and np.any(spec.A.b != 0):
        msg = f"mesh Peclet number {float(peclet.max()):.3g} >= 2; central convection may oscillate"
        notes.append(msg)
        warnings.warn(msg, stacklevel=2)

    f = spec.f
    if isinstance(f, OddPolynomial):
        if f.degree % 2 == 0:
            failures.append(f"nonlinearity degree {f.degree} is not odd")
        if f.coefficients[-1] <= 0:
            failures.append("nonlinearity leading coefficient must be positive")
    elif isinstance(f, Exponential):
        if f.gain < 0:
            failures.append("exponential gain must be non-negative")
    elif not isinstance(f, Zero):
        failures.append(f"unsupported nonlinearity {type(f).__name__}")

    if M is None:
        M = state_bound_guess(spec)
    if isinstance(f, Exponential):
        M = min(M, EXP_LIMIT)
    scan = np.linspace(-M, M, 1001)
    try:
        df_min = float(np.min(eval_f(f, scan, 1)))
    except SaturationError:
        df_min = -np.inf
    if not np.isfinite(df_min):
        failures.append("df/dy has no finite lower bound on the scan interval")

    if not (np.isfinite(spec.alpha) and np.isfinite(spec.beta)):
        failures.append("bounds must be finite")
    elif not spec.alpha < spec.beta:
        failures.append("bounds ordering: alpha must be below beta")
    if spec.mu < 0:
        failures.append("sparsity weight must be non-negative")
    if spec.cost.nu_omega not in (0, 1):
        failures.append("nu_Omega must be 0 or 1")
    if spec.cost.nu_omega == 1 and spec.cost.y_omega is None:
        failures.append("nu_Omega = 1 requires a terminal target y_Omega")
    return ValidationReport(not failures, lam, df_min, failures, notes)


# labels used by the manufactured construction; same codes as conditions.PointLabel
LOWER, UPPER, SPARSE, BIACTIVE_MINUS, BIACTIVE_PLUS, FREE = range(6)


def construction_labels(phibar: np.ndarray, mu: float, band: float) -> np.ndarray:
    """Node labels implied by the adjoint alone (bands of half-width ``band``)."""
    labels = np.full(phibar.shape, FREE, dtype=np.int8)
    labels[phibar > mu + band] = LOWER
    labels[phibar < -mu - band] = UPPER
    if mu > 0:
        labels[np.abs(phibar) < mu - band] = SPARSE
        labels[np.abs(phibar + mu) <= band] = BIACTIVE_MINUS
        labels[np.abs(phibar - mu) <= band] = BIACTIVE_PLUS
    return labels


def control_from_adjoint(phibar: np.ndarray, mu: float, alpha: float, beta: float) -> np.ndarray:
    """Pointwise minimiser of ``phibar u + mu |u|`` over ``[alpha, beta]``.

    Ties (``|phibar| = mu``) are resolved to the admissible point closest
    to zero, which keeps the discrete variational inequality exact.
    """
    zero = min(max(0.0, alpha), beta)
    u = np.full(phibar.shape, zero)
    u[phibar > mu] = alpha
    u[phibar < -mu] = beta
    return u


class StationaryInstance(NamedTuple):
    spec: ProblemSpec
    ubar: Field
    ybar: Field
    phibar: Field


def build_stationary_instance(
    grid: SpaceTimeGrid,
    A: OperatorA,
    f: Nonlinearity,
    mu: float,
    alpha: float,
    beta: float,
    phibar_recipe: Callable,
    seed: int | None = None,
    *,
    nu_omega: int = 0,
    y0: Field | Callable | str | None = None,
    band: float | None = None,
    opts=None,
) -> StationaryInstance:
    """Build a problem whose stationary triple is known in closed form.

    ``phibar_recipe(x, t)`` prescribes the adjoint.  The control follows the
    bang/sparse rules for that adjoint, the state is solved, and ``y_d`` (and
    ``y_Omega`` when ``nu_omega = 1``) are chosen so that the discrete
    adjoint equation reproduces ``phibar`` exactly.  ``seed`` only matters
    when ``y0 == "random"``.
    """
    from .pde import adjoint_operator_residual, solve_state

    phibar = grid.evaluate(phibar_recipe)
    if mu > 0 and band is None:
        band = 0.05 * mu
    band = 0.0 if band is None else float(band)
    p = phibar.values
    if not (np.any(np.abs(p) >= mu) or mu == 0):
        raise DegenerateInstanceError(
            f"adjoint recipe stays inside (-{mu}, {mu}); no bang or sparse structure"
        )
    ubar = Field(grid, control_from_adjoint(p, mu, alpha, beta))

    if isinstance(y0, str) and y0 == "random":
        from .grid import smooth_random_field

        rng = np.random.default_rng(seed)
        y0 = Field(grid, 0.1 * smooth_random_field(grid, rng, noise_fraction=0.0).values[0], TERMINAL)
    elif callable(y0):
        y0 = grid.evaluate(y0, TERMINAL)
    elif y0 is None:
        y0 = grid.zeros(TERMINAL)

    placeholder = CostIntegrands(grid.zeros(), nu_omega, grid.zeros(TERMINAL) if nu_omega else None)
    spec = ProblemSpec(grid, A, f, placeholder, alpha, beta, mu, y0)
    ybar = solve_state(spec, ubar, opts)

    # discrete adjoint: M_k^T phi^k - phi^{k+1} = dt (y^k - y_d^k) + nu delta_{k,n} (y^n - y_Omega)
    resid = adjoint_operator_residual(spec, ybar, phibar)
    if nu_omega:
        y_omega = ybar.terminal() - phibar.terminal()
        resid = resid.copy()
        resid[-1] -= phibar.values[-1]
    else:
        y_omega = None
    y_d = ybar - Field(grid, resid / grid.dt)
    spec = ProblemSpec(grid, A, f, CostIntegrands(y_d, nu_omega, y_omega), alpha, beta, mu, y0)
    return StationaryInstance(spec, ubar, ybar, phibar)


def spec_to_dict(spec: ProblemSpec) -> dict:
    """JSON-compatible document that round-trips through :func:`spec_from_dict`."""
    f = spec.f
    if isinstance(f, Zero):
        fdoc = {"kind": "zero"}
    elif isinstance(f, OddPolynomial):
        fdoc = {"kind": "odd_polynomial", "coefficients": list(f.coefficients)}
    else:
        fdoc = {"kind": "exponential", "gain": f.gain}
    g = spec.grid
    return {
        "grid": {"d": g.d, "n_x": g.n_x, "n_t": g.n_t, "T": g.T},
        "operator": {"a": spec.A.a.tolist(), "b": spec.A.b.tolist()},
        "nonlinearity": fdoc,
        "alpha": spec.alpha,
        "beta": spec.beta,
        "mu": spec.mu,
        "nu_omega": spec.cost.nu_omega,
        "y_d": spec.cost.y_d.values.tolist(),
        "y_omega": None if spec.cost.y_omega is None else spec.cost.y_omega.values.tolist(),
        "y0": spec.y0.values.tolist(),
    }


def nonlinearity_from_dict(doc: dict) -> Nonlinearity:
    kind = doc.get("kind", "zero")
    if kind == "zero":
        return Zero()
    if kind == "odd_polynomial":
        return OddPolynomial(tuple(doc["coefficients"]))
    if kind == "exponential":
        return Exponential(float(doc.get("gain", 1.0)))
    raise InvalidInputError(f"unknown nonlinearity kind {kind!r}")


def spec_from_dict(doc: dict) -> ProblemSpec:
    grid = SpaceTimeGrid(**doc["grid"])
    op = doc.get("operator", {})
    A = OperatorA(op.get("a", np.eye(grid.d)), op.get("b"))
    f = nonlinearity_from_dict(doc.get("nonlinearity", {"kind": "zero"}))
    y_d = Field(grid, doc["y_d"])
    y_om = doc.get("y_omega")
    cost = CostIntegrands(y_d, int(doc.get("nu_omega", 0)), None if y_om is None else Field(grid, y_om, TERMINAL))
    y0 = doc.get("y0")
    y0 = None if y0 is None else Field(grid, y0, TERMINAL)
    return ProblemSpec(grid, A, f, cost, doc["alpha"], doc["beta"], doc.get("mu", 0.0), y0)

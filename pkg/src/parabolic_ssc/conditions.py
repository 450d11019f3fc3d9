"""First- and second-order optimality checks at a candidate control.

Everything here is evaluated at a reference point ``(u_bar, y_bar, phi_bar)``:
node classification and the sparsity multiplier, the sign condition, the
critical cone ``C`` and its extensions ``D^tau``, ``E^tau``, ``G^tau`` and
``C^tau = D^tau & G^tau``, cone sampling, the coercivity quotient of ``F''``
on ``C^tau``, sampled quadratic growth, and empirical constants of the
sensitivity estimates.

Sampling campaigns seed every draw from ``(seed, index)`` and keep the first
accepted draws in index order, so the outcome never depends on how many
worker threads were used.
"""

from __future__ import annotations

import csv
import threading
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .errors import EmptyConeWarning, InvalidInputError, NoRetainedSamplesError, UndefinedMultiplierError
from .functional import curvature_weight, dirderiv_j, second_variation, state_metric_sq, tracking_value
from .grid import TERMINAL, Field, inner_Omega, inner_Q, norm, smooth_random_field
from .pde import LinearizedSolver, SolverOptions, StepSystem, solve_adjoint, solve_state
from .problem import ProblemSpec, eval_f

TOL_ACTIVE = 1e-10
TOL_V = 1e-12
TOL_J = 1e-5
CONE_KINDS = ("C", "Dtau", "Etau", "Gtau", "Ctau")


class PointLabel(IntEnum):
    AT_LOWER_STRICT = 0
    AT_UPPER_STRICT = 1
    SPARSE_ZERO = 2
    BIACTIVE_MINUS = 3
    BIACTIVE_PLUS = 4
    FREE = 5


def default_band(phibar: Field, mu: float) -> float:
    return max(1e-6 * (float(np.abs(phibar.values).max(initial=0.0)) + mu), 1e-14)


@dataclass
class Classification:
    labels: np.ndarray
    counts: dict
    violations: int
    violation_mask: np.ndarray
    eps_b: float

    def label_field(self, grid) -> Field:
        return Field(grid, self.labels.astype(float))


def classify(
    ubar: Field,
    phibar: Field,
    mu: float,
    alpha: float,
    beta: float,
    eps_b: float | None = None,
    tol_active: float = TOL_ACTIVE,
) -> Classification:
    """Label every node from the adjoint and check the bang/sparse implications."""
    if ubar.grid != phibar.grid:
        raise InvalidInputError("control and adjoint live on different grids")
    eps_b = default_band(phibar, mu) if eps_b is None else eps_b
    if not eps_b > 0:
        raise InvalidInputError("band half-width must be positive")
    p, u = phibar.values, ubar.values
    labels = np.full(p.shape, PointLabel.FREE, dtype=np.int8)
    is_zero = np.abs(u) <= tol_active
    if mu > 0:
        labels[(np.abs(p - mu) <= eps_b) & is_zero] = PointLabel.BIACTIVE_PLUS
        labels[(np.abs(p + mu) <= eps_b) & is_zero] = PointLabel.BIACTIVE_MINUS
        labels[np.abs(p) < mu - eps_b] = PointLabel.SPARSE_ZERO
    labels[p > mu + eps_b] = PointLabel.AT_LOWER_STRICT
    labels[p < -mu - eps_b] = PointLabel.AT_UPPER_STRICT

    bad = np.zeros(p.shape, dtype=bool)
    bad |= (labels == PointLabel.AT_LOWER_STRICT) & (np.abs(u - alpha) > tol_active)
    bad |= (labels == PointLabel.AT_UPPER_STRICT) & (np.abs(u - beta) > tol_active)
    bad |= (labels == PointLabel.SPARSE_ZERO) & ~is_zero
    counts = {lab.name: int(np.count_nonzero(labels == lab)) for lab in PointLabel}
    return Classification(labels, counts, int(bad.sum()), bad, eps_b)


def multiplier_lambda(phibar: Field, mu: float) -> Field:
    """``proj_[-1, 1](-phibar / mu)``, the sparsity multiplier."""
    if not mu > 0:
        raise UndefinedMultiplierError("the multiplier needs mu > 0")
    return phibar.with_values(np.clip(-phibar.values / mu, -1.0, 1.0))


@dataclass(frozen=True)
class ConeQuery:
    kind: str = "Ctau"
    tau: float = 0.0
    tol_active: float = TOL_ACTIVE
    tol_J: float = TOL_J
    eps_b: float | None = None

    def __post_init__(self):
        if self.kind not in CONE_KINDS:
            raise InvalidInputError(f"unknown cone {self.kind!r}; choose from {CONE_KINDS}")
        if self.kind != "C" and not self.tau > 0:
            raise InvalidInputError(f"cone {self.kind} needs tau > 0")

    def with_kind(self, kind: str, tau: float | None = None) -> "ConeQuery":
        return ConeQuery(kind, self.tau if tau is None else tau, self.tol_active, self.tol_J, self.eps_b)


@dataclass
class ConeMembership:
    """``margins`` are slacks; a clause holds iff its margin is ``>= 0``."""

    member: bool
    margins: dict = field(default_factory=dict)

    @property
    def violation_mass(self) -> float:
        return float(sum(-m for k, m in self.margins.items() if k != "dJ" and m < 0))


def _sign_violation(v: np.ndarray, ubar: np.ndarray, alpha, beta, tol_active, tol_v=TOL_V) -> np.ndarray:
    lower = np.abs(ubar - alpha) <= tol_active
    upper = np.abs(ubar - beta) <= tol_active
    out = np.where(lower & (v < -tol_v), -v, 0.0)
    out += np.where(upper & (v > tol_v), v, 0.0)
    return out


def satisfies_sign(
    v: Field, ubar: Field, tol_active: float, alpha: float, beta: float, tol_v: float = TOL_V
) -> ConeMembership:
    """Sign condition: ``v >= 0`` where ``u_bar = alpha``, ``v <= 0`` where ``u_bar = beta``."""
    if v.grid != ubar.grid:
        raise InvalidInputError("direction and control live on different grids")
    mass = float(v.grid.weight * _sign_violation(v.values, ubar.values, alpha, beta, tol_active, tol_v).sum())
    return ConeMembership(mass == 0.0, {"sign": -mass})


class ReferencePoint:
    """Candidate control with its state, adjoint and linearization cached.

    Parameters
    ----------
    spec : ProblemSpec
    ubar : Field
        Candidate control (ideally stationary).
    phibar : Field, optional
        Adjoint to use for the structural tests; computed when omitted.
    """

    def __init__(
        self,
        spec: ProblemSpec,
        ubar: Field,
        phibar: Field | None = None,
        ybar: Field | None = None,
        opts: SolverOptions | None = None,
    ):
        self.spec = spec
        self.ubar = ubar
        self.opts = opts
        self.ybar = solve_state(spec, ubar, opts) if ybar is None else ybar
        self._system = StepSystem(spec)
        self._local = threading.local()
        self.phibar = solve_adjoint(spec, self.ybar, opts, solver=self.solver) if phibar is None else phibar
        self.weight = curvature_weight(spec, self.ybar, self.phibar)
        self.phi_sup = float(np.abs(self.phibar.values).max(initial=0.0))
        self.J = tracking_value(spec, self.ybar) + spec.mu * norm(ubar, "L1", "Q")

    @property
    def solver(self) -> LinearizedSolver:
        """Linearization at ``y_bar``, one instance per thread."""
        lin = getattr(self._local, "solver", None)
        if lin is None:
            lin = LinearizedSolver(self.spec, self.ybar, self._system)
            self._local.solver = lin
        return lin

    def sensitivity(self, v: Field) -> Field:
        return self.solver.forward(v)

    def dJ(self, v: Field) -> float:
        """``J'(u_bar; v)`` with the stored adjoint."""
        val = inner_Q(self.phibar, v)
        if self.spec.mu:
            val += self.spec.mu * dirderiv_j(self.ubar, v)
        return val

    def second_variation(self, z: Field) -> float:
        return second_variation(self.spec, self.ybar, self.phibar, z, z, self.weight)

    def eps_b(self, q: ConeQuery) -> float:
        return default_band(self.phibar, self.spec.mu) if q.eps_b is None else q.eps_b

    def masks(self, q: ConeQuery, threshold: float):
        """Boolean masks ``(lower, upper, zero, bi_minus, bi_plus)``."""
        s = self.spec
        p, u = self.phibar.values, self.ubar.values
        eps_b = self.eps_b(q)
        lower = np.abs(u - s.alpha) <= q.tol_active
        upper = np.abs(u - s.beta) <= q.tol_active
        if s.mu > 0:
            zero = np.abs(np.abs(p) - s.mu) > threshold
            u0 = np.abs(u) <= q.tol_active
            bi_minus = (np.abs(p + s.mu) <= eps_b) & u0
            bi_plus = (np.abs(p - s.mu) <= eps_b) & u0
        else:
            zero = np.abs(p) > threshold
            bi_minus = bi_plus = np.zeros(p.shape, dtype=bool)
        return lower, upper, zero, bi_minus, bi_plus

    def structure_threshold(self, q: ConeQuery) -> float:
        return self.eps_b(q) if q.kind == "C" else q.tau

    def structural_violation(self, v: Field, q: ConeQuery, tol_v: float = TOL_V) -> float:
        _, _, zero, bi_minus, bi_plus = self.masks(q, self.structure_threshold(q))
        vv = v.values
        bad = np.where(zero & (np.abs(vv) > tol_v), np.abs(vv), 0.0)
        bad += np.where(bi_minus & (vv < -tol_v), -vv, 0.0)
        bad += np.where(bi_plus & (vv > tol_v), vv, 0.0)
        return float(v.grid.weight * bad.sum())

    def dJ_slack(self, v: Field, z: Field, tau: float, which: str, tol_J: float) -> float:
        """``tau * N(z_v) + tol_J * scale(v) - J'(u_bar; v)`` with ``N`` the L1 or L2 metric."""
        nu = self.spec.nu_omega
        if which == "L1":
            size = norm(z, "L1", "Q") + (nu * norm(z, "L1", "OmegaT") if nu else 0.0)
        else:
            size = norm(z, "L2", "Q") + (nu * norm(z, "L2", "OmegaT") if nu else 0.0)
        scale = (self.phi_sup + self.spec.mu) * norm(v, "L1", "Q")
        return tau * size + tol_J * scale - self.dJ(v)

    def membership(self, v: Field, q: ConeQuery, z: Field | None = None) -> ConeMembership:
        """Membership of ``v`` in the cone described by ``q``."""
        s = self.spec
        sign = satisfies_sign(v, self.ubar, q.tol_active, s.alpha, s.beta)
        if not sign.member:
            return sign
        margins = dict(sign.margins)
        if q.kind in ("C", "Dtau", "Ctau"):
            margins["structure"] = -self.structural_violation(v, q)
        if q.kind in ("Etau", "Gtau", "Ctau"):
            z = self.sensitivity(v) if z is None else z
            which = "L2" if q.kind == "Etau" else "L1"
            margins["dJ"] = self.dJ_slack(v, z, q.tau, which, q.tol_J)
        return ConeMembership(all(m >= 0 for m in margins.values()), margins)

    def draw_direction(self, rng: np.random.Generator, q: ConeQuery | None, noise_fraction: float = 0.1) -> Field:
        """Smooth random field made to satisfy the sign and structural clauses of ``q``.

        With ``q = None`` only the box sign condition is imposed.
        """
        v = smooth_random_field(self.spec.grid, rng, noise_fraction=noise_fraction).values.copy()
        q0 = q or ConeQuery("C")
        lower, upper, zero, bi_minus, bi_plus = self.masks(q0, self.structure_threshold(q0))
        if q is not None and q.kind in ("C", "Dtau", "Ctau"):
            v[zero] = 0.0
            v[bi_minus] = np.abs(v[bi_minus])
            v[bi_plus] = -np.abs(v[bi_plus])
        v[lower] = np.abs(v[lower])
        v[upper] = -np.abs(v[upper])
        if q is not None and q.kind in ("Etau", "Gtau", "Ctau"):
            # shrink the nodes that raise J' by a random factor so the
            # rejection test sees directions on both sides of its boundary
            v[self.dJ_density(v) > 0] *= 10.0 ** (-rng.uniform(0.0, 8.0))
        return Field(self.spec.grid, v)

    def dJ_density(self, v: np.ndarray) -> np.ndarray:
        """Pointwise integrand of ``J'(u_bar; v)``."""
        u = self.ubar.values
        dens = self.phibar.values * v
        if self.spec.mu:
            zero = np.abs(u) <= 1e-12
            dens = dens + self.spec.mu * np.where(zero, np.abs(v), np.sign(u) * v)
        return dens


def _as_point(spec_or_point, ubar=None, phibar=None, opts=None) -> ReferencePoint:
    if isinstance(spec_or_point, ReferencePoint):
        return spec_or_point
    return ReferencePoint(spec_or_point, ubar, phibar, opts=opts)


def cone_membership(spec: ProblemSpec, ubar: Field, phibar: Field, v: Field, q: ConeQuery) -> ConeMembership:
    """One-shot membership test; build a :class:`ReferencePoint` for many directions."""
    return ReferencePoint(spec, ubar, phibar).membership(v, q)


def _campaign(task, n_wanted, max_attempts, workers, batch=32):
    """Run ``task(i)`` for ``i = 0, 1, ...`` until ``n_wanted`` non-None results.

    Returns the kept results in index order and the number of attempts up to
    and including the last kept one (all attempts if the target was missed).
    """
    kept = []
    i = 0
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        while len(kept) < n_wanted and i < max_attempts:
            idx = range(i, min(i + batch, max_attempts))
            results = list(pool.map(task, idx)) if pool else [task(j) for j in idx]
            for j, res in zip(idx, results):
                if res is not None and len(kept) < n_wanted:
                    kept.append(res)
                    if len(kept) == n_wanted:
                        return kept, j + 1
            i = idx.stop
    finally:
        if pool:
            pool.shutdown()
    return kept, i


@dataclass
class ConeSample:
    samples: list
    attempts: int
    accepted: int

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.attempts if self.attempts else 0.0

    def __iter__(self):
        return iter(self.samples)

    def __len__(self):
        return len(self.samples)


def sample_critical_cone(
    spec,
    ubar: Field | None,
    phibar: Field | None,
    q: ConeQuery,
    n: int,
    seed: int = 0,
    workers: int = 1,
    max_attempts: int | None = None,
) -> ConeSample:
    """Draw ``n`` nonzero members of the cone ``q`` by construction plus rejection.

    ``spec`` may be a :class:`ReferencePoint`, in which case ``ubar`` and
    ``phibar`` are ignored.  Deterministic given ``seed``.
    """
    if n < 1:
        raise InvalidInputError("n must be at least 1")
    point = _as_point(spec, ubar, phibar)
    max_attempts = 100 * n if max_attempts is None else max_attempts

    def task(i):
        rng = np.random.default_rng([seed, i])
        v = point.draw_direction(rng, q)
        if not np.any(v.values):
            return None
        return v if point.membership(v, q).member else None

    kept, attempts = _campaign(task, n, max_attempts, workers)
    if not kept:
        warnings.warn(f"no nonzero member of {q.kind} found in {attempts} attempts", EmptyConeWarning, stacklevel=2)
    return ConeSample(kept, attempts, len(kept))


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])


@dataclass
class CoercivityReport:
    samples: int
    min_ratio: float
    argmin: int | None
    ratios: list
    tau: float
    acceptance_rate: float
    vacuous: bool = False
    violating_direction: Field | None = None
    directions: list = field(default_factory=list, repr=False)
    margins: list = field(default_factory=list, repr=False)

    @property
    def coercive(self) -> bool:
        return self.samples > 0 and self.min_ratio > 0

    def rows(self):
        keys = ("sign", "structure", "dJ")
        return [
            (i, self.tau, *(float(m.get(k, 0.0)) for k in keys), r)
            for i, (r, m) in enumerate(zip(self.ratios, self.margins))
        ]

    def write_csv(self, path):
        _write_rows(path, ["id", "tau", "margin_sign", "margin_structure", "margin_dJ", "ratio"], self.rows())


def ssc_report(
    spec,
    ubar: Field | None,
    q: ConeQuery,
    n: int,
    seed: int = 0,
    workers: int = 1,
    phibar: Field | None = None,
) -> CoercivityReport:
    """Sampled coercivity quotient ``F''(u_bar) v^2 / (||z_v||^2 + nu ||z_v(T)||^2)`` on a cone.

    A positive minimum is evidence for the second-order sufficient condition
    with ``delta`` about ``min_ratio``; a negative minimum is a certificate
    that it fails for this ``tau`` and the offending direction is kept.
    """
    point = _as_point(spec, ubar, phibar)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EmptyConeWarning)
        cone = sample_critical_cone(point, None, None, q, n, seed, workers)
    if not cone.samples:
        return CoercivityReport(0, float("nan"), None, [], q.tau, 0.0, vacuous=True)

    def quotient(v):
        z = point.sensitivity(v)
        return point.second_variation(z) / state_metric_sq(point.spec, z), point.membership(v, q, z).margins

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            out = list(pool.map(quotient, cone.samples))
    else:
        out = [quotient(v) for v in cone.samples]
    ratios = [r for r, _ in out]
    k = int(np.argmin(ratios))
    bad = cone.samples[k] if ratios[k] < 0 else None
    return CoercivityReport(
        len(ratios), float(ratios[k]), k, ratios, q.tau, cone.acceptance_rate, False, bad, cone.samples,
        [m for _, m in out],
    )


def inclusion_tau(grid, tau: float) -> float:
    """``tau' = tau / sqrt(|Omega|_h max(1, T))``, for which ``G^tau'`` lies inside ``E^tau``."""
    return tau / np.sqrt(grid.omega_measure * max(1.0, grid.T))


@dataclass
class ConeSurvey:
    """Memberships of sampled directions in every cone, with invariant checks.

    ``exceptions`` counts, per invariant, the samples that break it:

    * ``nesting``: ``C`` membership without membership in all of
      ``D^tau``, ``G^tau``, ``E^tau``, ``C^tau``;
    * ``intersection``: ``C^tau`` membership differing from
      ``D^tau & G^tau``;
    * ``scaling``: a verdict that changes when ``v`` is multiplied by ``c > 0``;
    * ``inclusion``: ``G^tau'`` membership without ``E^tau`` membership.
    """

    tau: float
    tau_prime: float
    members: dict
    exceptions: dict
    rows: list = field(default_factory=list, repr=False)

    @property
    def passed(self) -> bool:
        return not any(self.exceptions.values())

    def write_csv(self, path):
        kinds = list(CONE_KINDS) + ["Gtau_prime"]
        _write_rows(path, ["id", "tau", "draw", "scale", *(f"member_{k}" for k in kinds), "margin_dJ_Ctau"], self.rows)


def cone_survey(spec, ubar: Field | None, tau: float, n: int, seed: int = 0, workers: int = 1, phibar=None) -> ConeSurvey:
    """Check cone nesting, the ``C^tau`` intersection, scaling invariance and ``G^tau' in E^tau``.

    Directions are drawn in rotation from the plain sign-condition sampler
    and the shaped samplers of each cone, so every cone sees both members
    and non-members.
    """
    point = _as_point(spec, ubar, phibar)
    tau_p = inclusion_tau(point.spec.grid, tau)
    draws = [None, "C", "Dtau", "Gtau", "Ctau"]

    def task(i):
        rng = np.random.default_rng([seed, i])
        draw = draws[i % len(draws)]
        q = None if draw is None else ConeQuery(draw, tau)
        v = point.draw_direction(rng, q)
        c = float(10.0 ** rng.uniform(-2.0, 2.0))
        cv = v * c
        z = point.sensitivity(v)
        cz = z * c
        verdict, scaled = {}, {}
        for kind in CONE_KINDS:
            qk = ConeQuery(kind, tau)
            m = point.membership(v, qk, z)
            verdict[kind] = m
            scaled[kind] = point.membership(cv, qk, cz).member
        verdict["Gtau_prime"] = point.membership(v, ConeQuery("Gtau", tau_p), z)
        scaled["Gtau_prime"] = point.membership(cv, ConeQuery("Gtau", tau_p), cz).member
        return draw or "sign", c, verdict, scaled

    results, _ = _campaign(task, n, n, workers)
    exceptions = {"nesting": 0, "intersection": 0, "scaling": 0, "inclusion": 0}
    members = {k: 0 for k in list(CONE_KINDS) + ["Gtau_prime"]}
    rows = []
    for i, (draw, c, verdict, scaled) in enumerate(results):
        mem = {k: m.member for k, m in verdict.items()}
        for k, flag in mem.items():
            members[k] += flag
        if mem["C"] and not all(mem[k] for k in ("Dtau", "Gtau", "Etau", "Ctau")):
            exceptions["nesting"] += 1
        if mem["Ctau"] != (mem["Dtau"] and mem["Gtau"]):
            exceptions["intersection"] += 1
        if any(mem[k] != scaled[k] for k in mem):
            exceptions["scaling"] += 1
        if mem["Gtau_prime"] and not mem["Etau"]:
            exceptions["inclusion"] += 1
        dJ = verdict["Ctau"].margins.get("dJ", float("nan"))
        rows.append((i, tau, draw, c, *(int(mem[k]) for k in members), float(dJ)))
    return ConeSurvey(tau, tau_p, members, exceptions, rows)


@dataclass
class GrowthReport:
    samples: int
    min_kappa: float
    eps: float
    kappas: list
    rhos: list
    state_dist: list
    counterexamples: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.samples > 0 and self.min_kappa > 0 and not self.counterexamples

    def rows(self):
        return [(i, r, d, k) for i, (r, d, k) in enumerate(zip(self.rhos, self.state_dist, self.kappas))]

    def write_csv(self, path):
        _write_rows(path, ["id", "rho", "state_dist_inf", "kappa"], self.rows())


def growth_report(
    spec,
    ubar: Field | None,
    eps: float,
    n: int,
    seed: int = 0,
    rho_grid=(0.01, 0.03, 0.1, 0.3),
    workers: int = 1,
    phibar: Field | None = None,
    cone_fraction: float = 0.5,
    max_attempts: int | None = None,
) -> GrowthReport:
    """Sampled quadratic growth quotient ``2 (J(u) - J(u_bar)) / ||y_u - y_bar||^2``.

    Trial controls are ``clamp(u_bar + rho r)``.  A fraction ``cone_fraction``
    of the directions ``r`` is shaped to the critical cone structure (the
    hardest directions for growth); the rest only obey the sign condition.
    Only trials with ``||y_u - y_bar||_inf < eps`` are kept.
    """
    if not eps > 0:
        raise InvalidInputError("eps must be positive")
    point = _as_point(spec, ubar, phibar)
    s = point.spec
    J0 = point.J
    scale = max(1.0, abs(J0))
    cone_q = ConeQuery("C")
    rho_grid = np.asarray(rho_grid, dtype=float)
    max_attempts = 20 * n if max_attempts is None else max_attempts

    def task(i):
        rng = np.random.default_rng([seed, i])
        rho = float(rng.choice(rho_grid))
        q = cone_q if rng.random() < cone_fraction else None
        r = point.draw_direction(rng, q)
        if q is not None and not np.any(r.values):
            r = point.draw_direction(rng, None)
        u = point.ubar.with_values(np.clip(point.ubar.values + rho * r.values, s.alpha, s.beta))
        d = u - point.ubar
        if norm(d, "L2", "Q") < 1e-8:
            return None
        y = solve_state(s, u, point.opts)
        dist_inf = norm(y - point.ybar, "Linf", "Q")
        if not dist_inf < eps:
            return None
        J = tracking_value(s, y) + s.mu * norm(u, "L1", "Q")
        dy = y - point.ybar
        denom = state_metric_sq(s, dy)
        kappa = 2.0 * (J - J0) / denom
        return rho, dist_inf, kappa, (J < J0 - 1e-10 * scale), (u if J < J0 - 1e-10 * scale else None)

    kept, _ = _campaign(task, n, max_attempts, workers)
    if not kept:
        raise NoRetainedSamplesError(f"no trial control stayed within eps={eps}; widen eps or shrink rho_grid")
    rhos, dists, kappas = [k[0] for k in kept], [k[1] for k in kept], [k[2] for k in kept]
    counter = [k[4] for k in kept if k[3]]
    return GrowthReport(len(kept), float(min(kappas)), eps, kappas, rhos, dists, counter)


@dataclass
class BoundsReport:
    constants: dict
    stabilized: dict
    premise: dict
    checked: dict
    violations: dict
    duality_max_error: float
    l1_bound_failures: int
    lipschitz: float
    rows: list = field(default_factory=list, repr=False)
    near_rows: list = field(default_factory=list, repr=False)

    @property
    def passed(self) -> bool:
        return (
            all(np.isfinite(v) for v in self.constants.values())
            and all(self.stabilized.values())
            and not any(self.violations.values())
            and self.l1_bound_failures == 0
        )

    def write_csv(self, path):
        header = ["id", "kind", "ratio_L2", "ratio_L1", "ratio_Linf", "state_dist_inf", "z_inf", "ok_2_11", "ok_2_12"]
        out = [(i, "random", a, b, c, "", "", "", "") for i, (a, b, c) in enumerate(self.rows)]
        out += [(i, "near", "", "", "", d, z, int(o1), int(o2)) for i, (d, z, o1, o2, _, _) in enumerate(self.near_rows)]
        _write_rows(path, header, out)


def _stabilized(values, rel=0.1) -> bool:
    """Running sup over the first half is within ``rel`` of the full sup."""
    if len(values) < 2:
        return False
    half = max(values[: len(values) // 2])
    full = max(values)
    return np.isfinite(full) and full - half <= rel * full


def bounds_report(
    spec,
    ubar: Field | None,
    n: int,
    seed: int = 0,
    workers: int = 1,
    rho_grid=None,
    phibar: Field | None = None,
    stabilization_tol: float = 0.1,
) -> BoundsReport:
    """Empirical constants and checks for the sensitivity estimates.

    Part one draws ``n`` random admissible controls ``u`` and directions
    ``v`` and records ``(||z||_2 + ||z(T)||_2) / ||v||_2``,
    ``(||z||_1 + ||z(T)||_1) / ||v||_1`` and ``||z||_inf / ||v||_inf``; the
    terminal L1 norm is cross-checked against the backward duality sweep.
    Part two draws ``n`` controls near ``u_bar`` and tests
    ``||z_{u-u_bar}||_inf < 2 ||y_u - y_bar||_inf`` and the lower bound with
    factor 1/2, counting violations only below the premise thresholds built
    from the empirical constants.
    """
    if n < 1:
        raise InvalidInputError("n must be at least 1")
    point = _as_point(spec, ubar, phibar)
    s, g = point.spec, point.spec.grid
    nu = s.nu_omega
    if rho_grid is None:
        rho_grid = (s.beta - s.alpha) * np.logspace(-3, 0, 7)
    rho_grid = np.asarray(rho_grid, dtype=float)
    mid, half = 0.5 * (s.alpha + s.beta), 0.5 * (s.beta - s.alpha)

    def random_pair(i):
        rng = np.random.default_rng([seed, 0, i])
        u = mid + half * smooth_random_field(g, rng, noise_fraction=0.0)
        v = smooth_random_field(g, rng)
        y = solve_state(s, u, point.opts)
        lin = LinearizedSolver(s, y)
        z = lin.forward(v)
        zT = z.terminal()
        a = (norm(z, "L2", "Q") + norm(zT, "L2", "OmegaT")) / norm(v, "L2", "Q")
        b = (norm(z, "L1", "Q") + norm(zT, "L1", "OmegaT")) / norm(v, "L1", "Q")
        c = norm(z, "Linf", "Q") / norm(v, "Linf", "Q")
        sign_T = Field(g, np.sign(zT.values), TERMINAL)
        psi = Field(g, lin.backward(None, sign_T.values))
        lhs, rhs = inner_Omega(sign_T, zT), inner_Q(v, psi)
        err = abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300)
        l1_ok = norm(zT, "L1", "OmegaT") <= norm(psi, "Linf", "Q") * norm(v, "L1", "Q") * (1 + 1e-12)
        return a, b, c, err, l1_ok, norm(y, "Linf", "Q")

    def near_pair(i):
        rng = np.random.default_rng([seed, 1, i])
        rho = float(rng.choice(rho_grid))
        r = smooth_random_field(g, rng)
        u = point.ubar.with_values(np.clip(point.ubar.values + rho * r.values, s.alpha, s.beta))
        d = u - point.ubar
        if norm(d, "L2", "Q") < 1e-12:
            return None
        y = solve_state(s, u, point.opts)
        dy = y - point.ybar
        z = point.sensitivity(d)
        dist = norm(dy, "Linf", "Q")
        z_inf = norm(z, "Linf", "Q")
        ok1 = z_inf < 2 * dist
        lhs = norm(z, "L2", "Q") + (nu * norm(z, "L2", "OmegaT") if nu else 0.0)
        rhs = 0.5 * (norm(dy, "L2", "Q") + (nu * norm(dy, "L2", "OmegaT") if nu else 0.0))
        ok2 = lhs >= rhs
        lip = dist / norm(d, "L2", "Q")
        return dist, z_inf, ok1, ok2, lip, norm(y, "Linf", "Q")

    rand, _ = _campaign(random_pair, n, n, workers)
    near, _ = _campaign(near_pair, n, 20 * n, workers)

    ratios_a = [r[0] for r in rand]
    ratios_b = [r[1] for r in rand]
    ratios_c = [r[2] for r in rand]
    constants = {"C_Q2": max(ratios_a), "C_Q1": max(ratios_b), "C_Qinf": max(ratios_c)}
    stabilized = {
        "C_Q2": _stabilized(ratios_a, stabilization_tol),
        "C_Q1": _stabilized(ratios_b, stabilization_tol),
        "C_Qinf": _stabilized(ratios_c, stabilization_tol),
    }

    M_inf = max([r[5] for r in rand] + [r[5] for r in near] + [norm(point.ybar, "Linf", "Q")])
    scan = np.linspace(-M_inf, M_inf, 1001)
    C_f = float(np.max(np.abs(eval_f(s.f, scan, 2))))
    constants["C_f"] = C_f
    constants["M_inf"] = M_inf
    if C_f > 0:
        thr_sup = 2.0 / (C_f * constants["C_Qinf"])
        thr_lower = 1.0 / (C_f * max(constants["C_Q2"], constants["C_Qinf"]))
    else:
        thr_sup = thr_lower = float("inf")
    premise = {"linearization_sup": thr_sup, "linearization_lower": thr_lower}
    below_1 = [r for r in near if r[0] < thr_sup]
    below_2 = [r for r in near if r[0] < thr_lower]
    checked = {"linearization_sup": len(below_1), "linearization_lower": len(below_2)}
    violations = {"linearization_sup": sum(not r[2] for r in below_1), "linearization_lower": sum(not r[3] for r in below_2)}
    return BoundsReport(
        constants,
        stabilized,
        premise,
        checked,
        violations,
        float(max(r[3] for r in rand)),
        sum(not r[4] for r in rand),
        float(max(r[4] for r in near)) if near else float("nan"),
        [(r[0], r[1], r[2]) for r in rand],
        near,
    )

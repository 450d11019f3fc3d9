import warnings

import numpy as np
import pytest

from parabolic_ssc.conditions import (
    ConeQuery,
    PointLabel,
    ReferencePoint,
    bounds_report,
    classify,
    cone_membership,
    cone_survey,
    growth_report,
    inclusion_tau,
    multiplier_lambda,
    sample_critical_cone,
    satisfies_sign,
    ssc_report,
)
from parabolic_ssc.errors import EmptyConeWarning, InvalidInputError, NoRetainedSamplesError, UndefinedMultiplierError
from parabolic_ssc.functional import dirderiv_J, hess_F_quadform
from parabolic_ssc.grid import SpaceTimeGrid, norm, smooth_random_field
from parabolic_ssc.instances import tracking_problem
from parabolic_ssc.optimize import OptimizeOptions, proximal_gradient
from parabolic_ssc.pde import solve_adjoint, solve_state
from parabolic_ssc.problem import OperatorA, Zero, build_stationary_instance, cubic


@pytest.fixture(scope="module")
def sparse_point(sparse):
    return ReferencePoint(sparse.spec, sparse.ubar, sparse.phibar)


@pytest.fixture(scope="module")
def baseline_point(baseline):
    return ReferencePoint(baseline.spec, baseline.ubar, baseline.phibar)


@pytest.fixture(scope="module")
def flat():
    """mu = 0 with a vanishing adjoint: the control is interior everywhere."""
    g = SpaceTimeGrid(1, 15, 12)
    return build_stationary_instance(g, OperatorA.laplacian(1), cubic(), 0.0, -1.0, 1.0, lambda x, t: 0 * t + 0 * x[:, 0])


# classification and multiplier


def test_zero_adjoint_without_sparsity_is_free(grid1):
    cl = classify(grid1.zeros(), grid1.zeros(), 0.0, -1.0, 1.0)
    assert cl.counts["FREE"] == grid1.n_space * grid1.n_t and cl.violations == 0


def test_manufactured_instance_has_no_violations(sparse, baseline):
    for inst in (sparse, baseline):
        assert classify(inst.ubar, inst.phibar, inst.spec.mu, -1.0, 1.0).violations == 0


def test_constant_adjoint_above_mu_is_at_lower_bound(grid1):
    cl = classify(grid1.full(-1.0), grid1.full(0.2), 0.1, -1.0, 1.0)
    assert cl.counts["AT_LOWER_STRICT"] == grid1.n_space * grid1.n_t and cl.violations == 0


def test_classification_violations_are_counted(grid1):
    cl = classify(grid1.full(0.5), grid1.full(0.2), 0.1, -1.0, 1.0)
    assert cl.violations == grid1.n_space * grid1.n_t
    assert np.all(cl.labels == PointLabel.AT_LOWER_STRICT)


def test_labels_partition_nodes(sparse):
    cl = classify(sparse.ubar, sparse.phibar, sparse.spec.mu, -1.0, 1.0)
    assert sum(cl.counts.values()) == cl.labels.size
    assert cl.counts["BIACTIVE_PLUS"] > 0 and cl.counts["SPARSE_ZERO"] > 0


@pytest.mark.parametrize("phi,expected", [(0.2, -1.0), (0.0, 0.0), (-0.05, 0.5)])
def test_multiplier_values(grid1, phi, expected):
    lam = multiplier_lambda(grid1.full(phi), 0.1)
    np.testing.assert_allclose(lam.values, expected, atol=1e-15)


def test_multiplier_needs_positive_mu(grid1):
    with pytest.raises(UndefinedMultiplierError):
        multiplier_lambda(grid1.zeros(), 0.0)


# sign condition and cones


def test_sign_condition_examples(grid1, rng):
    assert satisfies_sign(grid1.zeros(), grid1.full(-1.0), 1e-10, -1.0, 1.0).member
    m = satisfies_sign(grid1.full(-1.0), grid1.full(-1.0), 1e-10, -1.0, 1.0)
    assert not m.member
    assert -m.margins["sign"] == pytest.approx(norm(grid1.full(1.0), "L1"))
    assert satisfies_sign(smooth_random_field(grid1, rng), grid1.full(0.3), 1e-10, -1.0, 1.0).member


def test_cone_query_validation():
    with pytest.raises(InvalidInputError):
        ConeQuery("Dtau", 0.0)
    with pytest.raises(InvalidInputError):
        ConeQuery("X", 1.0)
    assert ConeQuery("C").tau == 0.0


@pytest.mark.parametrize("kind", ["C", "Dtau", "Etau", "Gtau", "Ctau"])
def test_zero_direction_is_in_every_cone(sparse, kind):
    m = cone_membership(sparse.spec, sparse.ubar, sparse.phibar, sparse.spec.grid.zeros(), ConeQuery(kind, 0.01))
    assert m.member and all(v == 0.0 for v in m.margins.values())


def test_direction_on_bang_region_leaves_d_tau(baseline, baseline_point):
    phi, u = baseline.phibar.values, baseline.ubar.values
    tau = 0.01
    v = np.where(np.abs(phi) > tau, 1.0, 0.0)
    v = np.where(u == baseline.spec.beta, -v, v)
    m = baseline_point.membership(baseline.spec.grid.zeros().with_values(v), ConeQuery("Dtau", tau))
    assert not m.member and m.margins["sign"] == 0.0 and m.margins["structure"] < 0


def test_sign_failure_short_circuits(sparse_point, sparse):
    v = sparse.spec.grid.full(1.0)  # wrong sign on the upper-active nodes
    m = sparse_point.membership(v, ConeQuery("Ctau", 0.1))
    assert not m.member and set(m.margins) == {"sign"}


def test_g_tau_prime_members_lie_in_e_tau(sparse_point):
    tau = 0.05
    tp = inclusion_tau(sparse_point.spec.grid, tau)
    cone = sample_critical_cone(sparse_point, None, None, ConeQuery("Gtau", tp), 100, seed=2)
    assert len(cone) == 100
    for v in cone:
        assert sparse_point.membership(v, ConeQuery("Etau", tau)).member


def test_unconstrained_cone_accepts_every_draw(flat):
    pt = ReferencePoint(flat.spec, flat.ubar, flat.phibar)
    cone = sample_critical_cone(pt, None, None, ConeQuery("Ctau", 0.01), 40, seed=0)
    assert cone.acceptance_rate == 1.0 and len(cone) == 40


def test_sampled_members_pass_membership(sparse_point):
    q = ConeQuery("Ctau", 0.01)
    cone = sample_critical_cone(sparse_point, None, None, q, 60, seed=5)
    assert all(sparse_point.membership(v, q).member for v in cone)
    assert 0.0 < cone.acceptance_rate < 1.0


def test_sampling_is_deterministic_across_workers(sparse_point):
    q = ConeQuery("Gtau", 0.01)
    a = sample_critical_cone(sparse_point, None, None, q, 30, seed=9)
    b = sample_critical_cone(sparse_point, None, None, q, 30, seed=9, workers=4)
    assert a.attempts == b.attempts
    for va, vb in zip(a, b):
        np.testing.assert_array_equal(va.values, vb.values)


def test_empty_cone_warns():
    g = SpaceTimeGrid(1, 9, 6)
    inst = build_stationary_instance(g, OperatorA.laplacian(1), Zero(), 0.0, -1, 1, lambda x, t: 1.0 + 0 * t + 0 * x[:, 0])
    pt = ReferencePoint(inst.spec, inst.ubar, inst.phibar)
    with pytest.warns(EmptyConeWarning):
        cone = sample_critical_cone(pt, None, None, ConeQuery("C"), 2, seed=0)
    assert len(cone) == 0
    rep = ssc_report(pt, None, ConeQuery("C"), 2, seed=0)
    assert rep.vacuous and rep.samples == 0


def test_survey_invariants_hold(sparse_point, baseline_point):
    for pt in (sparse_point, baseline_point):
        sv = cone_survey(pt, None, 0.01, 100, seed=1)
        assert sv.passed, sv.exceptions
        assert 0 < sv.members["C"] < 100


# coercivity, growth, bounds


def test_linear_state_ratio_is_one(baseline_point):
    rep = ssc_report(baseline_point, None, ConeQuery("Ctau", 0.01), 50, seed=0)
    assert rep.samples == 50
    assert max(abs(r - 1.0) for r in rep.ratios) <= 1e-10


def test_ratio_is_scale_invariant(sparse_point):
    cone = sample_critical_cone(sparse_point, None, None, ConeQuery("Ctau", 0.01), 5, seed=3)
    for v in cone:
        ratios = []
        for c in (1.0, 1e-3, 250.0):
            z = sparse_point.sensitivity(v * c)
            ratios.append(sparse_point.second_variation(z) / norm(z, "L2") ** 2)
        np.testing.assert_allclose(ratios, ratios[0], rtol=1e-10)


def test_nonconvex_ratio_is_reproducible(sparse_point):
    mins = [ssc_report(sparse_point, None, ConeQuery("Ctau", 0.01), 100, seed=s).min_ratio for s in range(3)]
    assert max(mins) - min(mins) <= 0.1 * abs(np.mean(mins))


def test_indefinite_instance_gives_certificate(indefinite):
    pt = ReferencePoint(indefinite.spec, indefinite.ubar, indefinite.phibar)
    rep = ssc_report(pt, None, ConeQuery("Ctau", 0.01), 30, seed=0)
    assert rep.min_ratio < 0 and not rep.coercive
    v = rep.violating_direction
    assert v is not None
    assert hess_F_quadform(indefinite.spec, indefinite.ubar, v, v) < 0


def test_growth_excludes_zero_perturbations(sparse_point):
    with pytest.raises(NoRetainedSamplesError):
        growth_report(sparse_point, None, 1.0, 5, rho_grid=[0.0], max_attempts=20)


def test_growth_needs_reachable_eps(sparse_point):
    with pytest.raises(NoRetainedSamplesError):
        growth_report(sparse_point, None, 1e-12, 5, max_attempts=20)
    with pytest.raises(InvalidInputError):
        growth_report(sparse_point, None, 0.0, 5)


def test_growth_at_sparse_instance(sparse_point):
    rep = growth_report(sparse_point, None, 1.0, 200, seed=4)
    assert rep.samples == 200 and rep.passed
    assert all(d < 1.0 for d in rep.state_dist)


def test_linear_state_estimates_hold(baseline_point):
    rep = bounds_report(baseline_point, None, 60, seed=0)
    assert rep.constants["C_f"] == 0.0
    assert rep.checked["linearization_sup"] == rep.checked["linearization_lower"] == len(rep.near_rows)
    assert not any(rep.violations.values())
    for dist, z_inf, *_ in rep.near_rows:
        assert z_inf == pytest.approx(dist, rel=1e-10)


def test_duality_cross_check(sparse_point):
    rep = bounds_report(sparse_point, None, 30, seed=1)
    assert rep.duality_max_error <= 1e-10 and rep.l1_bound_failures == 0
    assert all(np.isfinite(v) for v in rep.constants.values())


# optimality surrogates


def test_first_order_surrogate_at_manufactured_point(sparse_point, sparse):
    rng = np.random.default_rng(0)
    for _ in range(500):
        v = sparse_point.draw_direction(rng, None)
        val = sparse_point.dJ(v)
        assert val >= -1e-8 * max(1.0, norm(v, "L1"))
    # same value through the functional module
    v = sparse_point.draw_direction(rng, None)
    assert dirderiv_J(sparse.spec, sparse.ubar, v) == pytest.approx(sparse_point.dJ(v), rel=1e-10, abs=1e-14)


def test_necessary_second_order_surrogate_at_convex_minimizer():
    g = SpaceTimeGrid(1, 9, 8)
    # target control leaves the box near the centre only
    spec = tracking_problem(g, Zero(), g.evaluate(lambda x, t: 1.6 * np.sin(np.pi * x[:, 0]) * np.cos(2 * t)))
    u, trace = proximal_gradient(spec, g.zeros(), OptimizeOptions(max_iters=20000, stop_tol=1e-9))
    assert trace.converged
    pt = ReferencePoint(spec, u)
    q = ConeQuery("C", eps_b=1e-7)
    cone = sample_critical_cone(pt, None, None, q, 30, seed=0)
    assert len(cone) == 30
    for v in cone:
        assert pt.second_variation(pt.sensitivity(v)) >= -1e-8 * norm(v, "L2") ** 2


def test_structural_characterisation_matches_derivative(sparse_point, baseline_point):
    for pt in (sparse_point, baseline_point):
        rng = np.random.default_rng(8)
        q = ConeQuery("C")
        disagree = 0
        n = 300
        for i in range(n):
            v = pt.draw_direction(rng, q if i % 2 else None)
            scale = (pt.phi_sup + pt.spec.mu) * norm(v, "L1")
            flat = abs(pt.dJ(v)) <= q.tol_J * scale
            structural = pt.structural_violation(v, q) == 0.0
            disagree += flat != structural
        assert disagree <= 0.01 * n

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_spec
from parabolic_ssc.errors import InvalidInputError, NonconvergenceError
from parabolic_ssc.grid import TERMINAL, Field, SpaceTimeGrid, inner_Omega, inner_Q, norm, smooth_random_field
from parabolic_ssc.instances import manufactured_state
from parabolic_ssc.pde import (
    LinearizedSolver,
    SolverOptions,
    StepSystem,
    assemble_operator,
    solve_adjoint,
    solve_backward,
    solve_linearized,
    solve_state,
    step_matrix,
)
from parabolic_ssc.problem import CostIntegrands, Exponential, OperatorA, ProblemSpec, Zero, cubic


def _heat(grid, y0=None, b=None):
    return ProblemSpec(grid, OperatorA(np.eye(grid.d), b), Zero(), CostIntegrands(grid.zeros()), -1, 1, 0.0, y0)


def test_zero_data_gives_zero_state(grid2):
    y = solve_state(_heat(grid2), grid2.zeros())
    assert np.all(y.values == 0.0)


def test_heat_decay_against_separation_of_variables():
    errs = []
    for n in (10, 20, 40):
        g = SpaceTimeGrid(1, n, n * n // 10, 0.1)
        x = g.coordinates()[:, 0]
        y0 = Field(g, np.sin(np.pi * x), TERMINAL)
        y = solve_state(_heat(g, y0), g.zeros())
        exact = np.exp(-np.pi**2 * g.times)[:, None] * np.sin(np.pi * x)[None, :]
        errs.append(np.abs(y.values - exact).max())
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 1.8)


def test_manufactured_cubic_converges():
    errs = []
    for n in (10, 20, 40):
        g = SpaceTimeGrid(1, n, 4 * n, 1.0)
        spec, u, y = manufactured_state(g, cubic(), time_power=2)
        errs.append(norm(solve_state(spec, u) - y, "Linf"))
    assert errs[2] < errs[1] < errs[0]
    assert errs[0] / errs[2] > 3.5


@pytest.mark.parametrize("d", [1, 2])
def test_operator_is_symmetric_without_convection(d):
    g = SpaceTimeGrid(d, 5, 2)
    K = assemble_operator(g, OperatorA(np.array([[1.0, 0.3], [0.3, 2.0]])[:d, :d])).toarray()
    np.testing.assert_allclose(K, K.T, atol=1e-12)


def test_operator_reproduces_second_derivative_of_quadratic():
    g = SpaceTimeGrid(1, 9, 1)
    x = g.coordinates()[:, 0]
    y = x * (1 - x)  # vanishes on the boundary, -y'' = 2
    np.testing.assert_allclose(assemble_operator(g, OperatorA.laplacian(1)) @ y, 2.0, rtol=1e-10)


def test_step_system_factors_match_sparse_solve(rng):
    import scipy.sparse as sp
    from scipy.sparse.linalg import spsolve

    for d in (1, 2):
        g = SpaceTimeGrid(d, 6, 4)
        spec = _heat(g, b=0.7 * np.ones(d))
        sysm = StepSystem(spec)
        shift = rng.uniform(0, 1, g.n_space)
        b = rng.standard_normal(g.n_space)
        K = step_matrix(spec) + sp.diags(shift)
        ref = spsolve(K.tocsc(), b)
        lu = sysm.factor(shift)
        np.testing.assert_allclose(lu.solve(b), ref, rtol=1e-12)
        np.testing.assert_allclose(lu.solve(b, trans="T"), spsolve(K.T.tocsc(), b), rtol=1e-12)


def test_linearized_zero_source(grid1, rng):
    spec = random_spec(grid1, cubic(), rng)
    y = solve_state(spec, grid1.zeros())
    assert np.all(solve_linearized(spec, y, grid1.zeros()).values == 0.0)


def test_linearized_equals_state_for_linear_problem(grid2, rng):
    spec = _heat(grid2)
    v = smooth_random_field(grid2, rng)
    z = solve_linearized(spec, solve_state(spec, grid2.zeros()), v)
    np.testing.assert_allclose(z.values, solve_state(spec, v).values, atol=1e-14)


@pytest.mark.parametrize("f", [cubic(), Exponential(0.5)])
def test_linearization_taylor_order(grid1, rng, f):
    spec = random_spec(grid1, f, rng)
    u = 0.5 * smooth_random_field(grid1, rng)
    v = smooth_random_field(grid1, rng)
    y = solve_state(spec, u)
    z = solve_linearized(spec, y, v)
    eps = np.array([1e-1, 1e-2, 1e-3, 1e-4])
    rem = [norm(solve_state(spec, u + v * e) - y - z * e, "L2") for e in eps]
    slope = np.polyfit(np.log(eps), np.log(rem), 1)[0]
    assert slope >= 1.9


def test_linearized_is_linear(grid2, rng):
    spec = random_spec(grid2, cubic(), rng)
    lin = LinearizedSolver(spec, solve_state(spec, 0.5 * smooth_random_field(grid2, rng)))
    v1, v2 = smooth_random_field(grid2, rng), smooth_random_field(grid2, rng)
    a, b = 1.7, -0.4
    lhs = lin.forward(v1 * a + v2 * b).values
    rhs = a * lin.forward(v1).values + b * lin.forward(v2).values
    np.testing.assert_allclose(lhs, rhs, atol=1e-14)


def test_adjoint_vanishes_at_target(grid1, rng):
    spec = random_spec(grid1, cubic(), rng)
    y = solve_state(spec, grid1.zeros())
    spec = spec.replace(cost=CostIntegrands(y))
    assert np.all(solve_adjoint(spec, y).values == 0.0)


@pytest.mark.parametrize("d", [1, 2])
@pytest.mark.parametrize("nu_omega", [0, 1])
@pytest.mark.parametrize("f", [Zero(), cubic(), Exponential(1.0)])
def test_discrete_duality(d, nu_omega, f, rng):
    g = SpaceTimeGrid(d, 9 if d == 1 else 5, 7, 0.8)
    spec = random_spec(g, f, rng, nu_omega=nu_omega, b=0.5 * np.ones(d))
    y = solve_state(spec, 0.5 * smooth_random_field(g, rng))
    v = smooth_random_field(g, rng)
    lin = LinearizedSolver(spec, y)
    phi = solve_adjoint(spec, y, solver=lin)
    z = lin.forward(v)
    lhs = inner_Q(z, y - spec.cost.y_d)
    if nu_omega:
        lhs += inner_Omega(z.terminal(), y.terminal() - spec.y_omega)
    rhs = inner_Q(v, phi)
    assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), abs(rhs))


def test_backward_zero_terminal(grid1, rng):
    spec = random_spec(grid1, cubic(), rng)
    y = solve_state(spec, grid1.zeros())
    assert np.all(solve_backward(spec, y, grid1.zeros(TERMINAL)).values == 0.0)


def test_backward_duality_and_sign_pairing(grid2, rng):
    spec = random_spec(grid2, cubic(), rng)
    y = solve_state(spec, 0.3 * smooth_random_field(grid2, rng))
    v = smooth_random_field(grid2, rng)
    z = solve_linearized(spec, y, v)
    sign = Field(grid2, np.sign(z.values[-1]), TERMINAL)
    psi = solve_backward(spec, y, sign)
    assert inner_Omega(sign, z) == pytest.approx(norm(z, "L1", "OmegaT"), rel=1e-14)
    assert inner_Omega(sign, z) == pytest.approx(inner_Q(v, psi), rel=1e-12)
    assert norm(z, "L1", "OmegaT") <= norm(psi, "Linf") * norm(v, "L1") * (1 + 1e-12)


def test_backward_rejects_space_time_terminal(grid1, rng):
    spec = random_spec(grid1, cubic(), rng)
    y = solve_state(spec, grid1.zeros())
    with pytest.raises(InvalidInputError):
        solve_backward(spec, y, grid1.zeros())


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_discrete_maximum_principle(seed):
    g = SpaceTimeGrid(1, 12, 10)
    rng = np.random.default_rng(seed)
    y0 = Field(g, rng.uniform(0, 1, g.n_space), TERMINAL)
    y = solve_state(_heat(g, y0), g.zeros())
    assert y.values.min() >= 0.0 and y.values.max() <= 1.0 + 1e-12


def test_newton_converges_quadratically():
    g = SpaceTimeGrid(1, 15, 4, 2.0)
    spec, u, _ = manufactured_state(g, cubic(), time_power=2)
    history = []
    solve_state(spec, u * 20.0, SolverOptions(newton_tol=1e-13), history=history)
    for trail in history:
        r = np.array(trail)
        for a, b in zip(r[:-1], r[1:]):
            if 1e-9 < a <= 1e-3:
                assert b / a**2 < 1e3


def test_newton_reports_nonconvergence(grid1):
    spec, u, _ = manufactured_state(grid1, cubic(), time_power=1)
    with pytest.raises(NonconvergenceError) as info:
        solve_state(spec, u * 1e3, SolverOptions(newton_max_iter=1))
    assert info.value.step == 1


def test_lipschitz_ratio_is_bounded(grid1, rng):
    spec = random_spec(grid1, cubic(), rng)
    ratios = []
    for _ in range(50):
        u1 = smooth_random_field(grid1, rng)
        u2 = smooth_random_field(grid1, rng)
        dy = solve_state(spec, u1) - solve_state(spec, u2)
        ratios.append(norm(dy, "Linf") / norm(u1 - u2, "L2"))
    assert np.isfinite(max(ratios))
    assert max(ratios[:25]) >= 0.5 * max(ratios)

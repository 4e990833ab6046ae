import math
import warnings

import numpy as np
import pytest
from scipy.optimize import brentq

from annulus_bem.boundary_ops import assemble_Wstar
from annulus_bem.geometry import circle, discretize, ellipse
from annulus_bem.nonlinearity import PrimitiveTerm, ScalarBC, constant, polynomial
from annulus_bem.perturbation import (
    CapacityDegeneracyError,
    NewtonFailure,
    PerturbState,
    PerturbedProblem,
    U_map,
    assemble_N,
    assemble_N_jacobian,
    continue_in_epsilon,
    inner_trace,
    jacobian_fd_error,
    local_uniqueness_error,
    newton_solve,
    solve_epsilon_zero,
)
from annulus_bem.potentials import classify_points
from annulus_bem.transmission import DensityState, TransmissionProblem, picard_solve, reconstruct

from conftest import ONE, PHI, T_OUTER

ZERO = constant(0.0)


def branch_oracle(eps: float) -> float:
    """Root continuing t = 2 of lam t + eps Phi(t) = 1 with lam = 1/2, by bracketing."""
    h = lambda t: 0.5 * t + eps * (t**3 - 2 * t**2 + 0.5 * t + 1.0) - 1.0
    return brentq(h, 1.0 + 1e-12, 2.0, xtol=1e-15) if eps > 0 else 2.0


@pytest.fixture(scope="module")
def bench(annulus128):
    return PerturbedProblem(*annulus128, T_OUTER, 0.5, PHI, ONE)


@pytest.fixture(scope="module")
def exact(bench):
    """The eps = 0 radial solution written directly as densities."""
    no, ni = bench.sizes
    return PerturbState(np.full(no, T_OUTER - 0.75 * math.log(2.0)), np.ones(ni), np.ones(ni))


@pytest.fixture(scope="module")
def branch(bench):
    return continue_in_epsilon(bench, 0.0, 1.2, 0.05, checkpoints=(0.5, 0.9))


def test_oracle_values():
    assert branch_oracle(0.5) == pytest.approx(1.4406, abs=1e-4)
    assert 0.5 * branch_oracle(0.5) ** 3 - branch_oracle(0.5) ** 2 + 0.75 * branch_oracle(0.5) - 0.5 == pytest.approx(0, abs=1e-14)


def test_U_map_examples(annulus128):
    outer, inner = annulus128
    no, ni = outer.N, inner.N
    p = PerturbedProblem(outer, inner, 0.0, 0.5, PHI, ONE)
    pts = np.array([[1.0, 0.3], [-1.6, 0.0], [0.1, 0.2], [0.0, -0.5]])
    fg = U_map(PerturbState(np.full(no, 0.7), np.zeros(ni), np.zeros(ni)), p, pts)
    assert np.abs(fg.values_in("annulus") - 0.7).max() < 1e-12
    assert np.abs(fg.values_in("inner") - 1.4).max() < 1e-12
    fg = U_map(PerturbState(np.zeros(no), np.zeros(ni), np.zeros(ni)), p, pts)
    assert np.all(fg.values == 0.0)
    p1 = PerturbedProblem(outer, inner, 0.0, 1.0, PHI, ONE)
    fg = U_map(PerturbState(np.zeros(no), np.ones(ni), np.ones(ni)), p1, pts)
    assert np.abs(fg.values_in("inner") - 0.75 * math.log(0.75)).max() < 1e-12
    assert fg.values_in("inner")[0] == pytest.approx(-0.2157615, abs=1e-7)


def test_exact_radial_state(bench, exact):
    assert max(np.abs(r).max() for r in assemble_N(0.0, exact, bench)) <= 1e-8
    assert np.abs(inner_trace(exact, bench) - 2.0).max() < 1e-12
    a = np.linspace(0, 2 * np.pi, 5, endpoint=False)
    fg = U_map(exact, bench, np.column_stack([np.cos(a), np.sin(a)]))
    assert np.abs(fg.values - (T_OUTER - 0.75 * math.log(2.0))).max() < 1e-9


def test_N_examples(bench):
    no, ni = bench.sizes
    z = PerturbState(np.zeros(no), np.zeros(ni), np.zeros(ni))
    p = PerturbedProblem(bench.outer, bench.inner, 1.0, 0.5, PHI, ONE)
    N_o, N_1, _ = assemble_N(0.3, z, p)
    assert np.abs(N_o + 1.0).max() < 1e-14
    assert np.abs(N_1 + 0.3).max() < 1e-14


def _random_states(problem, exact, rng, n=10):
    X = exact.to_vector()
    return [problem.state(X + 0.2 * rng.standard_normal(X.shape)) for _ in range(n)]


@pytest.mark.parametrize("eps", [0.0, 0.3])
def test_jacobian_matches_finite_differences(bench, exact, rng, eps):
    for st in _random_states(bench, exact, rng):
        d = rng.standard_normal(st.to_vector().shape)
        assert jacobian_fd_error(eps, st, bench, d) <= 1e-6


def test_jacobian_with_modulated_flux(annulus128, rng):
    G = ScalarBC(poly=(0.5,), terms=(PrimitiveTerm("tanh", 0.3),))
    p = PerturbedProblem(*annulus128, 1.0, 0.7, PHI, G)
    X = rng.standard_normal(sum(p.sizes) + p.inner.N)
    assert jacobian_fd_error(0.4, p.state(X), p, rng.standard_normal(X.shape)) <= 1e-6


def test_constant_flux_blocks(bench, exact, annulus128):
    no, ni = bench.sizes
    o, a, b = slice(0, no), slice(no, no + ni), slice(no + ni, None)
    Jm = assemble_N_jacobian(0.0, exact, bench)
    ops = bench.ops
    Ws = assemble_Wstar(bench.inner).matrix
    I = np.eye(ni)
    # Constant G: the flux row carries no trace-derivative terms.
    assert np.abs(Jm[b, o] - (-1.0) * ops.Dnw_oi).max() == 0.0
    assert np.abs(Jm[b, b] + 2.0 * (-0.5 * I + Ws)).max() < 1e-14
    assert np.abs(Jm[a, o]).max() == 0.0
    p1 = PerturbedProblem(*annulus128, T_OUTER, 1.0, PHI, ONE)
    J1 = assemble_N_jacobian(0.0, exact, p1)
    assert np.abs(J1[b, o]).max() == 0.0
    assert np.abs(J1[b, a] - (0.5 * I + Ws)).max() < 1e-14
    assert np.abs(J1[b, b] + (-0.5 * I + Ws)).max() < 1e-14


def test_epsilon_zero_benchmark(bench, exact):
    st = solve_epsilon_zero(bench)
    ui = inner_trace(st, bench)
    assert np.abs(ui - 2.0).max() < 1e-6
    assert np.abs(st.to_vector() - exact.to_vector()).max() < 1e-8
    assert np.array_equal(st.eta_o, st.eta_i)


def test_epsilon_zero_without_flux(annulus128):
    p = PerturbedProblem(*annulus128, 0.0, 0.5, PHI, ZERO)
    st = solve_epsilon_zero(p)
    assert np.abs(st.to_vector()).max() < 1e-14
    p = PerturbedProblem(*annulus128, 0.8, 0.5, PHI, ZERO)
    st = solve_epsilon_zero(p)
    assert np.abs(inner_trace(st, p) - 1.6).max() < 1e-10
    assert max(np.abs(r).max() for r in assemble_N(0.0, st, p)) < 1e-10


def test_epsilon_zero_rejects_superlinear_flux(annulus128):
    p = PerturbedProblem(*annulus128, 1.0, 0.5, PHI, polynomial(0.0, 1.0))
    with pytest.raises(ValueError):
        solve_epsilon_zero(p)


def test_sign_monitor_warns(annulus128):
    G = ScalarBC(poly=(1.0,), terms=(PrimitiveTerm("tanh", -0.5),))
    p = PerturbedProblem(*annulus128, T_OUTER, 0.5, PHI, G)
    with pytest.warns(RuntimeWarning, match="negative"):
        solve_epsilon_zero(p)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        solve_epsilon_zero(PerturbedProblem(*annulus128, T_OUTER, 0.5, PHI, ONE))


def test_newton_at_zero_is_immediate(bench):
    bp = newton_solve(bench, 0.0, solve_epsilon_zero(bench))
    assert bp.newton_iterations <= 2
    assert bp.residual <= 1e-10
    assert bp.sigma_min > 1e-3


def test_newton_at_half(bench, exact):
    bp = newton_solve(bench, 0.5, exact)
    assert bp.residual <= 1e-10
    assert bp.ui_mean == pytest.approx(branch_oracle(0.5), abs=1e-5)
    assert bp.ui_spread < 1e-8


def test_newton_failure_is_reported(bench, exact):
    with pytest.raises(NewtonFailure):
        newton_solve(bench, 0.5, exact, max_iter=1)


def test_continuation_follows_the_branch(branch):
    pts = {round(p.eps, 12): p for p in branch.points if not p.fold}
    for eps in (0.0, 0.5, 0.9):
        assert pts[eps].ui_mean == pytest.approx(branch_oracle(eps), abs=1e-5)
    assert all(p.residual <= 1e-10 for p in branch.points)
    assert branch.diagnostics["jacobian_fd_error"] <= 1e-6


def test_continuation_detects_fold(branch):
    assert branch.fold_detected and not branch.reached_end
    assert 0.95 <= branch.fold_eps <= 1.05
    last = branch.points[-1]
    assert last.fold and last.sigma_min < 1e-4
    assert last.ui_mean == pytest.approx(1.0, abs=1e-4)
    eps = [p.eps for p in branch.points]
    assert all(b > a for a, b in zip(eps, eps[1:]))
    assert max(eps) <= 1.05


def test_sigma_shrinks_towards_fold(branch):
    sig = [p.sigma_min for p in branch.points if p.eps >= 0.5]
    assert sig[-1] < 1e-2 * sig[0]


def test_linear_problem_is_flat(annulus128):
    p = PerturbedProblem(*annulus128, T_OUTER, 0.5, ZERO, ONE)
    res = continue_in_epsilon(p, 0.0, 1.2, 0.3)
    assert res.reached_end and not res.fold_detected
    assert len(res.points) == 5 and res.diagnostics["rejected_steps"] == 0
    assert max(abs(q.ui_mean - 2.0) for q in res.points) < 1e-9
    assert all(q.newton_iterations <= 1 for q in res.points)


def test_backward_continuation(bench):
    start = newton_solve(bench, 0.5, solve_epsilon_zero(bench))
    res = continue_in_epsilon(bench, 0.5, 0.0, 0.1, start.state)
    assert res.reached_end
    assert res.points[-1].ui_mean == pytest.approx(2.0, abs=1e-9)


def test_continuation_arguments(bench):
    with pytest.raises(ValueError):
        continue_in_epsilon(bench, 0.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        continue_in_epsilon(bench, 0.2, 1.0, 0.1)


def test_local_uniqueness(bench, branch):
    checked = 0
    for p in branch.points:
        if p.sigma_min >= 1e-3:
            assert local_uniqueness_error(bench, p, seed=checked) <= 10 * 1e-10
            checked += 1
    assert checked >= 5


def test_capacity_guard():
    outer = discretize(circle(2.0), 64)
    with pytest.raises(CapacityDegeneracyError) as info:
        PerturbedProblem(outer, discretize(circle(1.0), 64), 1.0, 0.5, PHI, ONE)
    assert abs(info.value.c) < 1e-6
    assert "rescale" in str(info.value).lower()
    ok = PerturbedProblem(outer, discretize(circle(0.75), 64), 1.0, 0.5, PHI, ONE)
    assert ok.equilibrium_constant * 2 * math.pi * 0.75 == pytest.approx(0.75 * math.log(0.75), abs=1e-8)


def test_problem_validation(annulus128):
    with pytest.raises(ValueError):
        PerturbedProblem(*annulus128, 1.0, 0.0, PHI, ONE)
    with pytest.raises(ValueError):
        PerturbedProblem(*annulus128, np.ones(3), 0.5, PHI, ONE)


def test_agrees_with_general_solver():
    """F = lam t + eps Phi in the general solver reproduces the perturbed branch."""
    outer = discretize(circle(2.0), 128)
    # 1.2 x 0.8 would have capacity (a + b) / 2 = 1, which the guard rejects.
    inner = discretize(ellipse(1.0, 0.6, center=(0.2, 0.1)), 128)
    f = 1.0 + 0.2 * np.cos(outer.s)
    lam, eps = 0.5, 0.5
    pp = PerturbedProblem(outer, inner, f, lam, PHI, ONE)
    bp = continue_in_epsilon(pp, 0.0, eps, 0.1).points[-1]
    assert bp.eps == eps
    F = polynomial(eps, lam + 0.5 * eps, -2.0 * eps, eps)
    gp = TransmissionProblem(outer, inner, f, F, ONE)
    s, rep = picard_solve(DensityState.zeros(gp), gp, tol=1e-11, max_iter=2000)
    assert rep.converged, rep.message
    x = np.linspace(-1.9, 1.9, 9)
    P = np.array([[a, b] for a in x for b in x])
    P = P[np.isin(classify_points(P, outer.curve, inner.curve), ("annulus", "inner"))]
    assert len(P) > 30
    g1 = reconstruct(s, gp, P)
    g2 = U_map(bp.state, pp, P)
    assert list(g1.region) == list(g2.region)
    assert np.abs(g1.values - g2.values).max() < 1e-5

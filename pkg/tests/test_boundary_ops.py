import math

import numpy as np
import pytest

from annulus_bem.boundary_ops import (
    AnnulusOperators,
    OperatorMatrix,
    assemble_cross,
    assemble_J,
    assemble_J_lambda,
    assemble_V,
    assemble_W,
    assemble_Wstar,
    equilibrium_density,
    jump_relation_errors,
    operator_identity_report,
    random_trig_densities,
    smallest_singular_value,
    solve_half_plus_W,
    solve_half_plus_Wstar,
)
from annulus_bem.geometry import circle, discretize, ellipse, trig_curve

CATALOG = [circle(0.75), ellipse(1.2, 0.8), trig_curve([1.0, 0.0, 0.08], [], [], [0.9, 0.0, -0.05])]


def test_V_eigenvalues_on_circle():
    a = 0.75
    b = discretize(circle(a), 64)
    V = assemble_V(b).matrix
    np.testing.assert_allclose(V @ np.ones(64), a * math.log(a), atol=1e-12)
    np.testing.assert_allclose(V @ np.cos(b.s), -a / 2 * np.cos(b.s), atol=1e-12)
    for k in range(2, 9):
        np.testing.assert_allclose(V @ np.sin(k * b.s), -a / (2 * k) * np.sin(k * b.s), atol=1e-10)


def test_V_on_unit_circle_kills_constants():
    b = discretize(circle(1.0), 64)
    assert np.abs(assemble_V(b).matrix @ np.ones(64)).max() < 1e-13


@pytest.mark.parametrize("curve", CATALOG)
def test_W_row_sums_and_weighted_columns(curve):
    b = discretize(curve, 128)
    W, Ws = assemble_W(b), assemble_Wstar(b)
    assert np.abs(W @ np.ones(128) - 0.5).max() < 1e-10
    assert np.abs(b.weights @ (Ws.matrix - 0.5 * np.eye(128))).max() < 1e-8


def test_W_on_circle_is_rank_one():
    b = discretize(circle(0.75), 64)
    assert np.abs(assemble_W(b) @ np.cos(b.s)).max() < 1e-14


@pytest.mark.parametrize("curve", CATALOG)
def test_adjointness(curve, rng):
    b = discretize(curve, 128)
    psi, phi = rng.standard_normal((2, 128))
    lhs = np.dot(assemble_W(b) @ psi, b.weights * phi)
    rhs = np.dot(psi, b.weights * (assemble_Wstar(b) @ phi))
    assert abs(lhs - rhs) < 1e-10


def test_operator_matrix_metadata():
    b = discretize(circle(0.75), 64)
    W = assemble_W(b)
    assert isinstance(W, OperatorMatrix) and W.tag == "W" and W.matrix.shape == (64, 64)
    assert W.source is b and W.target is b
    with pytest.raises(ValueError):
        W.matrix[0, 0] = 1.0


def test_cross_operators_concentric(annulus128):
    outer, inner = annulus128
    cv = assemble_cross(inner, outer, "cross-v")
    np.testing.assert_allclose(cv @ np.ones(128), 0.75 * math.log(2), atol=1e-12)
    cw = assemble_cross(inner, outer, "cross-w")
    assert np.abs(cw @ np.ones(128)).max() < 1e-12
    dnw = assemble_cross(outer, inner, "cross-dnw")
    assert np.abs(dnw @ np.ones(128)).max() < 1e-12
    assert cv.matrix.shape == (128, 128) and cv.tag == "cross-v"


def test_cross_operator_refuses_touching_boundaries():
    with pytest.raises(ValueError):
        assemble_cross(discretize(circle(1.9995), 64), discretize(circle(2.0), 64), "cross-v")


def test_half_plus_W_solves():
    b = discretize(circle(0.75), 64)
    np.testing.assert_allclose(solve_half_plus_W(b, np.ones(64)), 1.0, atol=1e-13)
    np.testing.assert_allclose(solve_half_plus_W(b, np.cos(b.s)), 2 * np.cos(b.s), atol=1e-13)
    assert np.all(solve_half_plus_W(b, np.zeros(64)) == 0.0)
    e = discretize(ellipse(1.2, 0.8), 128)
    rhs = np.sin(e.s) + 0.3
    x = solve_half_plus_Wstar(e, rhs)
    assert np.abs(0.5 * x + assemble_Wstar(e) @ x - rhs).max() <= 1e-10 * np.abs(rhs).max()


def test_J_examples(annulus128):
    outer, inner = annulus128
    J = assemble_J(outer, inner)
    np.testing.assert_allclose(J @ np.ones(128), 1.0, atol=1e-12)
    assert np.all(J @ np.zeros(128) == 0.0)


def test_J_lambda_examples(annulus128):
    outer, inner = annulus128
    assert np.array_equal(assemble_J_lambda(outer, inner, 1.0).matrix, 0.5 * np.eye(128))
    np.testing.assert_allclose(assemble_J_lambda(outer, inner, 0.5) @ np.ones(128), 1 / 3, atol=1e-12)
    with pytest.raises(ValueError):
        assemble_J_lambda(outer, inner, -1.0)


@pytest.mark.parametrize("lam", [None, 0.5, 3.0])
def test_composite_singular_values_stable_under_refinement(lam):
    o, i = circle(2.0), ellipse(1.0, 0.6, (0.2, 0.1))
    svs = []
    for n in (64, 128):
        ob, ib = discretize(o, n), discretize(i, n)
        M = assemble_J(ob, ib) if lam is None else assemble_J_lambda(ob, ib, lam)
        svs.append(smallest_singular_value(M.matrix))
    assert abs(svs[1] - svs[0]) <= 0.1 * svs[0]


def test_equilibrium_density_on_circles():
    # Unit-mass density; c is the constant value of its single layer on the curve.
    psi, c = equilibrium_density(discretize(circle(1.0), 64))
    np.testing.assert_allclose(psi, 1 / (2 * math.pi), atol=1e-13)
    assert abs(c) < 1e-13
    b = discretize(circle(0.75), 64)
    psi, c = equilibrium_density(b)
    np.testing.assert_allclose(psi, 1 / (1.5 * math.pi), atol=1e-12)
    assert c == pytest.approx(math.log(0.75) / (2 * math.pi), abs=1e-13)
    assert c * b.weights.sum() == pytest.approx(0.75 * math.log(0.75), abs=1e-12)
    b2 = discretize(circle(2.0), 64)
    assert equilibrium_density(b2)[1] * b2.weights.sum() == pytest.approx(2 * math.log(2), abs=1e-12)


@pytest.mark.parametrize("curve", CATALOG)
def test_null_space_and_uniform_invertibility(curve):
    rep = operator_identity_report(discretize(curve, 64), jumps=False)
    assert rep["W_row_sum_error"] < 1e-10
    assert rep["sv_half_plus_W"] > 0.1
    # On circles the constant mode gives exactly (1 - |tau|)/2.
    for tau, sv in rep["sv_half_plus_tau_Wstar"].items():
        assert sv >= 0.9 * (1 - abs(float(tau))) / 2


@pytest.mark.parametrize("curve", [circle(0.75), ellipse(1.2, 0.8)])
def test_jump_relations(curve):
    b = discretize(curve, 128)
    errs = jump_relation_errors(b, random_trig_densities(b, 5, seed=3))
    assert set(errs) == {
        "double_layer_interior", "double_layer_exterior",
        "single_layer_flux_interior", "single_layer_flux_exterior", "double_layer_flux_nojump",
    }
    assert max(errs.values()) <= 1e-4


def test_annulus_operator_cache(annulus128):
    ops = AnnulusOperators(*annulus128)
    assert ops.A_o is ops.A_o
    x = ops.J_lambda_lu(0.5).solve(np.ones(128))
    np.testing.assert_allclose(x, 3.0, atol=1e-11)

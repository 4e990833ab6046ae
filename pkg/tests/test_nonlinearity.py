import numpy as np
import pytest

from annulus_bem.geometry import circle, discretize, ellipse
from annulus_bem.nonlinearity import (
    AssumptionViolation,
    Modulation,
    PrimitiveTerm,
    ScalarBC,
    apply_superposition,
    apply_superposition_dt,
    audit_growth,
    constant,
    invert_id_plus_F,
    polynomial,
    real_roots,
    sublinear_audit,
)

from conftest import CUBIC


@pytest.fixture(scope="module")
def b():
    return discretize(ellipse(1.2, 0.8), 64)


def test_superposition_examples(b):
    np.testing.assert_array_equal(apply_superposition(CUBIC, b, np.zeros(64)), 1.0)
    np.testing.assert_array_equal(apply_superposition(CUBIC, b, np.ones(64)), 1.0)
    np.testing.assert_array_equal(apply_superposition(constant(1.0), b, np.linspace(-5, 5, 64)), 1.0)


def test_inverse_examples(b):
    cube = polynomial(0, 0, 0, 1)
    np.testing.assert_array_equal(invert_id_plus_F(cube, b, np.full(64, 10.0)), 2.0)
    np.testing.assert_array_equal(invert_id_plus_F(cube, b, np.zeros(64)), 0.0)
    np.testing.assert_allclose(invert_id_plus_F(CUBIC, b, np.ones(64)), 0.0, atol=1e-12)


def test_inverse_reports_multiple_roots(b):
    F = polynomial(0, -3, 0, 1)  # t + F = t^3 - 2t has three roots at 0
    with pytest.raises(AssumptionViolation) as info:
        invert_id_plus_F(F, b, np.zeros(64))
    assert info.value.node is not None
    assert len(info.value.roots) == 3


def test_inverse_reports_missing_root(b):
    with pytest.raises(AssumptionViolation):
        invert_id_plus_F(constant(0.0), b, np.full(64, 5e3), T=1e3)


def _modulated():
    return ScalarBC(
        (0.5, 1.0, -0.2, 1.0),
        (Modulation(1, (0.3,), (0.0, 0.1)), Modulation(3, (), (0.2,))),
        (PrimitiveTerm("atan", 0.4, 2.0, 0.1), PrimitiveTerm("tanh", -0.3, 1.5, 0.0)),
    )


@pytest.mark.parametrize("F", [CUBIC, polynomial(0, 0, 0, 1), _modulated()])
def test_round_trip(b, F, rng):
    t = rng.uniform(-3, 3, 64)
    forward = t + apply_superposition(F, b, t)
    np.testing.assert_allclose(invert_id_plus_F(F, b, forward), t, atol=1e-10)
    f = rng.uniform(-20, 20, 64)
    tt = invert_id_plus_F(F, b, f)
    np.testing.assert_allclose(tt + apply_superposition(F, b, tt), f, atol=1e-10)


@pytest.mark.parametrize("H", [CUBIC, _modulated(), ScalarBC((), (), (PrimitiveTerm("sin", 1.0, 3.0, 0.2), PrimitiveTerm("cos", 0.5, 0.7, 0.0)))])
def test_derivative_matches_finite_differences(H, b, rng):
    t = rng.uniform(-2, 2, 64)
    h = 1e-6
    fd = (apply_superposition(H, b, t + h) - apply_superposition(H, b, t - h)) / (2 * h)
    an = apply_superposition_dt(H, b, t)
    assert np.abs(fd - an).max() <= 1e-6 * max(1.0, np.abs(an).max())


def test_tanh_derivative_is_finite_for_large_arguments():
    H = ScalarBC((), (), (PrimitiveTerm("tanh", 1.0, 1.0, 0.0),))
    assert H.dt(0.0, np.array([1e3]))[0] == 0.0


def test_growth_certificate_for_the_cubic():
    cert = audit_growth(CUBIC, constant(1.0), discretize(circle(0.75), 64))
    assert cert.passed and cert.superlinear_ok and cert.sublinear_ok
    assert cert.delta1 == 3 and cert.delta2 == 0
    assert cert.c1 > 0 and cert.c2 > 0


def test_growth_fails_for_linear_F():
    cert = audit_growth(polynomial(0, 1), constant(1.0))
    assert not cert.superlinear_ok and not cert.passed


def test_growth_exponent_ratio():
    cert = audit_growth(polynomial(0, 0, 0, 1), polynomial(0, 0, 1))
    assert cert.delta2 == pytest.approx(2 / 3, abs=1e-12)
    assert cert.passed
    assert cert.diagnostics["delta2_fit"] == pytest.approx(2 / 3, abs=0.02)


def test_sublinear_audit():
    assert sublinear_audit(constant(1.0))[0]
    assert sublinear_audit(ScalarBC((), (), (PrimitiveTerm("atan", 2.0),)))[0]
    assert not sublinear_audit(polynomial(0, 1))[0]


def test_real_roots_keeps_double_roots():
    # t (t - 1)^2
    assert real_roots([0.0, 1.0, -2.0, 1.0], -5, 5) == pytest.approx([0.0, 1.0], abs=1e-9)
    # Two roots 1e-7 apart.
    roots = real_roots(np.polynomial.polynomial.polyfromroots([0.3, 0.3 + 1e-7]), -1, 1)
    assert len(roots) == 2


def test_describe_and_algebra():
    H = CUBIC + constant(2.0)
    assert H.poly == (3.0, 1.0, -2.0, 1.0)
    assert CUBIC.scaled(2.0)(1.0) == pytest.approx(2.0)
    assert H.describe()["poly"] == [3.0, 1.0, -2.0, 1.0]
    with pytest.raises(ValueError):
        PrimitiveTerm("exp")
    with pytest.raises(ValueError):
        polynomial(float("nan"))

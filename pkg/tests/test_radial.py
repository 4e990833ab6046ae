import math

import numpy as np
import pytest

from annulus_bem.radial import (
    RadialProblem,
    gamma,
    gamma_prime,
    radial_fields,
    radial_outer_flux,
    radial_outer_value,
    radial_ratio,
    radial_roots,
    radial_scan_summary,
    radial_small_roots,
)
from annulus_bem.nonlinearity import constant, polynomial

from conftest import CUBIC, ONE, PHI, T_OUTER


def bench(**kw):
    return RadialProblem(2, 2.0, 0.75, T_OUTER, CUBIC, ONE, **kw)


def small(eps):
    return RadialProblem(2, 2.0, 0.75, T_OUTER, None, ONE, 0.5, PHI, eps)


def _real_cubic_roots(coeffs_desc):
    """Independent oracle: real eigenvalues of the companion matrix."""
    r = np.roots(coeffs_desc)
    return sorted(float(x.real) for x in r if abs(x.imag) < 1e-9)


def test_gamma_values():
    assert gamma(2, 1.0) == 0.0
    assert gamma_prime(2, 0.75) == pytest.approx(1 / (2 * math.pi * 0.75), rel=1e-15)
    assert gamma(3, 2.0) == pytest.approx(-1 / (8 * math.pi), rel=1e-15)
    assert gamma_prime(3, 2.0) == pytest.approx(1 / (16 * math.pi), rel=1e-15)
    with pytest.raises(ValueError):
        gamma(2, 0.0)
    with pytest.raises(ValueError):
        gamma_prime(3, -1.0)
    with pytest.raises(ValueError):
        gamma(4, 1.0)


def test_problem_validation():
    with pytest.raises(ValueError):
        RadialProblem(2, 1.0, 2.0, 0.0, CUBIC, ONE)
    with pytest.raises(ValueError):
        RadialProblem(2, 2.0, 1.0, 0.0, None, ONE, -0.5, PHI, 0.0)


def test_ratio_in_two_dimensions():
    assert radial_ratio(bench()) == pytest.approx(0.75 * math.log(2 / 0.75), rel=1e-15)


def test_two_solution_benchmark():
    assert radial_roots(bench()) == pytest.approx([0.0, 1.0], abs=1e-12)


def test_tangential_root_needs_tangency_detection():
    # 100000 points: t = 1 is not a grid node, so only the simple root has a sign change.
    assert radial_roots(bench(), grid=100_000, tangential=False) == pytest.approx([0.0], abs=1e-12)
    assert radial_roots(bench(), grid=100_000) == pytest.approx([0.0, 1.0], abs=1e-9)


def test_rounded_outer_value_breaks_the_double_root():
    # The 6e-8 rounding error splits the double root at 1 into a pair.
    p = RadialProblem(2, 2.0, 0.75, 1.7356220, CUBIC, ONE)
    roots = radial_roots(p)
    assert len(roots) == 3 and abs(roots[0]) < 1e-6
    assert 1e-4 < 1.0 - roots[1] < 1e-3 and 1e-4 < roots[2] - 1.0 < 1e-3


def test_other_radial_examples():
    p = RadialProblem(2, 2.0, 0.75, 3.0, CUBIC, constant(0.0))
    assert radial_roots(p) == pytest.approx([2.0], abs=1e-12)
    p = RadialProblem(2, 2.0, 0.75, 5.0, polynomial(0, 1), constant(0.0))
    assert radial_roots(p) == pytest.approx([5.0], abs=1e-12)


def test_perturbed_roots():
    assert radial_small_roots(small(1.0)) == pytest.approx([0.0, 1.0], abs=1e-9)
    assert radial_small_roots(small(0.0)) == pytest.approx([2.0], abs=1e-12)
    r15 = radial_small_roots(small(1.5))
    assert len(r15) == 1 and abs(r15[0] + 0.243) <= 1e-3
    assert r15 == pytest.approx(_real_cubic_roots([1.5, -3.0, 1.25, 0.5]), abs=1e-10)
    assert radial_small_roots(small(0.5)) == pytest.approx(_real_cubic_roots([0.5, -1.0, 0.75, -0.5]), abs=1e-10)
    assert radial_small_roots(small(0.5))[0] == pytest.approx(1.4406, abs=1e-4)


def test_roots_stable_under_grid_refinement():
    for p, fn in ((bench(), radial_roots), (small(0.9), radial_small_roots), (small(1.5), radial_small_roots)):
        a, b = fn(p, grid=100_001), fn(p, grid=200_001)
        assert len(a) == len(b)
        assert np.abs(np.subtract(a, b)).max() <= 1e-10


def test_closed_form_fields():
    p = bench()
    assert radial_outer_value(p, 0.0, 2.0) == pytest.approx(T_OUTER, abs=1e-15)
    assert radial_outer_value(p, 0.0, 1.0) == pytest.approx(T_OUTER - 0.75 * math.log(2), abs=1e-15)
    assert radial_outer_value(p, 0.0, 1.0) == pytest.approx(1.2157616, abs=1e-7)
    assert radial_outer_flux(p, 0.0, 0.75) == pytest.approx(1.0, abs=1e-12)
    fg = radial_fields(p, 1.0, [[0.0, 0.0], [0.5, 0.0], [1.0, 0.0], [0.0, 2.0]])
    assert list(fg.region) == ["inner", "inner", "annulus", "annulus"]
    np.testing.assert_allclose(fg.values[:2], 1.0)
    with pytest.raises(ValueError):
        radial_fields(p, 0.0, [[2.5, 0.0]])


@pytest.mark.parametrize("n", [2, 3])
def test_fields_satisfy_the_transmission_conditions(n):
    R, r = 2.0, 0.75
    p = RadialProblem(n, R, r, 0.0, CUBIC, ONE)
    ratio = radial_ratio(p)
    p = RadialProblem(n, R, r, float(CUBIC(1.0) + ratio), CUBIC, ONE)  # t = 1 is a root by construction
    t = 1.0
    assert radial_outer_value(p, t, R) == pytest.approx(p.t_outer, abs=1e-14)
    assert abs(radial_outer_value(p, t, r) - CUBIC(t)) <= 1e-12
    h = 1e-5
    fd = (radial_outer_value(p, t, r + h) - radial_outer_value(p, t, r - h)) / (2 * h)
    assert abs(radial_outer_flux(p, t, r) - 1.0) <= 1e-12
    assert abs(fd - 1.0) <= 1e-8
    assert any(abs(x - 1.0) < 1e-9 for x in radial_roots(p))


def test_continuum_reported_as_interval():
    # f = 1 on [0, 1], g = 0, t_outer = 1: every t in [0, 1] solves.
    f = lambda t: 1.0 + np.maximum(np.asarray(t) - 1.0, 0.0) + np.minimum(np.asarray(t), 0.0)  # noqa: E731
    p = RadialProblem(2, 2.0, 0.75, 1.0, f, lambda t: np.zeros_like(np.asarray(t, dtype=float)))
    iv = radial_scan_summary(p, interval=(-2.0, 3.0), grid=5001)
    assert len(iv) == 1
    assert iv[0] == pytest.approx((0.0, 1.0), abs=1e-9)


def test_search_interval_validated():
    with pytest.raises(ValueError):
        radial_roots(bench(), interval=(1.0, -1.0))

"""Closed-form solutions for concentric discs (n = 2) and balls (n = 3).

With Omega^o the ball of radius R and Omega^i the ball of radius r, a constant
inner state u^i = t is a solution exactly when

    f(t) + ratio * g(t) = t^o,     ratio = (Gamma(R) - Gamma(r)) / Gamma'(r),

and then u^o(x) = t^o - (Gamma(R) - Gamma(|x|)) / Gamma'(r) * g(t).
In the perturbed form f(t) is replaced by lam * t + eps * phi(t).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .fields import FieldGrid
from .nonlinearity import ScalarBC, _bisect, real_roots
from .potentials import sphere_measure

__all__ = [
    "RadialProblem",
    "gamma",
    "gamma_prime",
    "radial_ratio",
    "radial_roots",
    "radial_small_roots",
    "radial_scan_summary",
    "radial_fields",
    "radial_outer_value",
    "radial_outer_flux",
    "DEFAULT_INTERVAL",
    "DEFAULT_GRID",
]

DEFAULT_INTERVAL = (-1e3, 1e3)
DEFAULT_GRID = 100_001
TANGENCY_TOL = 1e-8

ScalarFn = ScalarBC | Callable[[np.ndarray], np.ndarray]


def _check_dim(n: int) -> None:
    if n not in (2, 3):
        raise ValueError(f"dimension must be 2 or 3, got {n}")


def gamma(n: int, t) -> np.ndarray | float:
    """Radial profile of the fundamental solution: log t/(2 pi) for n = 2, t^(2-n)/(s_n (2-n)) otherwise."""
    _check_dim(n)
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ValueError("gamma is defined for t > 0 only")
    out = np.log(t) / (2.0 * math.pi) if n == 2 else t ** (2 - n) / (sphere_measure(n) * (2 - n))
    return float(out) if out.ndim == 0 else out


def gamma_prime(n: int, t) -> np.ndarray | float:
    _check_dim(n)
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ValueError("gamma is defined for t > 0 only")
    out = t ** (1 - n) / sphere_measure(n)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class RadialProblem:
    n: int
    R: float
    r: float
    t_outer: float
    f: ScalarFn
    g: ScalarFn
    lam: float | None = None
    phi: ScalarFn | None = None
    eps: float | None = None
    center: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        _check_dim(self.n)
        if not (self.R > self.r > 0):
            raise ValueError(f"need R > r > 0, got R={self.R}, r={self.r}")
        if self.lam is not None and not self.lam > 0:
            raise ValueError("lambda must be positive")

    @property
    def origin(self) -> np.ndarray:
        return np.asarray(self.center, dtype=float) if self.center else np.zeros(self.n)

    def with_eps(self, eps: float) -> "RadialProblem":
        return RadialProblem(self.n, self.R, self.r, self.t_outer, self.f, self.g, self.lam, self.phi, eps, self.center)


def radial_ratio(p: RadialProblem) -> float:
    """(Gamma(R) - Gamma(r)) / Gamma'(r); equals r log(R/r) in 2D."""
    if p.n == 2:
        return p.r * math.log(p.R / p.r)
    return (gamma(p.n, p.R) - gamma(p.n, p.r)) / gamma_prime(p.n, p.r)


def _val(h: ScalarFn, t):
    return h.value(0.0, t) if isinstance(h, ScalarBC) else np.asarray(h(t), dtype=float)


def _der(h: ScalarFn, t):
    if isinstance(h, ScalarBC):
        return h.dt(0.0, t)
    d = getattr(h, "dt", None)
    if d is not None:
        return np.asarray(d(t), dtype=float)
    step = 1e-6 * np.maximum(1.0, np.abs(t))
    return (np.asarray(h(t + step)) - np.asarray(h(t - step))) / (2.0 * step)


def _poly(h: ScalarFn) -> np.ndarray | None:
    if isinstance(h, ScalarBC) and h.is_polynomial and h.x_independent:
        return np.array(h.poly if h.poly else (0.0,), dtype=float)
    return None


def _padd(a, b):
    n = max(len(a), len(b))
    out = np.zeros(n)
    out[: len(a)] += a
    out[: len(b)] += b
    return out


def _expression(p: RadialProblem, small: bool):
    ratio = radial_ratio(p)
    if small:
        if p.lam is None or p.phi is None or p.eps is None:
            raise ValueError("perturbed form needs lam, phi and eps")
        lam, eps, phi = p.lam, p.eps, p.phi
        e = lambda t: lam * np.asarray(t) + eps * _val(phi, t) + ratio * _val(p.g, t) - p.t_outer  # noqa: E731
        de = lambda t: lam + eps * _der(phi, t) + ratio * _der(p.g, t)  # noqa: E731
        pp, pg = _poly(phi), _poly(p.g)
        coeffs = None if pp is None or pg is None else _padd(_padd(np.array([-p.t_outer, lam]), eps * pp), ratio * pg)
    else:
        e = lambda t: _val(p.f, t) + ratio * _val(p.g, t) - p.t_outer  # noqa: E731
        de = lambda t: _der(p.f, t) + ratio * _der(p.g, t)  # noqa: E731
        pf, pg = _poly(p.f), _poly(p.g)
        coeffs = None if pf is None or pg is None else _padd(_padd(pf, ratio * pg), np.array([-p.t_outer]))
    return e, de, coeffs


def _merge(roots: list[float]) -> list[float]:
    out: list[float] = []
    for r in sorted(roots):
        if not out or abs(r - out[-1]) > 1e-9 * max(1.0, abs(r)):
            out.append(float(r))
    return out


def _find_roots(e, de, coeffs, interval, grid, tangential) -> list[float]:
    lo, hi = map(float, interval)
    if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
        raise ValueError("search interval must be finite with lo < hi")
    t = np.linspace(lo, hi, int(grid))
    v = np.asarray(e(t), dtype=float)
    fe = lambda x: float(e(x))  # noqa: E731
    roots = list(t[v == 0.0])
    for i in np.nonzero(np.sign(v[:-1]) * np.sign(v[1:]) < 0)[0]:
        roots.append(_bisect(fe, t[i], t[i + 1], v[i], v[i + 1]))
    if tangential:
        dv = np.asarray(de(t), dtype=float) * np.ones_like(t)
        fd = lambda x: float(de(x))  # noqa: E731
        crit = list(t[dv == 0.0])
        for i in np.nonzero(np.sign(dv[:-1]) * np.sign(dv[1:]) < 0)[0]:
            crit.append(_bisect(fd, t[i], t[i + 1], dv[i], dv[i + 1]))
        roots += [c for c in crit if abs(fe(c)) < TANGENCY_TOL]
    if coeffs is not None:
        # Critical-point bracketing catches pairs of roots inside one grid cell.
        for x in real_roots(coeffs, lo, hi, touch_tol=1e-15 if tangential else 0.0):
            if abs(fe(x)) >= TANGENCY_TOL:
                continue
            d = 1e-9 * max(1.0, abs(x))
            if tangential or fe(x - d) * fe(x + d) < 0:
                roots.append(x)
    return _merge(roots)


def radial_roots(p: RadialProblem, interval=DEFAULT_INTERVAL, grid: int = DEFAULT_GRID, *, tangential: bool = True) -> list[float]:
    """Inner constants t^i solving f(t) + ratio g(t) = t^o in ``interval``.

    Sign changes on a uniform scan are refined by bisection. With
    ``tangential`` (the default) critical points where the expression is below
    1e-8 in magnitude are reported as even-multiplicity roots.
    """
    e, de, coeffs = _expression(p, small=False)
    return _find_roots(e, de, coeffs, interval, grid, tangential)


def radial_small_roots(p: RadialProblem, interval=DEFAULT_INTERVAL, grid: int = DEFAULT_GRID, *, tangential: bool = True) -> list[float]:
    """Roots of lam t + eps phi(t) + ratio g(t) = t^o."""
    e, de, coeffs = _expression(p, small=True)
    return _find_roots(e, de, coeffs, interval, grid, tangential)


def radial_scan_summary(p: RadialProblem, interval=DEFAULT_INTERVAL, grid: int = DEFAULT_GRID, *, small: bool = False, tol: float = 1e-12) -> list[tuple[float, float]]:
    """Maximal runs of scan points where |expression| <= tol, as closed intervals.

    Intended for degenerate problems whose solution set contains intervals.
    """
    e, _, _ = _expression(p, small=small)
    t = np.linspace(float(interval[0]), float(interval[1]), int(grid))
    flat = np.abs(np.asarray(e(t), dtype=float)) <= tol
    out = []
    i = 0
    while i < len(t):
        if flat[i]:
            j = i
            while j + 1 < len(t) and flat[j + 1]:
                j += 1
            out.append((float(t[i]), float(t[j])))
            i = j + 1
        else:
            i += 1
    return out


def radial_outer_value(p: RadialProblem, t_inner: float, rho) -> np.ndarray | float:
    g = float(_val(p.g, t_inner))
    return p.t_outer - (gamma(p.n, p.R) - gamma(p.n, rho)) / gamma_prime(p.n, p.r) * g


def radial_outer_flux(p: RadialProblem, t_inner: float, rho) -> np.ndarray | float:
    """Radial derivative of u^o at distance ``rho`` from the centre."""
    g = float(_val(p.g, t_inner))
    return gamma_prime(p.n, rho) / gamma_prime(p.n, p.r) * g


def radial_fields(p: RadialProblem, t_inner: float, points) -> FieldGrid:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != p.n:
        raise ValueError(f"points must have dimension {p.n}")
    rho = np.linalg.norm(pts - p.origin, axis=1)
    if np.any(rho > p.R * (1 + 1e-14)):
        raise ValueError("points outside the outer ball")
    inner = rho < p.r
    vals = np.full(len(pts), float(t_inner))
    if np.any(~inner):
        vals[~inner] = radial_outer_value(p, t_inner, np.minimum(rho[~inner], p.R))
    region = np.where(inner, "inner", "annulus")
    return FieldGrid(pts, region, vals)

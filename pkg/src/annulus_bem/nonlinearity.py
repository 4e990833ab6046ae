"""Scalar boundary nonlinearities H(x, t), their superposition operators and growth audits.

A :class:`ScalarBC` is

    H(s, t) = sum_k c_k(s) t^k + sum_j a_j prim_j(b_j t + d_j)

where ``s`` is the boundary parameter, each polynomial coefficient may be
modulated along the boundary by a finite Fourier series, and ``prim`` is one of
the bounded primitives ``sin``, ``cos``, ``tanh``, ``atan``.
"""

from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as P

from .geometry import DiscreteBoundary

__all__ = [
    "AssumptionViolation",
    "Modulation",
    "PrimitiveTerm",
    "ScalarBC",
    "GrowthCertificate",
    "polynomial",
    "constant",
    "apply_superposition",
    "apply_superposition_dt",
    "invert_id_plus_F",
    "audit_growth",
    "sublinear_audit",
    "real_roots",
]

log = logging.getLogger(__name__)

DEFAULT_BRACKET = 1e3

_PRIMITIVES = {
    "sin": (np.sin, np.cos),
    "cos": (np.cos, lambda z: -np.sin(z)),
    "tanh": (np.tanh, lambda z: 1.0 - np.tanh(z) ** 2),
    "atan": (np.arctan, lambda z: 1.0 / (1.0 + z * z)),
}


class AssumptionViolation(ValueError):
    """t -> t + F(x, t) has no unique root in the search bracket at some node."""

    def __init__(self, message: str, node: int | None = None, roots=()):
        super().__init__(message)
        self.node = node
        self.roots = list(roots)


@dataclass(frozen=True)
class Modulation:
    """Fourier modulation of the coefficient of t**power: sum_m cos_m cos(ms) + sin_m sin(ms)."""

    power: int
    cos: tuple[float, ...] = ()
    sin: tuple[float, ...] = ()

    def __call__(self, s: np.ndarray) -> np.ndarray:
        out = np.zeros_like(s, dtype=float)
        for m, a in enumerate(self.cos, start=1):
            out += a * np.cos(m * s)
        for m, b in enumerate(self.sin, start=1):
            out += b * np.sin(m * s)
        return out


@dataclass(frozen=True)
class PrimitiveTerm:
    fn: str
    coef: float = 1.0
    scale: float = 1.0
    shift: float = 0.0

    def __post_init__(self) -> None:
        if self.fn not in _PRIMITIVES:
            raise ValueError(f"unknown primitive {self.fn!r}; choose from {sorted(_PRIMITIVES)}")


@dataclass(frozen=True)
class ScalarBC:
    poly: tuple[float, ...] = ()
    modulation: tuple[Modulation, ...] = ()
    terms: tuple[PrimitiveTerm, ...] = ()
    label: str = field(default="", compare=False)

    def __post_init__(self) -> None:
        vals = list(self.poly) + [c for m in self.modulation for c in m.cos + m.sin]
        vals += [v for p in self.terms for v in (p.coef, p.scale, p.shift)]
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("coefficients must be finite")
        for m in self.modulation:
            if m.power < 0:
                raise ValueError("modulated power must be non-negative")

    # --- structure ---------------------------------------------------------------

    @property
    def kind(self) -> str:
        if self.terms:
            return "composite"
        if len(self.poly) <= 2 and not self.modulation:
            return "affine"
        return "polynomial"

    @property
    def is_polynomial(self) -> bool:
        return not self.terms

    @property
    def x_independent(self) -> bool:
        return not any(any(m.cos) or any(m.sin) for m in self.modulation)

    @property
    def degree(self) -> int:
        powers = [k for k, c in enumerate(self.poly) if c != 0.0]
        powers += [m.power for m in self.modulation if any(m.cos) or any(m.sin)]
        return max(powers, default=-1)

    def coefficients(self, s) -> np.ndarray:
        """Polynomial coefficients at each parameter value, shape (len(s), degree+1)."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        d = max(self.degree, 0)
        c = np.zeros((len(s), d + 1))
        for k, a in enumerate(self.poly[: d + 1]):
            c[:, k] += a
        for m in self.modulation:
            c[:, m.power] += m(s)
        return c

    # --- evaluation --------------------------------------------------------------

    def _poly_part(self, s, t, deriv: int) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        s, t = np.broadcast_arrays(s, t)
        if self.x_independent:
            c = np.array(self.poly if self.poly else (0.0,), dtype=float)
            for _ in range(deriv):
                c = P.polyder(c) if len(c) > 1 else np.zeros(1)
            return P.polyval(t, c)
        flat_s, flat_t = s.ravel(), t.ravel()
        c = self.coefficients(flat_s)
        for _ in range(deriv):
            c = c[:, 1:] * np.arange(1, c.shape[1]) if c.shape[1] > 1 else np.zeros((len(flat_s), 1))
        # Horner across the per-point coefficient rows.
        acc = np.zeros_like(flat_t)
        for k in range(c.shape[1] - 1, -1, -1):
            acc = acc * flat_t + c[:, k]
        return acc.reshape(t.shape)

    def value(self, s, t) -> np.ndarray:
        out = self._poly_part(s, t, 0)
        for term in self.terms:
            f, _ = _PRIMITIVES[term.fn]
            out = out + term.coef * f(term.scale * np.asarray(t, dtype=float) + term.shift)
        return out

    def dt(self, s, t) -> np.ndarray:
        """Analytic partial derivative in t."""
        out = self._poly_part(s, t, 1)
        for term in self.terms:
            _, df = _PRIMITIVES[term.fn]
            out = out + term.coef * term.scale * df(term.scale * np.asarray(t, dtype=float) + term.shift)
        return out

    def __call__(self, t):
        """x-independent shortcut: H(t)."""
        return self.value(0.0, t)

    # --- algebra -----------------------------------------------------------------

    def scaled(self, a: float) -> "ScalarBC":
        return ScalarBC(
            tuple(a * c for c in self.poly),
            tuple(Modulation(m.power, tuple(a * c for c in m.cos), tuple(a * c for c in m.sin)) for m in self.modulation),
            tuple(PrimitiveTerm(p.fn, a * p.coef, p.scale, p.shift) for p in self.terms),
        )

    def __add__(self, other: "ScalarBC") -> "ScalarBC":
        n = max(len(self.poly), len(other.poly))
        poly = tuple((self.poly[k] if k < len(self.poly) else 0.0) + (other.poly[k] if k < len(other.poly) else 0.0) for k in range(n))
        return ScalarBC(poly, self.modulation + other.modulation, self.terms + other.terms)

    def describe(self) -> dict:
        d: dict = {"poly": list(self.poly)}
        if self.modulation:
            d["modulation"] = [{"power": m.power, "cos": list(m.cos), "sin": list(m.sin)} for m in self.modulation]
        if self.terms:
            d["terms"] = [{"fn": p.fn, "coef": p.coef, "scale": p.scale, "shift": p.shift} for p in self.terms]
        return d


def polynomial(*coeffs: float) -> ScalarBC:
    """Polynomial in t with ascending coefficients: polynomial(1, 1, -2, 1) is 1 + t - 2t^2 + t^3."""
    return ScalarBC(tuple(float(c) for c in coeffs))


def constant(c: float) -> ScalarBC:
    return ScalarBC((float(c),))


def apply_superposition(H: ScalarBC, b: DiscreteBoundary, f) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape != (b.N,):
        raise ValueError(f"expected {b.N} node values, got shape {f.shape}")
    return H.value(b.s, f)


def apply_superposition_dt(H: ScalarBC, b: DiscreteBoundary, f) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape != (b.N,):
        raise ValueError(f"expected {b.N} node values, got shape {f.shape}")
    return H.dt(b.s, f)


# --- real roots without companion matrices -------------------------------------------


def _bisect(fun, a: float, b: float, fa: float, fb: float, xtol: float = 0.0) -> float:
    for _ in range(200):
        m = 0.5 * (a + b)
        if m <= a or m >= b or (b - a) <= xtol:
            break
        fm = fun(m)
        if fm == 0.0:
            return m
        if (fm < 0) == (fa < 0):
            a, fa = m, fm
        else:
            b, fb = m, fm
    return a if abs(fa) <= abs(fb) else b


def real_roots(coeffs, lo: float, hi: float, *, touch_tol: float = 1e-12) -> list[float]:
    """All real roots of a polynomial (ascending coefficients) in [lo, hi].

    The roots of p are separated by the roots of p', which are found
    recursively; each monotone piece holds at most one root, located by
    bisection. Critical points where |p| is below ``touch_tol`` times the
    coefficient scale are reported as even-multiplicity roots.
    """
    c = np.trim_zeros(np.asarray(coeffs, dtype=float), "b")
    if len(c) <= 1:
        return []
    if len(c) == 2:
        r = -c[0] / c[1]
        return [float(r)] if lo <= r <= hi else []
    crit = real_roots(P.polyder(c), lo, hi, touch_tol=touch_tol)
    pts = [lo] + [x for x in crit if lo < x < hi] + [hi]
    fun = lambda x: float(P.polyval(x, c))  # noqa: E731
    roots: list[float] = []
    for a, b in zip(pts[:-1], pts[1:]):
        fa, fb = fun(a), fun(b)
        if fa == 0.0:
            roots.append(a)
        elif fa * fb < 0:
            roots.append(_bisect(fun, a, b, fa, fb))
    if fun(hi) == 0.0:
        roots.append(hi)
    for k, x in enumerate(pts[1:-1], start=1):
        fx = fun(x)
        scale = float(np.sum(np.abs(c) * np.abs(x) ** np.arange(len(c))))
        if abs(fx) > touch_tol * max(scale, 1.0):
            continue
        # A tiny extremum flanked by sign changes is a split pair, already bracketed.
        if fx == 0.0 or (np.sign(fun(pts[k - 1])) == np.sign(fx) == np.sign(fun(pts[k + 1]))):
            roots.append(x)
    roots.sort()
    out: list[float] = []
    for r in roots:
        if not out or abs(r - out[-1]) > 1e-12 * max(1.0, abs(r)):
            out.append(r)
    return out


# --- pointwise inverse of t + F(x, t) ------------------------------------------------


def _critical_points(F: ScalarBC, s: float, T: float) -> list[float]:
    """Critical points of t + F(s, t) inside (-T, T)."""
    if F.is_polynomial:
        c = F.coefficients([s])[0].copy()
        if len(c) < 2:
            c = np.append(c, 0.0)
        c[1] += 1.0
        return [x for x in real_roots(P.polyder(c), -T, T) if -T < x < T]
    # Generic case: sign changes of the derivative on a dense graded grid.
    u = np.linspace(-1.0, 1.0, 40001)
    grid = T * np.sinh(8.0 * u) / np.sinh(8.0)
    d = 1.0 + F.dt(s, grid)
    fun = lambda x: float(1.0 + F.dt(s, x))  # noqa: E731
    out = []
    for i in np.nonzero(np.sign(d[:-1]) * np.sign(d[1:]) <= 0)[0]:
        a, b = grid[i], grid[i + 1]
        out.append(a if d[i] == 0 else _bisect(fun, a, b, d[i], d[i + 1]))
    return sorted(set(out))


@dataclass(frozen=True)
class _Pieces:
    """Monotone pieces [a_k, b_k] of t + F(s, t), merged where the direction does not change."""

    bounds: np.ndarray  # (m, 2)
    values: np.ndarray  # (m, 2)


def _pieces(F: ScalarBC, s: float, T: float) -> _Pieces:
    h = lambda t: t + F.value(s, t)  # noqa: E731
    pts = [-T] + _critical_points(F, s, T) + [T]
    vals = [float(h(p)) for p in pts]
    bounds, values = [], []
    for a, b, ha, hb in zip(pts[:-1], pts[1:], vals[:-1], vals[1:]):
        if bounds and (hb - ha) * (values[-1][1] - values[-1][0]) > 0:
            bounds[-1][1], values[-1][1] = b, hb
        elif hb != ha:
            bounds.append([a, b])
            values.append([ha, hb])
    return _Pieces(np.array(bounds).reshape(-1, 2), np.array(values).reshape(-1, 2))


@functools.lru_cache(maxsize=64)
def _node_pieces(F: ScalarBC, b: DiscreteBoundary, T: float) -> tuple[_Pieces, ...]:
    if F.x_independent:
        p = _pieces(F, 0.0, T)
        return (p,) * b.N
    return tuple(_pieces(F, float(s), T) for s in b.s)


def invert_id_plus_F(F: ScalarBC, b: DiscreteBoundary, f, *, T: float = DEFAULT_BRACKET) -> np.ndarray:
    """Solve t + F(x_j, t) = f_j for every node.

    The root must be unique in [-T, T]; otherwise :class:`AssumptionViolation`
    names the node and the bracketed roots.
    """
    f = np.asarray(f, dtype=float)
    if f.shape != (b.N,):
        raise ValueError(f"expected {b.N} node values, got shape {f.shape}")
    if not np.all(np.isfinite(f)):
        raise AssumptionViolation("non-finite right-hand side")
    pieces = _node_pieces(F, b, float(T))
    lo = np.empty(b.N)
    hi = np.empty(b.N)
    for j, (pc, target) in enumerate(zip(pieces, f)):
        vmin = pc.values.min(axis=1)
        vmax = pc.values.max(axis=1)
        hit = np.nonzero((vmin <= target) & (target <= vmax))[0]
        if len(hit) == 0:
            raise AssumptionViolation(
                f"node {j}: t + F(x, t) = {target:.6g} has no root in [{-T:g}, {T:g}]", node=j
            )
        if len(hit) > 1:
            roots = [_solve_piece(F, b.s[j], pc.bounds[k], pc.values[k], target) for k in hit]
            distinct = sorted(set(np.round(roots, 12)))
            if len(distinct) > 1:
                raise AssumptionViolation(
                    f"node {j}: t + F(x, t) = {target:.6g} has several roots {distinct} in [{-T:g}, {T:g}]",
                    node=j,
                    roots=distinct,
                )
        k = hit[0]
        a, c = pc.bounds[k]
        if pc.values[k, 1] < pc.values[k, 0]:
            a, c = c, a  # orient so that h(lo) <= f <= h(hi)
        lo[j], hi[j] = a, c
    t = _vector_bisect(F, b.s, lo, hi, f)
    resid = np.abs(t + F.value(b.s, t) - f)
    tol = 1e-12 * np.maximum(1.0, np.abs(f))
    if np.any(resid > tol):
        j = int(np.argmax(resid - tol))
        raise AssumptionViolation(f"node {j}: bisection residual {resid[j]:.3e} above tolerance", node=j)
    return t


def _solve_piece(F, s, bounds, values, target) -> float:
    a, c = bounds
    if values[1] < values[0]:
        a, c = c, a
    return float(_vector_bisect(F, np.array([s]), np.array([a]), np.array([c]), np.array([target]))[0])


def _vector_bisect(F: ScalarBC, s, lo, hi, f) -> np.ndarray:
    """Bisection with h(lo) <= f <= h(hi) elementwise (lo may exceed hi)."""
    lo, hi = lo.copy(), hi.copy()
    for _ in range(2100):
        mid = 0.5 * (lo + hi)
        done = (mid == lo) | (mid == hi)
        if np.all(done):
            break
        g = mid + F.value(s, mid) - f
        up = g < 0
        lo = np.where(up & ~done, mid, lo)
        hi = np.where(~up & ~done, mid, hi)
    r_lo = np.abs(lo + F.value(s, lo) - f)
    r_hi = np.abs(hi + F.value(s, hi) - f)
    return np.where(r_lo <= r_hi, lo, hi)


# --- growth audit ----------------------------------------------------------------------


@dataclass(frozen=True)
class GrowthCertificate:
    """Fitted constants for |F| >= c1|t|^d1 - 1/c1 and |G| <= c2 (1 + |F|)^d2 on [-T, T]."""

    c1: float
    c2: float
    delta1: float
    delta2: float
    T: float
    superlinear_ok: bool
    sublinear_ok: bool
    diagnostics: dict = field(default_factory=dict, compare=False)

    @property
    def passed(self) -> bool:
        return self.superlinear_ok and self.sublinear_ok

    def as_dict(self) -> dict:
        return {
            "c1": self.c1, "c2": self.c2, "delta1": self.delta1, "delta2": self.delta2, "T": self.T,
            "superlinear_ok": self.superlinear_ok, "sublinear_ok": self.sublinear_ok,
            "passed": self.passed, "diagnostics": self.diagnostics,
        }


def _t_grid(T: float, n: int = 400) -> np.ndarray:
    pos = np.logspace(-3, math.log10(T), n)
    return np.concatenate([-pos[::-1], [0.0], pos])


def _effective_degree(H: ScalarBC, s: np.ndarray) -> int:
    """Smallest over nodes of the degree whose coefficient is non-zero."""
    c = H.coefficients(s)
    scale = np.abs(c).max() if c.size else 0.0
    degs = []
    for row in c:
        nz = np.nonzero(np.abs(row) > 1e-14 * max(scale, 1.0))[0]
        degs.append(int(nz.max()) if len(nz) else -1)
    return min(degs)


def _tail_slope(x: np.ndarray, y: np.ndarray) -> float:
    ok = (x > 0) & (y > 0)
    if ok.sum() < 2:
        return 0.0
    return float(np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)[0])


def audit_growth(F: ScalarBC, G: ScalarBC, b: DiscreteBoundary | None = None, *, T: float = DEFAULT_BRACKET) -> GrowthCertificate:
    """Check the super-linear growth of F and the sub-linear growth of G relative to F."""
    s = b.s if b is not None else np.zeros(1)
    t = _t_grid(T)
    S, TT = np.meshgrid(s, t, indexing="ij")
    absF = np.abs(F.value(S, TT))
    absG = np.abs(G.value(S, TT))
    abst = np.abs(t)

    tail = abst >= T / 100
    fit1 = min(_tail_slope(abst[tail & (t > 0)], absF.min(0)[tail & (t > 0)]),
               _tail_slope(abst[tail & (t < 0)], absF.min(0)[tail & (t < 0)]))
    if F.is_polynomial:
        delta1 = float(_effective_degree(F, s))
    else:
        delta1 = fit1
    with np.errstate(divide="ignore", over="ignore"):
        m = absF.min(0)
        tp = abst**delta1
        bound = np.where(tp > 0, (m + np.sqrt(m * m + 4.0 * tp)) / (2.0 * np.where(tp > 0, tp, 1.0)), np.inf)
    c1 = float(np.min(bound))
    superlinear_ok = bool(delta1 > 1.0 and c1 > 0 and np.all(absF >= c1 * abst**delta1 - 1.0 / c1 - 1e-9 * (1 + absF)))

    big = tail[None, :] & np.ones_like(absF, dtype=bool)
    fit2 = max(0.0, _tail_slope((1.0 + absF[big]).ravel(), absG[big].ravel())) if np.any(absG[big] > 0) else 0.0
    if F.is_polynomial and G.is_polynomial and delta1 > 0:
        dg = _effective_degree(G, s) if G.degree >= 0 else 0
        delta2 = max(0.0, dg / delta1)
    else:
        delta2 = fit2
    ratio = absG / (1.0 + absF) ** delta2
    c2 = float(ratio.max()) if ratio.max() > 0 else 1.0
    sublinear_ok = bool(0.0 <= delta2 < 1.0)

    # Bound constants for the inverse of t + F and for G composed with it (diagnostics only).
    absH = np.abs(TT + F.value(S, TT))
    with np.errstate(divide="ignore", invalid="ignore"):
        lim = np.nanmin(np.where(abst[None, :] >= T / 10, absH / np.maximum(abst, 1e-300) ** delta1, np.nan))
    lower = 0.5 * float(lim) if np.isfinite(lim) and lim > 0 else float("nan")
    upper = float(np.max(np.maximum(lower * abst**delta1 - absH, 0.0))) if np.isfinite(lower) else float("nan")
    C3 = float((absG / (1.0 + absH) ** delta2).max())
    diagnostics = {
        "delta1_fit": fit1,
        "delta2_fit": fit2,
        "C1": lower ** (-1.0 / delta1) if np.isfinite(lower) and delta1 > 0 else None,
        "C2": upper,
        "C3": C3,
        "C4": 1.0,
    }
    return GrowthCertificate(c1, c2, delta1, delta2, float(T), superlinear_ok, sublinear_ok, diagnostics)


def sublinear_audit(G: ScalarBC, b: DiscreteBoundary | None = None, *, T: float = DEFAULT_BRACKET) -> tuple[bool, float, float]:
    """Check |G(x, t)| <= C (1 + |t|)^delta with delta < 1. Returns (passed, delta, C)."""
    s = b.s if b is not None else np.zeros(1)
    t = _t_grid(T)
    S, TT = np.meshgrid(s, t, indexing="ij")
    absG = np.abs(G.value(S, TT))
    if G.is_polynomial:
        delta = float(max(_effective_degree(G, s), 0))
    else:
        tail = np.abs(t) >= T / 100
        delta = max(0.0, _tail_slope(1.0 + np.abs(t[tail]), absG.max(0)[tail])) if absG.max() > 0 else 0.0
    C = float((absG / (1.0 + np.abs(TT)) ** delta).max())
    return bool(delta < 1.0), delta, C if C > 0 else 1.0

"""Smooth closed planar curves and their equispaced quadrature discretizations.

A curve is stored as a trigonometric polynomial

    x(s) = cx + sum_k (ax_k cos ks + bx_k sin ks)
    y(s) = cy + sum_k (ay_k cos ks + by_k sin ks),      k = 1, 2, ...

Circles and ellipses are the special cases with only k = 1 terms. All
derivatives are analytic.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, cKDTree
from scipy.spatial.distance import pdist

__all__ = [
    "GeometryError",
    "Curve",
    "DiscreteBoundary",
    "circle",
    "ellipse",
    "trig_curve",
    "discretize",
    "containment_check",
    "clearance",
    "winding_number",
    "distance_to_curve",
    "trig_upsample",
    "trig_upsample_matrix",
    "trig_eval",
]

VALIDATION_SAMPLES = 4096


class GeometryError(ValueError):
    """Invalid curve or discretization request."""


def _as_coeffs(values) -> tuple[float, ...]:
    return tuple(float(v) for v in values)


@dataclass(frozen=True)
class Curve:
    """Counterclockwise smooth closed curve given by trigonometric coefficients.

    ``x_cos[k-1]`` multiplies ``cos(k s)`` in the x coordinate, and so on.
    ``kind`` is informational (``circle``, ``ellipse`` or ``trig-polynomial``);
    ``params`` keeps the user-facing parameters for reporting.
    """

    kind: str
    center: tuple[float, float]
    x_cos: tuple[float, ...]
    x_sin: tuple[float, ...]
    y_cos: tuple[float, ...]
    y_sin: tuple[float, ...]
    params: tuple[tuple[str, float], ...] = field(default=(), compare=False)

    def __post_init__(self) -> None:
        validate_curve(self)

    @property
    def degree(self) -> int:
        return max(len(self.x_cos), len(self.x_sin), len(self.y_cos), len(self.y_sin))

    def _coeff_arrays(self) -> tuple[np.ndarray, ...]:
        d = self.degree
        out = []
        for c in (self.x_cos, self.x_sin, self.y_cos, self.y_sin):
            a = np.zeros(d)
            a[: len(c)] = c
            out.append(a)
        return tuple(out)

    def evaluate(self, s, order: int = 0) -> np.ndarray:
        """Return the ``order``-th derivative of x(s) as an array of shape (len(s), 2)."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        xc, xs, yc, ys = self._coeff_arrays()
        k = np.arange(1, self.degree + 1, dtype=float)
        ks = np.outer(s, k)
        c, sn = np.cos(ks), np.sin(ks)
        # d^m/ds^m of cos(ks), sin(ks) cycles with period 4.
        m = order % 4
        if m == 0:
            dc, ds_ = c, sn
        elif m == 1:
            dc, ds_ = -sn, c
        elif m == 2:
            dc, ds_ = -c, -sn
        else:
            dc, ds_ = sn, -c
        scale = k**order
        x = dc @ (xc * scale) + ds_ @ (xs * scale)
        y = dc @ (yc * scale) + ds_ @ (ys * scale)
        if order == 0:
            x = x + self.center[0]
            y = y + self.center[1]
        return np.column_stack([x, y])

    def position(self, s) -> np.ndarray:
        return self.evaluate(s, 0)

    def samples(self, n: int = VALIDATION_SAMPLES) -> np.ndarray:
        return self.position(2.0 * np.pi * np.arange(n) / n)

    @functools.cached_property
    def diameter(self) -> float:
        pts = self.samples()
        return float(pdist(pts[ConvexHull(pts).vertices]).max())

    @functools.cached_property
    def signed_area(self) -> float:
        # Green's theorem with the trapezoid rule (spectrally accurate).
        n = VALIDATION_SAMPLES
        s = 2.0 * np.pi * np.arange(n) / n
        p, d = self.position(s), self.evaluate(s, 1)
        return float(0.5 * np.sum(p[:, 0] * d[:, 1] - p[:, 1] * d[:, 0]) * 2.0 * np.pi / n)

    def describe(self) -> dict:
        return {"kind": self.kind, "center": list(self.center), **dict(self.params)}


def validate_curve(curve: Curve) -> None:
    if curve.degree == 0:
        raise GeometryError("curve has no oscillating terms")
    vals = np.array(curve.x_cos + curve.x_sin + curve.y_cos + curve.y_sin + curve.center)
    if not np.all(np.isfinite(vals)):
        raise GeometryError("curve coefficients must be finite")
    n = VALIDATION_SAMPLES
    s = 2.0 * np.pi * np.arange(n) / n
    pts = curve.position(s)
    speed = np.linalg.norm(curve.evaluate(s, 1), axis=1)
    scale = float(np.ptp(pts, axis=0).max())
    if scale <= 0 or speed.min() <= 1e-12 * scale:
        raise GeometryError("degenerate parameterization: |x'(s)| vanishes")
    dist, _ = cKDTree(pts).query(pts, k=2)
    if dist[:, 1].min() <= 1e-6 * scale:
        raise GeometryError("curve self-intersects or nearly touches itself")
    if curve.signed_area <= 0:
        raise GeometryError("curve must be oriented counterclockwise")
    if not _polygon_is_simple(pts):
        raise GeometryError("curve self-intersects")


def _polygon_is_simple(pts: np.ndarray) -> bool:
    """Winding-number check: a simple ccw polygon has turning number exactly 1."""
    e = np.diff(np.vstack([pts, pts[:1]]), axis=0)
    ang = np.arctan2(e[:, 1], e[:, 0])
    turn = np.angle(np.exp(1j * (np.roll(ang, -1) - ang))).sum()
    return abs(turn / (2 * np.pi) - 1.0) < 1e-6


def circle(radius: float, center=(0.0, 0.0)) -> Curve:
    if not radius > 0:
        raise GeometryError(f"circle radius must be positive, got {radius}")
    return Curve(
        "circle", (float(center[0]), float(center[1])), (float(radius),), (), (), (float(radius),),
        params=(("radius", float(radius)),),
    )


def ellipse(a: float, b: float, center=(0.0, 0.0)) -> Curve:
    if not (a > 0 and b > 0):
        raise GeometryError(f"ellipse semi-axes must be positive, got {a}, {b}")
    return Curve(
        "ellipse", (float(center[0]), float(center[1])), (float(a),), (), (), (float(b),),
        params=(("a", float(a)), ("b", float(b))),
    )


def trig_curve(x_cos, x_sin, y_cos, y_sin, center=(0.0, 0.0)) -> Curve:
    return Curve(
        "trig-polynomial", (float(center[0]), float(center[1])),
        _as_coeffs(x_cos), _as_coeffs(x_sin), _as_coeffs(y_cos), _as_coeffs(y_sin),
    )


@dataclass(frozen=True, eq=False)
class DiscreteBoundary:
    """Equispaced-parameter Nyström discretization of a curve.

    Instances are cached per ``(curve, N)`` and hash by that key, so assembled
    operators can be memoized on them.
    """

    curve: Curve
    N: int
    s: np.ndarray
    nodes: np.ndarray
    speed: np.ndarray
    tangents: np.ndarray
    normals: np.ndarray
    weights: np.ndarray
    curvature: np.ndarray

    def __hash__(self) -> int:
        return hash((self.curve, self.N))

    def __eq__(self, other) -> bool:
        return isinstance(other, DiscreteBoundary) and (self.curve, self.N) == (other.curve, other.N)

    @property
    def perimeter(self) -> float:
        return float(self.weights.sum())

    @property
    def diameter(self) -> float:
        return self.curve.diameter

    @functools.cached_property
    def centroid(self) -> np.ndarray:
        """Area centroid from boundary quadrature."""
        x, y = self.nodes[:, 0], self.nodes[:, 1]
        nx, ny = self.normals[:, 0], self.normals[:, 1]
        area = 0.5 * np.sum((x * nx + y * ny) * self.weights)
        cx = 0.5 * np.sum(x * x * nx * self.weights) / area
        cy = 0.5 * np.sum(y * y * ny * self.weights) / area
        return np.array([cx, cy])

    @functools.cached_property
    def area(self) -> float:
        return float(0.5 * np.sum(np.einsum("ij,ij->i", self.nodes, self.normals) * self.weights))

    def refined(self, M: int) -> "DiscreteBoundary":
        return discretize(self.curve, M)


@functools.lru_cache(maxsize=256)
def discretize(curve: Curve, N: int) -> DiscreteBoundary:
    """Discretize ``curve`` at ``N`` equispaced parameter nodes ``s_j = 2 pi j / N``."""
    if isinstance(N, bool) or not isinstance(N, (int, np.integer)):
        raise GeometryError(f"node count must be an integer, got {N!r}")
    N = int(N)
    if N < 8 or N % 2:
        raise GeometryError(f"node count must be even and at least 8, got {N}")
    s = 2.0 * np.pi * np.arange(N) / N
    x, d1, d2 = curve.evaluate(s, 0), curve.evaluate(s, 1), curve.evaluate(s, 2)
    speed = np.hypot(d1[:, 0], d1[:, 1])
    if speed.min() <= 1e-12 * curve.diameter:
        raise GeometryError("degenerate parameterization at a node")
    tangents = d1 / speed[:, None]
    normals = np.column_stack([tangents[:, 1], -tangents[:, 0]])
    curvature = (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]) / speed**3
    weights = (2.0 * np.pi / N) * speed
    for a in (s, x, speed, tangents, normals, weights, curvature):
        a.setflags(write=False)
    return DiscreteBoundary(curve, N, s, x, speed, tangents, normals, weights, curvature)


def winding_number(curve: Curve, points, samples: int = VALIDATION_SAMPLES) -> np.ndarray:
    """Winding number of ``curve`` around each point (polygonal approximation)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    poly = curve.samples(samples)
    out = np.empty(len(pts))
    chunk = max(1, 2_000_000 // samples)
    for i in range(0, len(pts), chunk):
        p = pts[i : i + chunk]
        z = (poly[None, :, 0] - p[:, None, 0]) + 1j * (poly[None, :, 1] - p[:, None, 1])
        dz = np.angle(np.roll(z, -1, axis=1) * np.conj(z))
        out[i : i + chunk] = dz.sum(axis=1) / (2.0 * np.pi)
    return np.rint(out)


@functools.lru_cache(maxsize=64)
def _curve_tree(curve: Curve, samples: int) -> tuple[cKDTree, np.ndarray]:
    s = 2.0 * np.pi * np.arange(samples) / samples
    return cKDTree(curve.position(s)), s


def distance_to_curve(curve: Curve, points, samples: int = VALIDATION_SAMPLES) -> np.ndarray:
    """Euclidean distance from points to the curve.

    Nearest sample from a KD tree, then a few Newton steps on the parameter.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    tree, s_grid = _curve_tree(curve, samples)
    _, idx = tree.query(pts)
    s = s_grid[idx].copy()
    for _ in range(4):
        x, d1, d2 = curve.evaluate(s, 0), curve.evaluate(s, 1), curve.evaluate(s, 2)
        r = x - pts
        g = np.einsum("ij,ij->i", r, d1)
        h = np.einsum("ij,ij->i", d1, d1) + np.einsum("ij,ij->i", r, d2)
        step = np.where(h > 0, g / np.where(h > 0, h, 1.0), 0.0)
        s = s - np.clip(step, -np.pi / samples, np.pi / samples)
    d_newton = np.linalg.norm(curve.position(s) - pts, axis=1)
    d_tree = np.linalg.norm(curve.position(s_grid[idx]) - pts, axis=1)
    return np.minimum(d_newton, d_tree)


def clearance(outer: Curve, inner: Curve) -> float:
    """Minimum distance between the two curves."""
    return float(distance_to_curve(outer, inner.samples()).min())


def containment_check(outer: Curve, inner: Curve) -> bool:
    """True iff ``inner`` lies strictly inside ``outer`` with clearance above 1e-3 x outer diameter."""
    # A connected inner curve that keeps positive distance from the outer one
    # lies entirely on one side of it, so one winding number decides.
    if not clearance(outer, inner) > 1e-3 * outer.diameter:
        return False
    return bool(winding_number(outer, inner.samples(1)[:1])[0] == 1)


# --- trigonometric interpolation of node vectors --------------------------------


def trig_upsample(values: np.ndarray, M: int) -> np.ndarray:
    """Trigonometric interpolant of periodic samples, resampled at ``M >= N`` points.

    ``values`` has the node index on axis 0. N must be even; the Nyquist mode
    is split symmetrically so real data stays real.
    """
    v = np.asarray(values, dtype=float)
    N = v.shape[0]
    if M == N:
        return v.copy()
    if M < N or M % 2 or N % 2:
        raise ValueError("trig_upsample needs even M >= N")
    c = np.fft.rfft(v, axis=0)
    pad = np.zeros((M // 2 + 1,) + v.shape[1:], dtype=complex)
    pad[: N // 2] = c[: N // 2]
    pad[N // 2] = 0.5 * c[N // 2]
    return np.fft.irfft(pad, n=M, axis=0) * (M / N)


@functools.lru_cache(maxsize=64)
def trig_upsample_matrix(N: int, M: int) -> np.ndarray:
    P = trig_upsample(np.eye(N), M)
    P.setflags(write=False)
    return P


def trig_eval(values: np.ndarray, s) -> np.ndarray:
    """Evaluate the trigonometric interpolant of equispaced samples at parameters ``s``."""
    v = np.asarray(values, dtype=float)
    N = v.shape[0]
    c = np.fft.rfft(v, axis=0) / N
    k = np.arange(N // 2 + 1)
    wts = np.full(N // 2 + 1, 2.0)
    wts[0] = 1.0
    wts[-1] = 1.0  # Nyquist: real part of cos only
    e = np.exp(1j * np.outer(np.atleast_1d(s), k))
    if N % 2 == 0:
        e[:, -1] = np.cos(np.atleast_1d(s) * (N // 2))
    return np.real(e @ (wts[:, None] * c.reshape(len(k), -1))).reshape((-1,) + v.shape[1:])

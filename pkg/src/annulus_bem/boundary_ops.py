"""Nyström matrices for boundary integral operators and their composites.

Conventions for a boundary with outward normal ``nu``:

* ``V``      single layer trace, kernel S(x - y)
* ``W``      double layer trace, kernel -nu(y) . grad S(x - y)
* ``Wstar``  adjoint double layer, kernel nu(x) . grad S(x - y)

so that interior (+) and exterior (-) limits satisfy
``w = +-1/2 psi + W psi`` and ``nu . grad v = -+1/2 phi + W* phi``.
"""

from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .geometry import DiscreteBoundary, GeometryError, clearance, discretize, trig_upsample_matrix
from .potentials import (
    REFINE_RATIO,
    double_layer_eval,
    grad_double_layer_eval,
    grad_single_layer_eval,
    kernel_matrix,
)

__all__ = [
    "OperatorMatrix",
    "Factorization",
    "SingularOperatorError",
    "assemble_V",
    "assemble_W",
    "assemble_Wstar",
    "assemble_cross",
    "half_plus_W",
    "half_plus_Wstar",
    "solve_half_plus_W",
    "solve_half_plus_Wstar",
    "assemble_J",
    "assemble_J_lambda",
    "equilibrium_density",
    "AnnulusOperators",
    "smallest_singular_value",
    "random_trig_densities",
    "jump_relation_errors",
    "operator_identity_report",
    "clear_caches",
]

log = logging.getLogger(__name__)

CROSS_KINDS = ("cross-v", "cross-w", "cross-dnw")


class SingularOperatorError(np.linalg.LinAlgError):
    """A factorization is singular to working tolerance."""


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    """Dense operator matrix; rows are target nodes and columns source nodes."""

    matrix: np.ndarray
    source: DiscreteBoundary
    target: DiscreteBoundary
    tag: str

    def __post_init__(self) -> None:
        if self.matrix.shape != (self.target.N, self.source.N):
            raise ValueError(f"{self.tag}: shape {self.matrix.shape} does not match ({self.target.N}, {self.source.N})")
        self.matrix.setflags(write=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def __matmul__(self, other):
        if isinstance(other, OperatorMatrix):
            return self.matrix @ other.matrix
        return self.matrix @ other

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.matrix, dtype=dtype)


class Factorization:
    """LU factorization with a residual check on every solve."""

    def __init__(self, op: OperatorMatrix, rtol: float = 1e-10):
        self.op = op
        self.rtol = rtol
        lu, piv = sla.lu_factor(op.matrix, check_finite=True)
        d = np.abs(np.diag(lu))
        if d.min() <= 1e3 * np.finfo(float).eps * d.max():
            raise SingularOperatorError(f"{op.tag} is singular to working precision (min pivot {d.min():.3e})")
        self._lu = (lu, piv)

    def solve(self, rhs) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        x = sla.lu_solve(self._lu, rhs)
        for _ in range(2):
            r = rhs - self.op.matrix @ x
            scale = max(np.abs(rhs).max(), np.finfo(float).tiny) if rhs.size else 1.0
            if np.abs(r).max() <= self.rtol * scale:
                break
            x = x + sla.lu_solve(self._lu, r)  # one step of iterative refinement
        else:
            if np.abs(r).max() > self.rtol * scale:
                raise SingularOperatorError(f"{self.op.tag}: solve residual {np.abs(r).max():.3e} above tolerance")
        return x

    def inverse(self) -> np.ndarray:
        return sla.lu_solve(self._lu, np.eye(self.op.shape[0]))


# --- self operators -------------------------------------------------------------


@functools.lru_cache(maxsize=32)
def _log_weights(N: int) -> np.ndarray:
    """Exact trigonometric weights R(d) for log(4 sin^2((s_i - t_j)/2)), d = i - j mod N."""
    n = N // 2
    d = np.arange(N)
    t = 2.0 * np.pi * d / N
    m = np.arange(1, n)
    R = -(4.0 * np.pi / N) * (np.cos(np.outer(t, m)) / m).sum(axis=1) - (4.0 * np.pi / N**2) * np.cos(n * t)
    return R


@functools.lru_cache(maxsize=64)
def assemble_V(b: DiscreteBoundary) -> OperatorMatrix:
    """Single layer trace with the periodic log-splitting quadrature."""
    N = b.N
    i, j = np.meshgrid(np.arange(N), np.arange(N), indexing="ij")
    R = _log_weights(N)[(i - j) % N]
    diff = b.nodes[:, None, :] - b.nodes[None, :, :]
    dist2 = (diff**2).sum(-1)
    sdiff = b.s[:, None] - b.s[None, :]
    off = i != j
    B = np.empty((N, N))
    B[off] = 0.5 * np.log(dist2[off] / (4.0 * np.sin(0.5 * sdiff[off]) ** 2))
    B[~off] = np.log(b.speed)
    M = (0.5 * R + (2.0 * np.pi / N) * B) * b.speed[None, :] / (2.0 * np.pi)
    return OperatorMatrix(M, b, b, "V")


def _double_layer_self(b: DiscreteBoundary, adjoint: bool) -> np.ndarray:
    N = b.N
    z = b.nodes[:, None, :] - b.nodes[None, :, :]
    r2 = (z**2).sum(-1)
    np.fill_diagonal(r2, 1.0)
    if adjoint:
        K = np.einsum("ik,ijk->ij", b.normals, z) / (2.0 * np.pi * r2)
    else:
        K = -np.einsum("jk,ijk->ij", b.normals, z) / (2.0 * np.pi * r2)
    K[np.diag_indices(N)] = b.curvature / (4.0 * np.pi)
    return K * b.weights[None, :]


@functools.lru_cache(maxsize=64)
def assemble_W(b: DiscreteBoundary) -> OperatorMatrix:
    return OperatorMatrix(_double_layer_self(b, adjoint=False), b, b, "W")


@functools.lru_cache(maxsize=64)
def assemble_Wstar(b: DiscreteBoundary) -> OperatorMatrix:
    return OperatorMatrix(_double_layer_self(b, adjoint=True), b, b, "Wstar")


# --- cross operators -------------------------------------------------------------


@functools.lru_cache(maxsize=32)
def _separation(src: DiscreteBoundary, tgt: DiscreteBoundary) -> float:
    return clearance(src.curve, tgt.curve)


@functools.lru_cache(maxsize=128)
def assemble_cross(src: DiscreteBoundary, tgt: DiscreteBoundary, kind: str) -> OperatorMatrix:
    """Potential generated on ``src`` evaluated at the nodes of ``tgt``.

    ``cross-v`` is the single layer, ``cross-w`` the double layer and
    ``cross-dnw`` the target-normal derivative of the double layer. When the
    boundaries are close compared with the source spacing, the source density
    is trigonometrically interpolated onto a finer copy first.
    """
    if kind not in CROSS_KINDS:
        raise ValueError(f"unknown cross kind {kind!r}")
    d = _separation(src, tgt)
    if d <= 1e-3 * max(src.diameter, tgt.diameter):
        raise GeometryError(f"boundaries too close for cross operators (separation {d:.3e})")
    h = src.weights.max()
    M = src.N
    while REFINE_RATIO * (h * src.N / M) > d and M < (1 << 15):
        M *= 2
    fine = src if M == src.N else discretize(src.curve, M)
    kernel = {"cross-v": "S", "cross-w": "D", "cross-dnw": "nD"}[kind]
    K = kernel_matrix(kernel, tgt.nodes, fine, target_normals=tgt.normals)
    if M != src.N:
        K = K @ trig_upsample_matrix(src.N, M)
    return OperatorMatrix(K, src, tgt, kind)


# --- factorizations --------------------------------------------------------------


def _identity_plus(op: OperatorMatrix, tag: str, coef: float = 1.0) -> OperatorMatrix:
    return OperatorMatrix(0.5 * np.eye(op.shape[0]) + coef * op.matrix, op.source, op.target, tag)


@functools.lru_cache(maxsize=64)
def half_plus_W(b: DiscreteBoundary) -> Factorization:
    return Factorization(_identity_plus(assemble_W(b), "half-plus-W"))


@functools.lru_cache(maxsize=64)
def half_plus_Wstar(b: DiscreteBoundary) -> Factorization:
    return Factorization(_identity_plus(assemble_Wstar(b), "half-plus-Wstar"))


def solve_half_plus_W(b: DiscreteBoundary, rhs) -> np.ndarray:
    return half_plus_W(b).solve(rhs)


def solve_half_plus_Wstar(b: DiscreteBoundary, rhs) -> np.ndarray:
    return half_plus_Wstar(b).solve(rhs)


@functools.lru_cache(maxsize=32)
def _flux_correction(outer: DiscreteBoundary, inner: DiscreteBoundary) -> np.ndarray:
    """Dnw (1/2 I + W_o)^-1 CrossV: flux on the inner boundary of the outer correction."""
    cv = assemble_cross(inner, outer, "cross-v").matrix
    dnw = assemble_cross(outer, inner, "cross-dnw").matrix
    out = dnw @ half_plus_W(outer).solve(cv)
    out.setflags(write=False)
    return out


@functools.lru_cache(maxsize=32)
def assemble_J(outer: DiscreteBoundary, inner: DiscreteBoundary) -> OperatorMatrix:
    M = 0.5 * np.eye(inner.N) + assemble_Wstar(inner).matrix - _flux_correction(outer, inner)
    return OperatorMatrix(M, inner, inner, "composite-J")


@functools.lru_cache(maxsize=64)
def assemble_J_lambda(outer: DiscreteBoundary, inner: DiscreteBoundary, lam: float) -> OperatorMatrix:
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    k = (lam - 1.0) / (lam + 1.0)
    M = 0.5 * np.eye(inner.N)
    if k != 0.0:
        M = M + k * (assemble_Wstar(inner).matrix - _flux_correction(outer, inner))
    return OperatorMatrix(M, inner, inner, "composite-Jlambda")


def equilibrium_density(b: DiscreteBoundary) -> tuple[np.ndarray, float]:
    """Density with constant single-layer trace c and unit total mass."""
    N = b.N
    A = np.zeros((N + 1, N + 1))
    A[:N, :N] = assemble_V(b).matrix
    A[:N, N] = -1.0
    A[N, :N] = b.weights
    rhs = np.zeros(N + 1)
    rhs[N] = 1.0
    try:
        sol = sla.solve(A, rhs)
    except sla.LinAlgError as exc:  # pragma: no cover - smooth curves never hit this
        raise SingularOperatorError("equilibrium bordered system is singular") from exc
    return sol[:N], float(sol[N])


def smallest_singular_value(M) -> float:
    return float(sla.svdvals(np.asarray(M))[-1])


# --- bundle for the two-boundary problems -------------------------------------------


class AnnulusOperators:
    """All matrices needed by the solvers for an (outer, inner) boundary pair."""

    def __init__(self, outer: DiscreteBoundary, inner: DiscreteBoundary):
        self.outer = outer
        self.inner = inner

    @functools.cached_property
    def W_o(self) -> np.ndarray:
        return assemble_W(self.outer).matrix

    @functools.cached_property
    def W_i(self) -> np.ndarray:
        return assemble_W(self.inner).matrix

    @functools.cached_property
    def Ws_i(self) -> np.ndarray:
        return assemble_Wstar(self.inner).matrix

    @functools.cached_property
    def V_i(self) -> np.ndarray:
        return assemble_V(self.inner).matrix

    @functools.cached_property
    def A_o(self) -> np.ndarray:
        """1/2 I + W on the outer boundary."""
        return 0.5 * np.eye(self.outer.N) + self.W_o

    @property
    def A_o_lu(self) -> Factorization:
        return half_plus_W(self.outer)

    @property
    def A_i_lu(self) -> Factorization:
        return half_plus_W(self.inner)

    @functools.cached_property
    def Cv_io(self) -> np.ndarray:
        """Single layer of an inner density on the outer nodes."""
        return assemble_cross(self.inner, self.outer, "cross-v").matrix

    @functools.cached_property
    def Cw_io(self) -> np.ndarray:
        """Double layer of an inner density on the outer nodes."""
        return assemble_cross(self.inner, self.outer, "cross-w").matrix

    @functools.cached_property
    def Cw_oi(self) -> np.ndarray:
        """Double layer of an outer density on the inner nodes."""
        return assemble_cross(self.outer, self.inner, "cross-w").matrix

    @functools.cached_property
    def Dnw_oi(self) -> np.ndarray:
        """Inner-normal derivative of the outer double layer on the inner nodes."""
        return assemble_cross(self.outer, self.inner, "cross-dnw").matrix

    @functools.cached_property
    def J_lu(self) -> Factorization:
        return Factorization(assemble_J(self.outer, self.inner))

    def J_lambda_lu(self, lam: float) -> Factorization:
        return _J_lambda_lu(self.outer, self.inner, float(lam))


@functools.lru_cache(maxsize=32)
def _J_lambda_lu(outer, inner, lam) -> Factorization:
    return Factorization(assemble_J_lambda(outer, inner, lam))


# --- verification suite -------------------------------------------------------------


def random_trig_densities(b: DiscreteBoundary, count: int, degree: int = 4, seed: int = 0) -> np.ndarray:
    """Columns are random trigonometric polynomials with coefficients decaying like 2^-k."""
    rng = np.random.default_rng(seed)
    k = np.arange(degree + 1)
    a = rng.standard_normal((degree + 1, count)) * 2.0 ** -k[:, None]
    c = rng.standard_normal((degree + 1, count)) * 2.0 ** -k[:, None]
    return np.cos(np.outer(b.s, k)) @ a + np.sin(np.outer(b.s, k)) @ c


def jump_relation_errors(b: DiscreteBoundary, densities, hs=(1e-2, 10**-2.5, 1e-3)) -> dict[str, float]:
    """Max errors of boundary limits taken along normals.

    Values at the normal distances ``hs`` are extrapolated to h = 0 with the
    interpolating polynomial of degree ``len(hs) - 1``.
    """
    dens = np.atleast_2d(np.asarray(densities, dtype=float).T).T
    hs = np.asarray(hs, dtype=float)
    # Lagrange weights for evaluation at h = 0.
    lag = np.array([np.prod([hk / (hk - hj) for k, hk in enumerate(hs) if k != j]) for j, hj in enumerate(hs)])
    W, Ws = assemble_W(b).matrix, assemble_Wstar(b).matrix
    nu = b.normals

    def sample(h: float, side: int):
        pts = b.nodes - side * h * nu  # side=+1 interior, -1 exterior
        cut = 0.5 * h
        w = double_layer_eval(b, dens, pts, cutoff=cut, refine=True)
        gv = grad_single_layer_eval(b, dens, pts, cutoff=cut, refine=True)
        gw = grad_double_layer_eval(b, dens, pts, cutoff=cut, refine=True)
        dnv = np.einsum("ik,ik...->i...", nu, gv)
        dnw = np.einsum("ik,ik...->i...", nu, gw)
        return w, dnv, dnw

    def extrap(side: int):
        samples = [sample(h, side) for h in hs]
        return [sum(c * s_[q] for c, s_ in zip(lag, samples)) for q in range(3)]

    w_in, dnv_in, dnw_in = extrap(+1)
    w_out, dnv_out, dnw_out = extrap(-1)
    return {
        "double_layer_interior": float(np.abs(w_in - (0.5 * dens + W @ dens)).max()),
        "double_layer_exterior": float(np.abs(w_out - (-0.5 * dens + W @ dens)).max()),
        "single_layer_flux_interior": float(np.abs(dnv_in - (-0.5 * dens + Ws @ dens)).max()),
        "single_layer_flux_exterior": float(np.abs(dnv_out - (0.5 * dens + Ws @ dens)).max()),
        "double_layer_flux_nojump": float(np.abs(dnw_in - dnw_out).max()),
    }


def _circle_V_eigen_error(b: DiscreteBoundary, kmax: int) -> float | None:
    if b.curve.kind != "circle":
        return None
    a = dict(b.curve.params)["radius"]
    V = assemble_V(b).matrix
    err = abs((V @ np.ones(b.N) - a * math.log(a)).max())
    for k in range(1, kmax + 1):
        for v in (np.cos(k * b.s), np.sin(k * b.s)):
            err = max(err, float(np.abs(V @ v + a / (2 * k) * v).max()))
    return float(err)


def operator_identity_report(b: DiscreteBoundary, *, seed: int = 0, taus=(-0.9, -0.5, 0.0, 0.5, 0.9), jumps: bool = True) -> dict:
    """Numerical identities satisfied by the self operators on one boundary."""
    rng = np.random.default_rng(seed)
    W, Ws = assemble_W(b).matrix, assemble_Wstar(b).matrix
    w = b.weights
    psi, phi = rng.standard_normal(b.N), rng.standard_normal(b.N)
    I = np.eye(b.N)
    report = {
        "curve": b.curve.describe(),
        "N": b.N,
        "W_row_sum_error": float(np.abs(W @ np.ones(b.N) - 0.5).max()),
        "Wstar_weighted_column_error": float(np.abs(w @ (Ws - 0.5 * I)).max()),
        "adjointness_error": float(abs(np.dot(W @ psi, w * phi) - np.dot(psi, w * (Ws @ phi)))),
        "perimeter": float(w.sum()),
        "sv_half_plus_W": smallest_singular_value(0.5 * I + W),
        "sv_half_plus_tau_Wstar": {f"{t:g}": smallest_singular_value(0.5 * I + t * Ws) for t in taus},
    }
    eig = _circle_V_eigen_error(b, 8)
    if eig is not None:
        report["circle_V_eigenvalue_error"] = eig
    if jumps:
        report["jump_relations"] = jump_relation_errors(b, random_trig_densities(b, 5, seed=seed))
    return report


def clear_caches() -> None:
    """Drop every memoized discretization, operator and factorization (for cold-start timings)."""
    import sys

    for name in ("geometry", "nonlinearity", "boundary_ops"):
        mod = sys.modules.get(f"{__package__}.{name}")
        for obj in vars(mod).values() if mod else ():
            if callable(getattr(obj, "cache_clear", None)):
                obj.cache_clear()

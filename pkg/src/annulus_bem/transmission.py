"""General nonlinear transmission problem: fixed-point densities, fields and the weak flux identity.

Unknowns (mu_o, mu, eta) represent

    u^o = w_o[mu_o] + w_i[mu] + v_i[eta]   in the annulus,
    u^i = w_i[mu]                          in the inner region,

and the boundary conditions u^o = f_o on the outer boundary,
u^o = F(x, u^i) and nu . grad u^o - nu . grad u^i = G(x, u^i) on the inner
boundary become a fixed point of the map T implemented by :func:`apply_T`.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .boundary_ops import AnnulusOperators
from .fields import FieldGrid
from .geometry import DiscreteBoundary, GeometryError, containment_check, trig_eval
from .nonlinearity import DEFAULT_BRACKET, ScalarBC, apply_superposition, invert_id_plus_F
from .potentials import (
    NearFieldError,
    classify_points,
    double_layer_eval,
    near_field_cutoff,
    single_layer_eval,
)

__all__ = [
    "DensityState",
    "TransmissionProblem",
    "SolveReport",
    "RadialBump",
    "apply_T",
    "residuals",
    "equation_residuals",
    "picard_solve",
    "boundary_traces",
    "reconstruct",
    "represent",
    "radial_seed",
    "weak_flux_pairing",
    "pairing_integrals",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class DensityState:
    mu_o: np.ndarray
    mu: np.ndarray
    eta: np.ndarray

    def __post_init__(self) -> None:
        for name in ("mu_o", "mu", "eta"):
            a = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(a)):
                raise FloatingPointError(f"non-finite entries in {name}")
            object.__setattr__(self, name, a)

    @classmethod
    def zeros(cls, problem: "TransmissionProblem") -> "DensityState":
        return cls(np.zeros(problem.outer.N), np.zeros(problem.inner.N), np.zeros(problem.inner.N))

    def parts(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.mu_o, self.mu, self.eta

    def sup_norms(self) -> tuple[float, float, float]:
        return tuple(float(np.abs(p).max()) if p.size else 0.0 for p in self.parts())

    def combine(self, other: "DensityState", theta: float) -> "DensityState":
        """(1 - theta) self + theta other."""
        return DensityState(*((1.0 - theta) * a + theta * b for a, b in zip(self.parts(), other.parts())))

    def to_vector(self) -> np.ndarray:
        return np.concatenate(self.parts())

    @classmethod
    def from_vector(cls, v: np.ndarray, n_outer: int, n_inner: int) -> "DensityState":
        return cls(v[:n_outer], v[n_outer : n_outer + n_inner], v[n_outer + n_inner :])


@dataclass(eq=False)
class TransmissionProblem:
    """Geometry, data and nonlinearities of the general problem."""

    outer: DiscreteBoundary
    inner: DiscreteBoundary
    f_outer: np.ndarray
    F: ScalarBC
    G: ScalarBC
    bracket: float = DEFAULT_BRACKET

    def __post_init__(self) -> None:
        self.f_outer = np.asarray(self.f_outer, dtype=float)
        if self.f_outer.shape == ():
            self.f_outer = np.full(self.outer.N, float(self.f_outer))
        if self.f_outer.shape != (self.outer.N,):
            raise ValueError(f"outer data needs {self.outer.N} node values")
        if not containment_check(self.outer.curve, self.inner.curve):
            raise GeometryError("inner curve must lie strictly inside the outer curve")
        self.ops = AnnulusOperators(self.outer, self.inner)


@dataclass
class SolveReport:
    iterations: int = 0
    residual_history: list[tuple[float, float, float]] = field(default_factory=list)
    damping: float = 0.5
    tol: float = 1e-9
    converged: bool = False
    message: str = ""
    max_state_norm: float = 0.0

    def as_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "damping": self.damping,
            "tol": self.tol,
            "converged": self.converged,
            "message": self.message,
            "max_state_norm": self.max_state_norm,
            "final_residuals": list(self.residual_history[-1]) if self.residual_history else None,
            "residual_history": [list(r) for r in self.residual_history],
        }


def _T_parts(state: DensityState, problem: TransmissionProblem):
    ops = problem.ops
    mu_o, mu, eta = state.parts()
    rhs_o = problem.f_outer - ops.Cw_io @ mu
    T_o = ops.A_o_lu.solve(rhs_o - ops.Cv_io @ eta)
    arg = ops.Cw_oi @ mu_o + ops.V_i @ eta + 2.0 * (ops.W_i @ mu)
    trace = invert_id_plus_F(problem.F, problem.inner, arg, T=problem.bracket)
    T_1 = ops.A_i_lu.solve(trace)
    g = apply_superposition(problem.G, problem.inner, trace)
    T_2 = ops.J_lu.solve(g - ops.Dnw_oi @ ops.A_o_lu.solve(rhs_o))
    return DensityState(T_o, T_1, T_2), trace


def apply_T(state: DensityState, problem: TransmissionProblem) -> DensityState:
    """One application of the fixed-point map."""
    return _T_parts(state, problem)[0]


def residuals(state: DensityState, problem: TransmissionProblem) -> tuple[float, float, float]:
    """Componentwise sup-norms of T(state) - state."""
    T = apply_T(state, problem)
    return tuple(float(np.abs(a - b).max()) for a, b in zip(T.parts(), state.parts()))


def boundary_traces(state: DensityState, problem: TransmissionProblem) -> dict[str, np.ndarray]:
    """Boundary values from the jump relations.

    ``uo_outer`` is u^o on the outer boundary, ``uo_inner`` and ``ui_inner``
    are u^o and u^i on the inner boundary, ``flux_jump`` is the outer minus
    inner normal derivative there.
    """
    ops = problem.ops
    mu_o, mu, eta = state.parts()
    wo_i = ops.Cw_oi @ mu_o
    ui = 0.5 * mu + ops.W_i @ mu
    return {
        "uo_outer": ops.A_o @ mu_o + ops.Cw_io @ mu + ops.Cv_io @ eta,
        "uo_inner": wo_i - 0.5 * mu + ops.W_i @ mu + ops.V_i @ eta,
        "ui_inner": ui,
        "flux_jump": ops.Dnw_oi @ mu_o + 0.5 * eta + ops.Ws_i @ eta,
    }


def equation_residuals(state: DensityState, problem: TransmissionProblem) -> tuple[float, float, float]:
    """Sup-norms of the Dirichlet, coupling and flux conditions evaluated through traces."""
    tr = boundary_traces(state, problem)
    b = problem.inner
    r1 = tr["uo_outer"] - problem.f_outer
    r2 = tr["uo_inner"] - apply_superposition(problem.F, b, tr["ui_inner"])
    r3 = tr["flux_jump"] - apply_superposition(problem.G, b, tr["ui_inner"])
    return tuple(float(np.abs(r).max()) for r in (r1, r2, r3))


def picard_solve(
    initial: DensityState,
    problem: TransmissionProblem,
    theta: float = 0.5,
    tol: float = 1e-9,
    max_iter: int = 500,
    *,
    bound_cap: float = 1e8,
    stall_window: int = 50,
) -> tuple[DensityState, SolveReport]:
    """Damped iteration s <- (1 - theta) s + theta T(s).

    Stops when every component of T(s) - s is below ``tol`` in sup-norm. The
    returned state is the one whose residual met the tolerance. Failures are
    reported through ``SolveReport.converged`` and ``message``.
    """
    if not (0.0 < theta <= 1.0):
        raise ValueError("damping must lie in (0, 1]")
    if not tol > 0:
        raise ValueError("tolerance must be positive")
    report = SolveReport(damping=theta, tol=tol)
    s = initial
    report.max_state_norm = max(s.sup_norms())
    for k in range(1, max_iter + 1):
        try:
            T = apply_T(s, problem)
        except FloatingPointError as exc:
            report.iterations = k
            report.message = f"non-finite iterate: {exc}"
            return s, report
        res = tuple(float(np.abs(a - b).max()) for a, b in zip(T.parts(), s.parts()))
        report.residual_history.append(res)
        report.iterations = k
        if max(res) <= tol:
            report.converged = True
            report.message = "converged"
            return s, report
        s = s.combine(T, theta)
        norm = max(s.sup_norms())
        report.max_state_norm = max(report.max_state_norm, norm)
        if norm > bound_cap:
            report.message = f"a-priori bound exceeded: state sup-norm {norm:.3e} > cap {bound_cap:.3e}"
            return s, report
        hist = report.residual_history
        if len(hist) > stall_window and min(max(r) for r in hist[-stall_window:]) >= max(hist[-stall_window - 1]):
            report.message = f"residual has not decreased in {stall_window} iterations; try a smaller damping"
            return s, report
    report.message = f"max_iter={max_iter} reached; last residuals {report.residual_history[-1]}"
    return s, report


# --- fields -----------------------------------------------------------------------


def _outer_field(state: DensityState, problem: TransmissionProblem, pts: np.ndarray) -> np.ndarray:
    return (
        double_layer_eval(problem.outer, state.mu_o, pts, refine=True)
        + double_layer_eval(problem.inner, state.mu, pts, refine=True)
        + single_layer_eval(problem.inner, state.eta, pts, refine=True)
    )


def _inner_field(state: DensityState, problem: TransmissionProblem, pts: np.ndarray) -> np.ndarray:
    return double_layer_eval(problem.inner, state.mu, pts, refine=True)


def _node_match(b: DiscreteBoundary, pts: np.ndarray) -> np.ndarray:
    """Index of the boundary node each point coincides with, or -1."""
    d = np.linalg.norm(pts[:, None, :] - b.nodes[None, :, :], axis=2)
    j = d.argmin(axis=1)
    return np.where(d[np.arange(len(pts)), j] <= 1e-12 * b.diameter, j, -1)


def _assemble_grid(pts, tags, eval_outer, eval_inner, traces_outer, traces_inner, outer, inner) -> FieldGrid:
    vals = np.empty(len(pts))
    region = np.empty(len(pts), dtype=object)
    if np.any(tags == "exterior"):
        i = int(np.argmax(tags == "exterior"))
        raise ValueError(f"point {pts[i].tolist()} lies outside the outer boundary")
    for name, fn in (("annulus", eval_outer), ("inner", eval_inner)):
        m = tags == name
        if np.any(m):
            vals[m] = fn(pts[m])
            region[m] = name
    on = np.nonzero(tags == "on-boundary")[0]
    if len(on):
        jo, ji = _node_match(outer, pts[on]), _node_match(inner, pts[on])
        if np.any((jo < 0) & (ji < 0)):
            k = on[int(np.argmax((jo < 0) & (ji < 0)))]
            raise NearFieldError(f"point {pts[k].tolist()} is within the near-field cutoff and not a boundary node")
        for k, a, b in zip(on, jo, ji):
            vals[k] = traces_outer[a] if a >= 0 else traces_inner[b]
            region[k] = "annulus"
    return FieldGrid(pts, region.astype(str), vals)


def reconstruct(state: DensityState, problem: TransmissionProblem, points) -> FieldGrid:
    """u^o at annulus points and u^i at inner points.

    Points that coincide with boundary nodes take the u^o boundary trace.
    Other points inside the near-field band are an error.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    tags = classify_points(pts, problem.outer.curve, problem.inner.curve)
    tr = boundary_traces(state, problem)
    return _assemble_grid(
        pts, tags,
        lambda p: _outer_field(state, problem, p),
        lambda p: _inner_field(state, problem, p),
        tr["uo_outer"], tr["uo_inner"], problem.outer, problem.inner,
    )


# --- densities from fields -------------------------------------------------------------


def represent(problem: TransmissionProblem, dirichlet_outer, flux_inner, inner_value: float) -> DensityState:
    """Densities of a harmonic pair with constant u^i.

    ``dirichlet_outer`` is u^o on the outer nodes and ``flux_inner`` the
    normal derivative of u^o on the inner nodes. With u^i constant the inner
    double-layer density is constant and contributes no flux outside.
    """
    ops = problem.ops
    mu = ops.A_i_lu.solve(np.full(problem.inner.N, float(inner_value)))
    no, ni = problem.outer.N, problem.inner.N
    A = np.zeros((no + ni, no + ni))
    A[:no, :no] = ops.A_o
    A[:no, no:] = ops.Cv_io
    A[no:, :no] = ops.Dnw_oi
    A[no:, no:] = 0.5 * np.eye(ni) + ops.Ws_i
    rhs = np.concatenate([np.asarray(dirichlet_outer, dtype=float) - ops.Cw_io @ mu, np.asarray(flux_inner, dtype=float)])
    sol = np.linalg.solve(A, rhs)
    return DensityState(sol[:no], mu, sol[no:])


def _concentric_radii(problem: TransmissionProblem) -> tuple[float, float, np.ndarray]:
    oc, ic = problem.outer.curve, problem.inner.curve
    if oc.kind != "circle" or ic.kind != "circle" or oc.center != ic.center:
        raise GeometryError("radial seeds need concentric circular boundaries")
    return dict(oc.params)["radius"], dict(ic.params)["radius"], np.asarray(oc.center)


def radial_seed(problem: TransmissionProblem, t_inner: float) -> DensityState:
    """Densities of the closed-form radial field with inner constant ``t_inner``.

    Needs concentric circles and constant outer data; the seed is exact when
    ``t_inner`` solves the radial scalar equation.
    """
    from .radial import RadialProblem, radial_outer_flux

    R, r, c = _concentric_radii(problem)
    if np.ptp(problem.f_outer) > 1e-14 * max(1.0, np.abs(problem.f_outer).max()):
        raise ValueError("radial seeds need constant outer data")
    if not problem.G.x_independent:
        raise ValueError("radial seeds need an x-independent flux nonlinearity")
    p = RadialProblem(2, R, r, float(problem.f_outer[0]), problem.F, problem.G, center=tuple(c))
    b = problem.inner
    radial_dir = (b.nodes - c) / np.linalg.norm(b.nodes - c, axis=1)[:, None]
    flux = radial_outer_flux(p, t_inner, r) * np.einsum("ij,ij->i", b.normals, radial_dir)
    return represent(problem, problem.f_outer, flux, t_inner)


# --- weak flux pairing -----------------------------------------------------------------


@dataclass(frozen=True)
class RadialBump:
    """Test function scale * (1 - |x - c|^2 / b^2)^m, supported in the closed disc of radius b."""

    center: tuple[float, float]
    radius: float
    power: int = 6
    scale: float = 1.0

    def __post_init__(self) -> None:
        if self.radius <= 0 or self.power < 4:
            raise ValueError("bump needs a positive radius and power >= 4")

    @classmethod
    def normalized(cls, center, radius: float, power: int, at) -> "RadialBump":
        """Scale chosen so that the bump equals 1 at the point ``at``."""
        b = cls(tuple(map(float, center)), float(radius), int(power))
        v = float(b.value(np.atleast_2d(at))[0])
        if v <= 0:
            raise ValueError("normalization point lies outside the support")
        return cls(b.center, b.radius, b.power, 1.0 / v)

    def _q(self, x):
        d = np.atleast_2d(x) - np.asarray(self.center)
        return d, (d**2).sum(axis=1) / self.radius**2

    def value(self, x) -> np.ndarray:
        _, q = self._q(x)
        return self.scale * np.where(q < 1, np.clip(1 - q, 0, None) ** self.power, 0.0)

    def grad(self, x) -> np.ndarray:
        d, q = self._q(x)
        m = self.power
        g = np.where(q < 1, -m * np.clip(1 - q, 0, None) ** (m - 1), 0.0) * 2.0 / self.radius**2
        return self.scale * g[:, None] * d

    def laplacian(self, x) -> np.ndarray:
        _, q = self._q(x)
        m, b2 = self.power, self.radius**2
        u = np.clip(1 - q, 0, None)
        lap = 4.0 * m * (m - 1) * u ** (m - 2) * q / b2 - 4.0 * m * u ** (m - 1) / b2
        return self.scale * np.where(q < 1, lap, 0.0)

    def boundary_points(self, n: int = 512) -> np.ndarray:
        a = 2 * np.pi * np.arange(n) / n
        return np.asarray(self.center) + self.radius * np.column_stack([np.cos(a), np.sin(a)])


def _check_support(bump: RadialBump, outer: DiscreteBoundary) -> None:
    from .geometry import distance_to_curve, winding_number

    pts = bump.boundary_points()
    if not np.all(winding_number(outer.curve, pts) == 1) or distance_to_curve(outer.curve, pts).min() <= near_field_cutoff(outer):
        raise GeometryError("test-function support must lie strictly inside the outer boundary")


def _layer_integral(g0: np.ndarray, g1: np.ndarray, g2: np.ndarray, delta: float) -> np.ndarray:
    """Integral over [0, delta] of the quadratic through samples at 0, delta, 2 delta."""
    return delta * (5.0 * g0 + 8.0 * g1 - g2) / 12.0


def pairing_integrals(
    outer: DiscreteBoundary,
    inner: DiscreteBoundary,
    eval_outer,
    eval_inner,
    traces: dict[str, np.ndarray],
    bump: RadialBump,
    n_tau: int = 64,
    n_s: int = 256,
) -> dict[str, float]:
    """Boundary and volume terms of the weak flux pairing for given field evaluators.

    The annulus is parameterized by x_i(s) + tau (x_o(s) - x_i(s)), the inner
    region by c + tau (x_i(s) - c). Thin layers next to each boundary use the
    boundary trace at tau = 0 (or 1) and a third-order rule, so no evaluation
    falls inside the near-field band.
    """
    _check_support(bump, outer)
    s = 2.0 * np.pi * np.arange(n_s) / n_s
    ws = 2.0 * np.pi / n_s
    xi, dxi = inner.curve.position(s), inner.curve.evaluate(s, 1)
    xo, dxo = outer.curve.position(s), outer.curve.evaluate(s, 1)
    c = inner.centroid
    cut = max(near_field_cutoff(outer), near_field_cutoff(inner))
    gl_x, gl_w = np.polynomial.legendre.leggauss(n_tau)

    def integrand(points, jac, evaluator):
        lap = bump.laplacian(points)
        out = np.zeros(len(points))
        nz = lap != 0
        if np.any(nz):
            out[nz] = evaluator(points[nz]) * lap[nz] * jac[nz]
        return out

    # annulus
    gap = np.linalg.norm(xo - xi, axis=1)
    delta = 4.0 * cut / gap.min()

    def ann_map(tau):
        X = xi + tau * (xo - xi)
        dX_ds = (1 - tau) * dxi + tau * dxo
        dX_dt = xo - xi
        det = dX_ds[:, 0] * dX_dt[:, 1] - dX_ds[:, 1] * dX_dt[:, 0]
        return X, det

    dets = np.array([ann_map(t)[1] for t in np.linspace(0, 1, 33)])
    if not (np.all(dets < 0) or np.all(dets > 0)):
        raise GeometryError("annulus blend map folds; pairing quadrature needs a simple blend")
    a, b = delta, 1.0 - delta
    vol_ann = 0.0
    for x, w in zip(gl_x, gl_w):
        tau = a + 0.5 * (b - a) * (x + 1)
        X, det = ann_map(tau)
        vol_ann += 0.5 * (b - a) * w * ws * integrand(X, np.abs(det), eval_outer).sum()
    for t0, sign, trace in ((0.0, 1.0, traces["uo_inner"]), (1.0, -1.0, traces["uo_outer"])):
        X0, det0 = ann_map(t0)
        g0 = trig_eval(trace, s) * bump.laplacian(X0) * np.abs(det0)
        g = [g0]
        for k in (1, 2):
            Xk, detk = ann_map(t0 + sign * k * delta)
            g.append(integrand(Xk, np.abs(detk), eval_outer))
        vol_ann += ws * _layer_integral(*g, delta).sum()

    # inner region
    def in_map(tau):
        X = c + tau * (xi - c)
        det = tau * ((xi - c)[:, 0] * dxi[:, 1] - (xi - c)[:, 1] * dxi[:, 0])
        return X, det

    if np.any(in_map(1.0)[1] <= 0):
        raise GeometryError("inner region is not star-shaped about its centroid")
    delta_i = 4.0 * near_field_cutoff(inner) / np.linalg.norm(xi - c, axis=1).min()
    b = 1.0 - delta_i
    vol_in = 0.0
    for x, w in zip(gl_x, gl_w):
        tau = 0.5 * b * (x + 1)
        X, det = in_map(tau)
        vol_in += 0.5 * b * w * ws * integrand(X, det, eval_inner).sum()
    X0, det0 = in_map(1.0)
    g = [trig_eval(traces["ui_inner"], s) * bump.laplacian(X0) * det0]
    for k in (1, 2):
        Xk, detk = in_map(1.0 - k * delta_i)
        g.append(integrand(Xk, detk, eval_inner))
    vol_in += ws * _layer_integral(*g, delta_i).sum()

    dn_phi = np.einsum("ij,ij->i", inner.normals, bump.grad(inner.nodes))
    bnd = float(np.sum((traces["uo_inner"] - traces["ui_inner"]) * dn_phi * inner.weights))
    return {"boundary": bnd, "annulus": float(vol_ann), "inner": float(vol_in)}


def weak_flux_pairing(state: DensityState, problem: TransmissionProblem, bump: RadialBump, n_tau: int = 64, n_s: int = 256) -> tuple[float, float]:
    """Both sides of the weak flux-jump identity against the test function ``bump``.

    lhs is the boundary term over the inner curve plus the volume integrals of
    u Laplacian(phi); rhs is the inner-boundary integral of G(x, u^i) phi.
    """
    tr = boundary_traces(state, problem)
    parts = pairing_integrals(
        problem.outer, problem.inner,
        lambda p: _outer_field(state, problem, p),
        lambda p: _inner_field(state, problem, p),
        tr, bump, n_tau, n_s,
    )
    b = problem.inner
    rhs = float(np.sum(apply_superposition(problem.G, b, tr["ui_inner"]) * bump.value(b.nodes) * b.weights))
    return parts["boundary"] + parts["annulus"] + parts["inner"], rhs

"""Perturbed transmission problem u^o = lam u^i + eps Phi(u^i): Newton solves and continuation in eps.

Unknowns (mu_o, eta_o, eta_i) represent

    U^o = w_o[mu_o] + v_i[eta_o]                 in the annulus,
    U^i = (w_o[mu_o] + v_i[eta_i]) / lam         in the inner region.

The residual N = (N_o, N_1, N_2) collects the outer Dirichlet condition, the
coupling condition and the flux condition on the inner boundary.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .boundary_ops import AnnulusOperators, equilibrium_density
from .fields import FieldGrid
from .geometry import DiscreteBoundary, GeometryError, containment_check
from .nonlinearity import ScalarBC, sublinear_audit
from .potentials import classify_points, double_layer_eval, single_layer_eval
from .transmission import _assemble_grid

__all__ = [
    "CapacityDegeneracyError",
    "NewtonFailure",
    "PerturbState",
    "PerturbedProblem",
    "BranchPoint",
    "ContinuationResult",
    "CAPACITY_GUARD",
    "U_map",
    "inner_trace",
    "assemble_N",
    "assemble_N_jacobian",
    "jacobian_fd_error",
    "solve_epsilon_zero",
    "newton_solve",
    "continue_in_epsilon",
    "local_uniqueness_error",
]

log = logging.getLogger(__name__)

CAPACITY_GUARD = 1e-6


class CapacityDegeneracyError(ValueError):
    """The inner curve's single-layer operator is not invertible (equilibrium constant ~ 0)."""

    def __init__(self, c: float):
        super().__init__(
            f"equilibrium constant of the inner curve is {c:.3e} (|c| < {CAPACITY_GUARD:g}); "
            "the single-layer operator is singular. Rescale the geometry by a factor other than 1."
        )
        self.c = c


class NewtonFailure(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class PerturbState:
    mu_o: np.ndarray
    eta_o: np.ndarray
    eta_i: np.ndarray

    def __post_init__(self) -> None:
        for name in ("mu_o", "eta_o", "eta_i"):
            a = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(a)):
                raise FloatingPointError(f"non-finite entries in {name}")
            object.__setattr__(self, name, a)

    def parts(self):
        return self.mu_o, self.eta_o, self.eta_i

    def to_vector(self) -> np.ndarray:
        return np.concatenate(self.parts())

    @classmethod
    def from_vector(cls, v, n_outer: int, n_inner: int) -> "PerturbState":
        v = np.asarray(v, dtype=float)
        return cls(v[:n_outer], v[n_outer : n_outer + n_inner], v[n_outer + n_inner :])


@dataclass(eq=False)
class PerturbedProblem:
    outer: DiscreteBoundary
    inner: DiscreteBoundary
    f_outer: np.ndarray
    lam: float
    Phi: ScalarBC
    G: ScalarBC

    def __post_init__(self) -> None:
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        self.f_outer = np.asarray(self.f_outer, dtype=float)
        if self.f_outer.shape == ():
            self.f_outer = np.full(self.outer.N, float(self.f_outer))
        if self.f_outer.shape != (self.outer.N,):
            raise ValueError(f"outer data needs {self.outer.N} node values")
        if not containment_check(self.outer.curve, self.inner.curve):
            raise GeometryError("inner curve must lie strictly inside the outer curve")
        _, c = equilibrium_density(self.inner)
        self.equilibrium_constant = c
        if abs(c) < CAPACITY_GUARD:
            raise CapacityDegeneracyError(c)
        self.ops = AnnulusOperators(self.outer, self.inner)

    @property
    def sizes(self) -> tuple[int, int]:
        return self.outer.N, self.inner.N

    def state(self, v) -> PerturbState:
        return PerturbState.from_vector(v, *self.sizes)


@dataclass
class BranchPoint:
    eps: float
    state: PerturbState
    newton_iterations: int
    sigma_min: float
    residual: float
    ui_mean: float
    ui_spread: float
    fold: bool = False

    def summary(self) -> dict:
        mu_o, eta_o, eta_i = self.state.parts()
        return {
            "eps": self.eps,
            "ui_mean": self.ui_mean,
            "ui_spread": self.ui_spread,
            "sigma_min": self.sigma_min,
            "newton_iterations": self.newton_iterations,
            "residual": self.residual,
            "fold": self.fold,
            "trace": {
                "mu_o_mean": float(mu_o.mean()),
                "eta_o_mean": float(eta_o.mean()),
                "eta_i_mean": float(eta_i.mean()),
                "sup_norm": float(np.abs(self.state.to_vector()).max()),
            },
        }


@dataclass
class ContinuationResult:
    points: list[BranchPoint]
    reached_end: bool
    fold_detected: bool
    fold_eps: float | None = None
    diagnostics: dict = field(default_factory=dict)


# --- residual and Jacobian -------------------------------------------------------


def inner_trace(state: PerturbState, problem: PerturbedProblem) -> np.ndarray:
    """U^i on the inner boundary."""
    ops = problem.ops
    return (ops.Cw_oi @ state.mu_o + ops.V_i @ state.eta_i) / problem.lam


def assemble_N(eps: float, state: PerturbState, problem: PerturbedProblem) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    ops, lam = problem.ops, problem.lam
    mu_o, eta_o, eta_i = state.parts()
    tau = inner_trace(state, problem)
    s = problem.inner.s
    N_o = ops.A_o @ mu_o + ops.Cv_io @ eta_o - problem.f_outer
    N_1 = ops.V_i @ (eta_o - eta_i) - eps * problem.Phi.value(s, tau)
    N_2 = (
        0.5 * eta_o + ops.Ws_i @ eta_o
        - (-0.5 * eta_i + ops.Ws_i @ eta_i) / lam
        + ((lam - 1.0) / lam) * (ops.Dnw_oi @ mu_o)
        - problem.G.value(s, tau)
    )
    return N_o, N_1, N_2


def _N_vec(eps, X, problem) -> np.ndarray:
    return np.concatenate(assemble_N(eps, problem.state(X), problem))


def assemble_N_jacobian(eps: float, state: PerturbState, problem: PerturbedProblem) -> np.ndarray:
    """Dense Jacobian of N with 3 x 3 blocks ordered (mu_o, eta_o, eta_i)."""
    ops, lam = problem.ops, problem.lam
    no, ni = problem.sizes
    tau = inner_trace(state, problem)
    s = problem.inner.s
    dphi = eps * problem.Phi.dt(s, tau)[:, None]
    dg = problem.G.dt(s, tau)[:, None]
    I = np.eye(ni)
    Jm = np.zeros((no + 2 * ni, no + 2 * ni))
    o, a, b = slice(0, no), slice(no, no + ni), slice(no + ni, no + 2 * ni)
    Jm[o, o] = ops.A_o
    Jm[o, a] = ops.Cv_io
    Jm[a, o] = -dphi * ops.Cw_oi / lam
    Jm[a, a] = ops.V_i
    Jm[a, b] = -ops.V_i - dphi * ops.V_i / lam
    Jm[b, o] = ((lam - 1.0) / lam) * ops.Dnw_oi - dg * ops.Cw_oi / lam
    Jm[b, a] = 0.5 * I + ops.Ws_i
    Jm[b, b] = -(-0.5 * I + ops.Ws_i) / lam - dg * ops.V_i / lam
    return Jm


def _N_eps(X, problem) -> np.ndarray:
    """Partial derivative of N in eps."""
    no, ni = problem.sizes
    tau = inner_trace(problem.state(X), problem)
    out = np.zeros(no + 2 * ni)
    out[no : no + ni] = -problem.Phi.value(problem.inner.s, tau)
    return out


def jacobian_fd_error(eps: float, state: PerturbState, problem: PerturbedProblem, direction, h: float = 1e-6) -> float:
    """Relative error between J delta and the central difference of N along delta."""
    X = state.to_vector()
    d = np.asarray(direction, dtype=float)
    fd = (_N_vec(eps, X + h * d, problem) - _N_vec(eps, X - h * d, problem)) / (2.0 * h)
    Jd = assemble_N_jacobian(eps, state, problem) @ d
    return float(np.linalg.norm(fd - Jd) / max(np.linalg.norm(Jd), np.finfo(float).tiny))


# --- solves ----------------------------------------------------------------------


def _sigma_min(Jm: np.ndarray) -> float:
    return float(sla.svdvals(Jm)[-1])


def _point(eps, X, problem, iterations, residual, sigma=None, fold=False) -> BranchPoint:
    st = problem.state(X)
    ui = inner_trace(st, problem)
    if sigma is None:
        sigma = _sigma_min(assemble_N_jacobian(eps, st, problem))
    return BranchPoint(float(eps), st, iterations, sigma, float(residual), float(ui.mean()), float(np.ptp(ui)), fold)


def solve_epsilon_zero(problem: PerturbedProblem, theta: float = 0.5, tol: float = 1e-12, max_iter: int = 500) -> PerturbState:
    """Solution at eps = 0 from the damped fixed-point form in eta.

    eta = J_lam^-1 [lam/(lam+1) G(U^i) - k Dnw (1/2 I + W_o)^-1 f_o] with
    k = (lam - 1)/(lam + 1), after which mu_o follows from the outer condition.
    """
    ok, delta, _ = sublinear_audit(problem.G, problem.inner)
    if not ok:
        raise ValueError(f"flux nonlinearity is not sub-linear (growth exponent {delta:g} >= 1)")
    ops, lam = problem.ops, problem.lam
    k = (lam - 1.0) / (lam + 1.0)
    Jl = ops.J_lambda_lu(lam)
    A = ops.A_o_lu
    base = -k * (ops.Dnw_oi @ A.solve(problem.f_outer))
    s = problem.inner.s

    def mu_of(eta):
        return A.solve(problem.f_outer - ops.Cv_io @ eta)

    def T(eta):
        tau = (ops.Cw_oi @ mu_of(eta) + ops.V_i @ eta) / lam
        return Jl.solve(lam / (lam + 1.0) * problem.G.value(s, tau) + base)

    eta = np.zeros(problem.inner.N)
    for it in range(1, max_iter + 1):
        Te = T(eta)
        r = float(np.abs(Te - eta).max())
        if r <= tol:
            break
        eta = (1.0 - theta) * eta + theta * Te
    else:
        raise NewtonFailure(f"eps = 0 fixed-point iteration did not converge (residual {r:.3e})")
    state = PerturbState(mu_of(eta), eta.copy(), eta.copy())
    gt = problem.G.dt(s, inner_trace(state, problem))
    if gt.min() < 0:
        warnings.warn(f"flux derivative at the eps = 0 trace is negative (min {gt.min():.3e})", RuntimeWarning, stacklevel=2)
    return state


def newton_solve(
    problem: PerturbedProblem,
    eps: float,
    initial: PerturbState,
    tol: float = 1e-10,
    max_iter: int = 25,
    *,
    polish: int = 0,
    contraction: float | None = None,
) -> BranchPoint:
    """Newton's method for N(eps, .) = 0 in the sup-norm.

    ``polish`` extra iterations are taken after the tolerance is met. With
    ``contraction`` set, the solve fails as soon as a correction is not at
    least that factor smaller than the previous one; continuation uses this to
    refuse slow convergence near a fold and jumps onto a distant branch.
    """
    X = initial.to_vector().copy()
    R = _N_vec(eps, X, problem)
    r0 = r = float(np.abs(R).max())
    it = 0
    extra = polish
    last_step = None
    while True:
        if r <= tol:
            if extra <= 0:
                return _point(eps, X, problem, it, r)
            extra -= 1
        if it >= max_iter:
            raise NewtonFailure(f"Newton did not converge in {max_iter} iterations at eps={eps:g} (residual {r:.3e})")
        Jm = assemble_N_jacobian(eps, problem.state(X), problem)
        try:
            dX = sla.solve(Jm, -R, check_finite=True)
        except (sla.LinAlgError, ValueError) as exc:
            raise NewtonFailure(f"singular Jacobian at eps={eps:g}") from exc
        step = float(np.abs(dX).max())
        if contraction is not None and last_step is not None and step > contraction * last_step and r > tol:
            raise NewtonFailure(f"Newton corrections not contracting at eps={eps:g}")
        last_step = step
        X = X + dX
        it += 1
        R = _N_vec(eps, X, problem)
        r = float(np.abs(R).max())
        if not np.isfinite(r) or r > 1e6 * max(r0, 1.0):
            raise NewtonFailure(f"Newton diverged at eps={eps:g}")


def _augmented_solve(problem, eps0, X0, v, X_anchor, s_val, tol, max_iter=25):
    """Solve N(eps, X) = 0 together with v . (X - X_anchor) = s_val for (X, eps)."""
    X, eps = X0.copy(), float(eps0)
    n = len(X)
    for _ in range(max_iter):
        R = np.append(_N_vec(eps, X, problem), v @ (X - X_anchor) - s_val)
        if np.abs(R).max() <= tol:
            return X, eps
        A = np.zeros((n + 1, n + 1))
        A[:n, :n] = assemble_N_jacobian(eps, problem.state(X), problem)
        A[:n, n] = _N_eps(X, problem)
        A[n, :n] = v
        d = sla.solve(A, -R)
        X, eps = X + d[:n], eps + d[n]
    raise NewtonFailure("augmented fold system did not converge")


def _locate_fold(problem, prev: BranchPoint, last: BranchPoint, direction: float, tol: float):
    """Turning point of the branch near ``last``.

    The branch is parameterized by the coordinate s along the Jacobian's
    near-null vector; the fold is the extremum of eps(s), found by repeated
    parabola fits.
    """
    X_a = last.state.to_vector()
    Jm = assemble_N_jacobian(last.eps, last.state, problem)
    _, _, Vt = sla.svd(Jm)
    v = Vt[-1]
    s_prev = float(v @ (prev.state.to_vector() - X_a))
    if s_prev == 0.0:
        s_prev = 1e-3
    # Orient v so that s increases from prev to last (towards the fold).
    if s_prev > 0:
        v, s_prev = -v, -s_prev
    sigma = abs(s_prev)
    samples = {0.0: (X_a, last.eps), s_prev: (prev.state.to_vector(), prev.eps)}
    centre = 0.0
    first = True
    for _ in range(40):
        for sv in (centre - sigma, centre, centre + sigma):
            if sv not in samples:
                near = min(samples, key=lambda q: abs(q - sv))
                Xg, eg = samples[near]
                samples[sv] = _augmented_solve(problem, eg, Xg + (sv - near) * v, v, X_a, sv, tol)
        ss = np.array([centre - sigma, centre, centre + sigma])
        ee = np.array([samples[q][1] for q in ss])
        c2, c1, _ = np.polyfit(ss - centre, ee, 2)
        if abs(c2) * sigma**2 < 1e-12 * max(1.0, abs(ee[1])):
            break  # eps differences are at round-off level
        if c2 * direction >= 0:
            if first:
                return None  # not a turning point in the continuation direction
            break
        first = False
        shift = -c1 / (2.0 * c2)
        shift = float(np.clip(shift, -2 * sigma, 2 * sigma))
        centre += shift
        sigma = max(abs(shift), sigma / 8.0)
    if centre not in samples:
        near = min(samples, key=lambda q: abs(q - centre))
        Xg, eg = samples[near]
        samples[centre] = _augmented_solve(problem, eg, Xg + (centre - near) * v, v, X_a, centre, tol)
    Xf, ef = samples[centre]
    r = float(np.abs(_N_vec(ef, Xf, problem)).max())
    return _point(ef, Xf, problem, 0, r, fold=True)


def continue_in_epsilon(
    problem: PerturbedProblem,
    eps_start: float,
    eps_end: float,
    initial_step: float = 0.05,
    initial: PerturbState | None = None,
    *,
    tol: float = 1e-10,
    max_iter: int = 25,
    checkpoints=(),
    fd_check: bool = True,
    seed: int = 0,
    contraction: float = 0.5,
) -> ContinuationResult:
    """Natural-parameter continuation with the previous state as predictor.

    Steps halve on Newton failure and grow back (up to ``initial_step``) after
    a success. When the step falls below 1e-4 x ``initial_step`` the turning
    point is located and reported as a fold if the Jacobian's smallest singular
    value there is below 1e-4. Steps also land exactly on ``checkpoints``.
    Accepted points get one Newton iteration past the tolerance, which keeps
    their state error near round-off even where the Jacobian is ill conditioned.
    """
    if initial_step <= 0:
        raise ValueError("initial step must be positive")
    direction = 1.0 if eps_end >= eps_start else -1.0
    if initial is None:
        if eps_start != 0.0:
            raise ValueError("an initial state is required when eps_start is not 0")
        initial = solve_epsilon_zero(problem)
    first = newton_solve(problem, eps_start, initial, tol, max_iter, polish=1)
    points = [first]
    diagnostics: dict = {"rejected_steps": 0}
    rng = np.random.default_rng(seed)
    if fd_check:
        d = rng.standard_normal(len(first.state.to_vector()))
        diagnostics["jacobian_fd_error"] = jacobian_fd_error(first.eps, first.state, problem, d)
    stops = sorted({float(c) for c in checkpoints if (c - eps_start) * direction > 0 and (eps_end - c) * direction >= 0} | {float(eps_end)}, key=lambda c: c * direction)
    h = initial_step
    eps = eps_start
    fold_eps = None
    fold = False
    while (eps_end - eps) * direction > 0:
        nxt = next(c for c in stops if (c - eps) * direction > 0)
        target = eps + direction * h
        if (target - nxt) * direction >= -1e-14:
            target = nxt
        try:
            bp = newton_solve(problem, target, points[-1].state, tol, max_iter, polish=1, contraction=contraction)
        except NewtonFailure:
            diagnostics["rejected_steps"] += 1
            h *= 0.5
            if h < 1e-4 * initial_step:
                last = points[-1]
                sig = last.sigma_min
                if sig < 1e-4:
                    fold, fold_eps = True, last.eps
                    last.fold = True
                elif len(points) >= 2:
                    fp = _locate_fold(problem, points[-2], last, direction, tol)
                    if fp is not None and fp.sigma_min < 1e-4:
                        points.append(fp)
                        fold, fold_eps = True, fp.eps
                    diagnostics["fold_located"] = fp is not None
                diagnostics["step_collapse_eps"] = last.eps
                diagnostics["sigma_at_collapse"] = sig
                break
            continue
        points.append(bp)
        eps = target
        h = min(2.0 * h, initial_step)
    reached = not fold and (eps_end - eps) * direction <= 0
    if len(points) >= 3:
        # Near a fold sigma^2 is linear in eps; extrapolate its zero from the last two points.
        a, b = points[-3] if fold and points[-1].fold else points[-2], points[-2] if fold and points[-1].fold else points[-1]
        if a.eps != b.eps and b.sigma_min < a.sigma_min:
            slope = (b.sigma_min**2 - a.sigma_min**2) / (b.eps - a.eps)
            diagnostics["fold_eps_sigma_extrapolation"] = b.eps - b.sigma_min**2 / slope
    return ContinuationResult(points, reached, fold, fold_eps, diagnostics)


def local_uniqueness_error(problem: PerturbedProblem, point: BranchPoint, noise: float = 1e-3, tol: float = 1e-10, seed: int = 0) -> float:
    """Sup distance between ``point`` and the Newton solution restarted from a noised copy of it."""
    rng = np.random.default_rng(seed)
    X = point.state.to_vector()
    start = problem.state(X + noise * rng.uniform(-1.0, 1.0, X.shape))
    again = newton_solve(problem, point.eps, start, tol, polish=1)
    return float(np.abs(again.state.to_vector() - X).max())


# --- fields ----------------------------------------------------------------------


def U_map(state: PerturbState, problem: PerturbedProblem, points) -> FieldGrid:
    """U^o at annulus points and U^i at inner points."""
    P = np.atleast_2d(np.asarray(points, dtype=float))
    tags = classify_points(P, problem.outer.curve, problem.inner.curve)
    ops = problem.ops
    outer, inner = problem.outer, problem.inner

    def u_o(p):
        return double_layer_eval(outer, state.mu_o, p, refine=True) + single_layer_eval(inner, state.eta_o, p, refine=True)

    def u_i(p):
        return (double_layer_eval(outer, state.mu_o, p, refine=True) + single_layer_eval(inner, state.eta_i, p, refine=True)) / problem.lam

    tr_o = ops.A_o @ state.mu_o + ops.Cv_io @ state.eta_o
    tr_i = ops.Cw_oi @ state.mu_o + ops.V_i @ state.eta_o
    return _assemble_grid(P, tags, u_o, u_i, tr_o, tr_i, outer, inner)

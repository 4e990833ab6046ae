"""Fundamental solutions and off-boundary evaluation of layer potentials.

All layer potentials are two-dimensional:

* single layer  v[phi](x) = int phi(y) S(x - y) dsigma_y
* double layer  w[psi](x) = -int psi(y) nu(y) . grad S(x - y) dsigma_y

Evaluation points closer to the boundary than ``cutoff`` (default 1e-3 times
the boundary diameter) are refused. Values there should come from boundary
traces. With ``refine=True`` the density is trigonometrically interpolated
onto a finer copy of the boundary so the trapezoid rule stays accurate for
targets down to the cutoff.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .geometry import Curve, DiscreteBoundary, discretize, distance_to_curve, trig_upsample, winding_number

__all__ = [
    "NearFieldError",
    "EvalPoint",
    "fundamental_solution",
    "grad_fundamental_solution",
    "single_layer_eval",
    "grad_single_layer_eval",
    "double_layer_eval",
    "grad_double_layer_eval",
    "classify_points",
    "near_field_cutoff",
    "sphere_measure",
    "assembly_threads",
    "kernel_matrix",
]

NEAR_FIELD_FRACTION = 1e-3
# Target-to-node spacing ratio that keeps the trapezoid rule near machine precision.
REFINE_RATIO = 8.0
MAX_REFINED_NODES = 1 << 18


class NearFieldError(ValueError):
    """Evaluation point too close to a boundary for direct quadrature."""


def sphere_measure(n: int) -> float:
    """(n-1)-dimensional measure of the unit sphere in R^n."""
    return 2.0 * math.pi ** (n / 2) / math.gamma(n / 2)


def fundamental_solution(n: int, x) -> float | np.ndarray:
    """Fundamental solution of the Laplacian: log|x|/(2 pi) in 2D, |x|^(2-n)/(s_n (2-n)) otherwise."""
    if n not in (2, 3):
        raise ValueError(f"dimension must be 2 or 3, got {n}")
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x, axis=-1)
    if np.any(r == 0):
        raise ValueError("fundamental solution is singular at x = 0")
    if n == 2:
        return np.log(r) / (2.0 * math.pi)
    return r ** (2 - n) / (sphere_measure(n) * (2 - n))


def grad_fundamental_solution(n: int, x) -> np.ndarray:
    if n not in (2, 3):
        raise ValueError(f"dimension must be 2 or 3, got {n}")
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != n:
        raise ValueError(f"expected points of dimension {n}")
    r = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(r == 0):
        raise ValueError("gradient of the fundamental solution is singular at x = 0")
    return x / (sphere_measure(n) * r**n)


# --- region tagging ---------------------------------------------------------------


@dataclass(frozen=True)
class EvalPoint:
    point: tuple[float, float]
    region: str  # "inner" | "annulus" | "exterior" | "on-boundary"


def near_field_cutoff(b: DiscreteBoundary | Curve) -> float:
    return NEAR_FIELD_FRACTION * b.diameter


def classify_points(points, outer: Curve, inner: Curve | None = None, *, cutoff: float | None = None) -> np.ndarray:
    """Region tags from winding numbers. Points within ``cutoff`` of a curve are ``on-boundary``.

    ``cutoff`` defaults to each curve's own near-field distance.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    tags = np.full(len(pts), "exterior", dtype=object)
    in_outer = winding_number(outer, pts) == 1
    tags[in_outer] = "annulus" if inner is not None else "inner"
    near = distance_to_curve(outer, pts) <= (near_field_cutoff(outer) if cutoff is None else cutoff)
    if inner is not None:
        in_inner = winding_number(inner, pts) == 1
        tags[in_inner & in_outer] = "inner"
        near |= distance_to_curve(inner, pts) <= (near_field_cutoff(inner) if cutoff is None else cutoff)
    tags[near] = "on-boundary"
    return tags


# --- kernels --------------------------------------------------------------------


def assembly_threads() -> int:
    try:
        return max(1, int(os.environ.get("ANNULUS_BEM_THREADS", "1")))
    except ValueError:
        return 1


def _kernel_block(kind: str, x: np.ndarray, y: np.ndarray, ny: np.ndarray, nx: np.ndarray | None) -> np.ndarray:
    """Kernel values K(x_i, y_j) without quadrature weights."""
    zx = x[:, None, 0] - y[None, :, 0]
    zy = x[:, None, 1] - y[None, :, 1]
    r2 = zx * zx + zy * zy
    if kind == "S":
        return np.log(r2) / (4.0 * math.pi)
    if kind == "dS":  # grad_x S, returned as (2, m, n)
        return np.stack([zx, zy]) / (2.0 * math.pi * r2)
    nz = ny[None, :, 0] * zx + ny[None, :, 1] * zy
    if kind == "D":
        return -nz / (2.0 * math.pi * r2)
    if kind == "dD":  # grad_x of the double-layer kernel, (2, m, n)
        gx = ny[None, :, 0] / r2 - 2.0 * nz * zx / (r2 * r2)
        gy = ny[None, :, 1] / r2 - 2.0 * nz * zy / (r2 * r2)
        return -np.stack([gx, gy]) / (2.0 * math.pi)
    if kind == "nD":  # target-normal derivative of the double-layer kernel
        nxz = nx[:, None, 0] * zx + nx[:, None, 1] * zy
        nn = nx[:, None, 0] * ny[None, :, 0] + nx[:, None, 1] * ny[None, :, 1]
        return -(nn - 2.0 * nz * nxz / r2) / (2.0 * math.pi * r2)
    if kind == "nS":  # target-normal derivative of the single-layer kernel
        nxz = nx[:, None, 0] * zx + nx[:, None, 1] * zy
        return nxz / (2.0 * math.pi * r2)
    raise ValueError(f"unknown kernel {kind!r}")


def kernel_matrix(kind: str, targets, src: DiscreteBoundary, target_normals=None) -> np.ndarray:
    """Weighted kernel matrix K(x_i, y_j) w_j for a scalar kernel.

    Rows are computed in independent chunks; with ``ANNULUS_BEM_THREADS > 1``
    the chunks run on a thread pool, writing disjoint rows, so the result does
    not depend on the thread count.
    """
    x = np.atleast_2d(np.asarray(targets, dtype=float))
    nx = None if target_normals is None else np.atleast_2d(np.asarray(target_normals, dtype=float))
    out = np.empty((len(x), src.N))
    chunk = max(1, 1_000_000 // max(src.N, 1))

    def work(i: int) -> None:
        sl = slice(i, min(i + chunk, len(x)))
        k = _kernel_block(kind, x[sl], src.nodes, src.normals, None if nx is None else nx[sl])
        out[sl] = k * src.weights[None, :]

    starts = range(0, len(x), chunk)
    threads = assembly_threads()
    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, starts))
    else:
        for i in starts:
            work(i)
    return out


# --- evaluation -----------------------------------------------------------------


def _prepare(b: DiscreteBoundary, density, x, cutoff, refine):
    pts = np.asarray(x, dtype=float)
    scalar = pts.ndim == 1
    pts = np.atleast_2d(pts)
    dens = np.asarray(density, dtype=float)
    if dens.shape[0] != b.N:
        raise ValueError(f"density has {dens.shape[0]} entries, boundary has {b.N} nodes")
    cut = near_field_cutoff(b) if cutoff is None else float(cutoff)
    dist = distance_to_curve(b.curve, pts)
    bad = dist <= cut
    if np.any(bad):
        i = int(np.argmax(bad))
        raise NearFieldError(
            f"point {pts[i].tolist()} is {dist[i]:.3e} from the boundary (cutoff {cut:.3e}); use boundary traces"
        )
    return pts, scalar, dens, dist


def _levels(b: DiscreteBoundary, dist: np.ndarray, refine: bool) -> np.ndarray:
    """Node count to use per target: N times the smallest power of two that is fine enough."""
    if not refine:
        return np.full(len(dist), b.N)
    h = b.weights.max()
    need = np.ceil(np.log2(np.maximum(REFINE_RATIO * h / dist, 1.0))).astype(int)
    M = b.N * 2.0 ** np.maximum(need, 0)
    cap = max(b.N, MAX_REFINED_NODES)
    if np.any(M > cap):
        i = int(np.argmax(M))
        raise NearFieldError(f"target {dist[i]:.3e} from the boundary needs more than {cap} refined nodes; use boundary traces")
    return M.astype(int)


def _evaluate(kind: str, b: DiscreteBoundary, density, x, cutoff, refine, ncomp: int):
    pts, scalar, dens, dist = _prepare(b, density, x, cutoff, refine)
    extra = dens.shape[1:]
    out = np.zeros((ncomp, len(pts)) + extra) if ncomp > 1 else np.zeros((len(pts),) + extra)
    levels = _levels(b, dist, refine)
    for M in np.unique(levels):
        sel = np.nonzero(levels == M)[0]
        fine = b if M == b.N else discretize(b.curve, int(M))
        d = dens if M == b.N else trig_upsample(dens, int(M))
        dw = d * fine.weights.reshape((-1,) + (1,) * len(extra))
        chunk = max(1, 1_000_000 // int(M))
        for i in range(0, len(sel), chunk):
            idx = sel[i : i + chunk]
            k = _kernel_block(kind, pts[idx], fine.nodes, fine.normals, None)
            if ncomp > 1:
                out[:, idx] = np.tensordot(k, dw, axes=([2], [0]))
            else:
                out[idx] = np.tensordot(k, dw, axes=([1], [0]))
    if ncomp > 1:
        out = np.moveaxis(out, 0, 1)  # (points, 2, ...)
    return out[0] if scalar else out


def single_layer_eval(b: DiscreteBoundary, phi, x, *, cutoff: float | None = None, refine: bool = False):
    """sum_j phi_j S(x - x_j) w_j at off-boundary points."""
    return _evaluate("S", b, phi, x, cutoff, refine, 1)


def grad_single_layer_eval(b: DiscreteBoundary, phi, x, *, cutoff: float | None = None, refine: bool = False):
    return _evaluate("dS", b, phi, x, cutoff, refine, 2)


def double_layer_eval(b: DiscreteBoundary, psi, x, *, cutoff: float | None = None, refine: bool = False):
    """-sum_j psi_j nu_j . grad S(x - x_j) w_j at off-boundary points."""
    return _evaluate("D", b, psi, x, cutoff, refine, 1)


def grad_double_layer_eval(b: DiscreteBoundary, psi, x, *, cutoff: float | None = None, refine: bool = False):
    """Gradient in x of the double layer, kernel differentiated analytically."""
    return _evaluate("dD", b, psi, x, cutoff, refine, 2)

"""Command-line front end: ``annulus-bem {verify,solve,continue,radial}``.

Exit status: 0 success, 1 numerical failure (non-convergence or a guard), 2
usage or configuration error. Payload files are deterministic; timestamps go
only to ``<command>.log`` in the output directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .boundary_ops import SingularOperatorError, equilibrium_density, operator_identity_report
from .config import ConfigError, ProblemConfig, load_config, parse_seed
from .geometry import GeometryError
from .nonlinearity import AssumptionViolation
from .perturbation import (
    CAPACITY_GUARD,
    CapacityDegeneracyError,
    NewtonFailure,
    PerturbedProblem,
    U_map,
    continue_in_epsilon,
    inner_trace,
    local_uniqueness_error,
)
from .potentials import classify_points
from .radial import RadialProblem, radial_outer_value, radial_roots, radial_small_roots
from .transmission import (
    DensityState,
    TransmissionProblem,
    boundary_traces,
    equation_residuals,
    picard_solve,
    radial_seed,
    reconstruct,
)

__all__ = ["main", "build_parser", "field_grid_points"]

EXIT_OK, EXIT_NUMERICAL, EXIT_USAGE = 0, 1, 2

# Identity tolerances checked by ``verify``.
IDENTITY_TOL = 1e-10
JUMP_TOL = 1e-4

log = logging.getLogger("annulus_bem.cli")


class NumericalFailure(RuntimeError):
    pass


# --- output helpers --------------------------------------------------------------


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, (np.floating, float)):
        return float(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, np.bool_):
        return bool(o)
    return o


def _dumps(obj, indent: int | None = 2) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=indent)


def _write_json(path: Path, obj) -> None:
    path.write_text(_dumps(obj) + "\n", encoding="utf-8")
    log.info("wrote %s", path)


def field_grid_points(cfg: ProblemConfig, outer, inner) -> tuple[np.ndarray, int]:
    """Row-major grid over the outer curve's bounding box, restricted to the two regions.

    Points closer to a boundary than the near-field cutoff are skipped; the
    count of skipped points is returned alongside.
    """
    pts = outer.curve.samples()
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    n = cfg.grid
    xs, ys = np.linspace(lo[0], hi[0], n), np.linspace(lo[1], hi[1], n)
    X, Y = np.meshgrid(xs, ys)
    P = np.column_stack([X.ravel(), Y.ravel()])
    tags = classify_points(P, outer.curve, inner.curve)
    keep = (tags == "inner") | (tags == "annulus")
    return P[keep], int(np.count_nonzero(tags == "on-boundary"))


# --- commands --------------------------------------------------------------------


def _seed(cfg: ProblemConfig, override: str | None):
    return parse_seed(override) if override is not None else cfg.seed


def cmd_verify(cfg: ProblemConfig, out: Path, args) -> int:
    outer, inner = cfg.boundaries()
    report: dict = {"mode": cfg.mode, "boundaries": {}}
    ok = True
    failures = []
    for name, b in (("outer", outer), ("inner", inner)):
        r = operator_identity_report(b, seed=0)
        checks = {
            "W_row_sum": r["W_row_sum_error"] <= IDENTITY_TOL,
            "adjointness": r["adjointness_error"] <= IDENTITY_TOL,
            "jump_relations": all(v <= JUMP_TOL for v in r["jump_relations"].values()),
        }
        if "circle_V_eigenvalue_error" in r:
            checks["circle_V_eigenvalues"] = r["circle_V_eigenvalue_error"] <= IDENTITY_TOL
        r["checks"] = checks
        report["boundaries"][name] = r
        failures += [f"{name}.{k}" for k, v in checks.items() if not v]
    ok = not failures
    _, c = equilibrium_density(inner)
    report["inner_equilibrium_constant"] = c
    report["inner_equilibrium_constant_times_perimeter"] = c * float(inner.weights.sum())
    code = EXIT_OK if ok else EXIT_NUMERICAL
    if cfg.mode == "perturbed" and abs(c) < CAPACITY_GUARD:
        msg = str(CapacityDegeneracyError(c))
        report["capacity_guard"] = {"passed": False, "message": msg}
        failures.append("capacity_guard")
        log.error(msg)
        print(msg, file=sys.stderr)
        code = EXIT_NUMERICAL
    elif cfg.mode == "perturbed":
        report["capacity_guard"] = {"passed": True}
    report["failures"] = failures
    report["passed"] = code == EXIT_OK
    _write_json(out / "verify.json", report)
    return code


def cmd_solve(cfg: ProblemConfig, out: Path, args) -> int:
    if cfg.F is None:
        raise ConfigError("solve needs nonlinearity.F")
    outer, inner = cfg.boundaries()
    problem = TransmissionProblem(outer, inner, cfg.outer_data(outer), cfg.F, cfg.G, cfg.bracket)
    kind, t = _seed(cfg, args.seed_branch)
    if kind == "zero":
        initial = DensityState.zeros(problem)
    else:
        try:
            initial = radial_seed(problem, t)
        except (GeometryError, ValueError) as exc:
            raise ConfigError(f"radial seed unavailable: {exc}") from exc
    state, rep = picard_solve(initial, problem, cfg.theta, cfg.tol, cfg.max_iter)
    tr = boundary_traces(state, problem)
    ui = tr["ui_inner"]
    payload = {
        "seed": f"{kind}" if t is None else f"{kind}:{t!r}",
        "N": [outer.N, inner.N],
        "solve": rep.as_dict(),
        "ui_mean": float(ui.mean()),
        "ui_spread": float(np.ptp(ui)),
        "equation_residuals": list(equation_residuals(state, problem)),
    }
    pts, skipped = field_grid_points(cfg, outer, inner)
    payload["field_points"] = len(pts)
    payload["field_points_skipped_near_boundary"] = skipped
    reconstruct(state, problem, pts).to_csv(out / f"{cfg.prefix}_field.csv")
    _write_json(out / f"{cfg.prefix}_report.json", payload)
    log.info("picard: %s after %d iterations", rep.message, rep.iterations)
    if not rep.converged:
        print(f"not converged: {rep.message}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def _perturbed_problem(cfg: ProblemConfig) -> PerturbedProblem:
    if cfg.lam is None:
        raise ConfigError("continue needs a [perturbed] section")
    outer, inner = cfg.boundaries()
    return PerturbedProblem(outer, inner, cfg.outer_data(outer), cfg.lam, cfg.Phi, cfg.G)


def cmd_continue(cfg: ProblemConfig, out: Path, args) -> int:
    problem = _perturbed_problem(cfg)
    res = continue_in_epsilon(
        problem, cfg.eps_start, cfg.eps_end, cfg.step,
        tol=cfg.newton_tol, max_iter=cfg.newton_max_iter, checkpoints=cfg.checkpoints,
    )
    with open(out / "branch.jsonl", "w", encoding="utf-8") as fh:
        for p in res.points:
            fh.write(_dumps(p.summary(), indent=None) + "\n")
    uniq = []
    for p in res.points:
        if p.sigma_min >= 1e-3 and not p.fold:
            d = local_uniqueness_error(problem, p, tol=cfg.newton_tol)
            uniq.append({"eps": p.eps, "distance": d, "passed": d <= 10 * cfg.newton_tol})
    summary = {
        "eps_start": cfg.eps_start,
        "eps_end": cfg.eps_end,
        "points": len(res.points),
        "reached_end": res.reached_end,
        "fold_detected": res.fold_detected,
        "fold_eps": res.fold_eps,
        "final_ui_mean": res.points[-1].ui_mean,
        "diagnostics": res.diagnostics,
        "local_uniqueness": uniq,
        "equilibrium_constant": problem.equilibrium_constant,
    }
    _write_json(out / "continue.json", summary)
    pts, _ = field_grid_points(cfg, problem.outer, problem.inner)
    U_map(res.points[-1].state, problem, pts).to_csv(out / f"{cfg.prefix}_branch_end_field.csv")
    log.info("continuation: %d points, fold=%s", len(res.points), res.fold_detected)
    return EXIT_OK


def _radial_problem(cfg: ProblemConfig) -> RadialProblem:
    R, r, c = cfg.radial_geometry()
    g = cfg.G
    if cfg.lam is not None:
        eps = cfg.eps if cfg.eps is not None else cfg.eps_start
        return RadialProblem(cfg.dimension, R, r, cfg.t_outer(), cfg.F, g, cfg.lam, cfg.Phi, eps, c)
    return RadialProblem(cfg.dimension, R, r, cfg.t_outer(), cfg.F, g, center=c)


def cmd_radial(cfg: ProblemConfig, out: Path, args) -> int:
    p = _radial_problem(cfg)
    rad = cfg.radial
    kw = {
        "interval": rad.get("interval", (-1e3, 1e3)),
        "grid": rad.get("grid", 100_001),
        "tangential": rad.get("tangential", True),
    }
    perturbed = p.lam is not None
    roots = radial_small_roots(p, **kw) if perturbed else radial_roots(p, **kw)
    radii = rad.get("radii", (p.r, 0.5 * (p.r + p.R), p.R))
    samples = [
        {"t_inner": t, "radii": list(radii), "u_outer": [float(radial_outer_value(p, t, q)) for q in radii]}
        for t in roots
    ]
    payload = {
        "dimension": p.n,
        "R": p.R,
        "r": p.r,
        "t_outer": p.t_outer,
        "perturbed": perturbed,
        "eps": p.eps,
        "roots": roots,
        "samples": samples,
    }
    _write_json(out / "radial.json", payload)
    print(_dumps({"roots": roots}, indent=None))
    return EXIT_OK


COMMANDS = {"verify": cmd_verify, "solve": cmd_solve, "continue": cmd_continue, "radial": cmd_radial}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="annulus-bem", description="Nonlinear transmission problems on planar annuli.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, type=Path, help="TOML problem file")
        sp.add_argument("--out", type=Path, default=Path("."), help="output directory (created if missing)")
        sp.add_argument("--nodes", type=int, default=None, help="override the node count on both boundaries")
        sp.add_argument("--seed-branch", default=None, help="zero | radial:T (solve only)")
    return ap


def _setup_log(path: Path) -> logging.Handler:
    h = logging.FileHandler(path, mode="w", encoding="utf-8")
    h.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("annulus_bem")
    root.setLevel(logging.INFO)
    root.addHandler(h)
    return h


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        args.out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"cannot create output directory: {exc}", file=sys.stderr)
        return EXIT_USAGE
    handler = _setup_log(args.out / f"{args.command}.log")
    try:
        log.info("command %s config %s", args.command, args.config)
        cfg = load_config(args.config)
        if args.nodes is not None:
            cfg.with_nodes(args.nodes)
        if args.seed_branch is not None:
            parse_seed(args.seed_branch)
        return COMMANDS[args.command](cfg, args.out, args)
    except (ConfigError, GeometryError) as exc:
        log.error("configuration error: %s", exc)
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CapacityDegeneracyError, NewtonFailure, AssumptionViolation, SingularOperatorError, FloatingPointError, NumericalFailure) as exc:
        log.error("numerical failure: %s", exc)
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    finally:
        logging.getLogger("annulus_bem").removeHandler(handler)
        handler.close()


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

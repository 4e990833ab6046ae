"""Problem configuration files (TOML).

Top-level keys ``mode`` (``general`` | ``perturbed`` | ``radial``) and
``dimension`` (2, or 3 for radial mode) plus the sections below. Every
section and key is optional unless the chosen mode needs it.

    [geometry]        nodes; outer, inner curve tables
                      kind = "circle" (radius) | "ellipse" (a, b) |
                      "trig" (x_cos, x_sin, y_cos, y_sin); center = [x, y]
    [data]            f_outer = number, or a table {mean, cos, sin} giving a
                      Fourier series in the outer curve parameter
    [nonlinearity]    F, G as nonlinearity tables; bracket
    [perturbed]       lam, Phi, eps_start, eps_end, step, checkpoints, eps
    [solver]          theta, tol, max_iter, seed ("zero" | "radial:T"),
                      newton_tol, newton_max_iter
    [radial]          R, r, t_outer, interval, grid, tangential, radii
    [output]          grid, prefix

A nonlinearity table is ``{poly = [c0, c1, ...], modulation = [{power, cos,
sin}, ...], terms = [{fn, coef, scale, shift}, ...]}`` with ascending
polynomial coefficients.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .geometry import Curve, DiscreteBoundary, circle, discretize, ellipse, trig_curve
from .nonlinearity import Modulation, PrimitiveTerm, ScalarBC

__all__ = ["ConfigError", "ProblemConfig", "load_config", "parse_config", "parse_scalar_bc", "parse_seed"]

MODES = ("general", "perturbed", "radial")

_SECTIONS = {
    "geometry": {"nodes", "outer_nodes", "inner_nodes", "outer", "inner"},
    "data": {"f_outer"},
    "nonlinearity": {"F", "G", "bracket"},
    "perturbed": {"lam", "Phi", "eps_start", "eps_end", "step", "checkpoints", "eps"},
    "solver": {"theta", "tol", "max_iter", "seed", "newton_tol", "newton_max_iter"},
    "radial": {"R", "r", "t_outer", "interval", "grid", "tangential", "radii"},
    "output": {"grid", "prefix"},
}


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


def _num(d: dict, key: str, default=None, *, where: str, positive: bool = False, integer: bool = False):
    if key not in d:
        if default is None:
            raise ConfigError(f"{where}: missing required key {key!r}")
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}.{key}: expected a number, got {v!r}")
    if integer and not isinstance(v, int):
        raise ConfigError(f"{where}.{key}: expected an integer, got {v!r}")
    if not math.isfinite(v):
        raise ConfigError(f"{where}.{key}: must be finite")
    if positive and not v > 0:
        raise ConfigError(f"{where}.{key}: must be positive")
    return v


def _floats(v, where: str) -> tuple[float, ...]:
    if not isinstance(v, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
        raise ConfigError(f"{where}: expected a list of numbers")
    return tuple(float(x) for x in v)


def _table(d: dict, key: str, where: str) -> dict:
    v = d.get(key, {})
    if not isinstance(v, dict):
        raise ConfigError(f"{where}.{key}: expected a table")
    return v


def parse_scalar_bc(spec, where: str = "nonlinearity") -> ScalarBC:
    if isinstance(spec, (int, float)) and not isinstance(spec, bool):
        return ScalarBC((float(spec),), label=where)
    if not isinstance(spec, dict):
        raise ConfigError(f"{where}: expected a number or a table")
    unknown = set(spec) - {"poly", "modulation", "terms"}
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    poly = _floats(spec.get("poly", []), f"{where}.poly")
    mods = []
    for i, m in enumerate(spec.get("modulation", [])):
        if not isinstance(m, dict) or "power" not in m:
            raise ConfigError(f"{where}.modulation[{i}]: needs a power")
        mods.append(
            Modulation(int(_num(m, "power", where=f"{where}.modulation[{i}]", integer=True)),
                       _floats(m.get("cos", []), f"{where}.modulation[{i}].cos"),
                       _floats(m.get("sin", []), f"{where}.modulation[{i}].sin"))
        )
    terms = []
    for i, t in enumerate(spec.get("terms", [])):
        w = f"{where}.terms[{i}]"
        if not isinstance(t, dict) or "fn" not in t:
            raise ConfigError(f"{w}: needs fn")
        try:
            terms.append(PrimitiveTerm(str(t["fn"]), float(_num(t, "coef", 1.0, where=w)), float(_num(t, "scale", 1.0, where=w)), float(_num(t, "shift", 0.0, where=w))))
        except ValueError as exc:
            raise ConfigError(f"{w}: {exc}") from exc
    try:
        return ScalarBC(poly, tuple(mods), tuple(terms), label=where)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _parse_curve(spec, where: str) -> Curve:
    if not isinstance(spec, dict):
        raise ConfigError(f"{where}: expected a table")
    kind = spec.get("kind")
    center = _floats(spec.get("center", [0.0, 0.0]), f"{where}.center")
    if len(center) != 2:
        raise ConfigError(f"{where}.center: needs two coordinates")
    try:
        if kind == "circle":
            return circle(float(_num(spec, "radius", where=where, positive=True)), center)
        if kind == "ellipse":
            return ellipse(float(_num(spec, "a", where=where, positive=True)), float(_num(spec, "b", where=where, positive=True)), center)
        if kind == "trig":
            return trig_curve(*(_floats(spec.get(k, []), f"{where}.{k}") for k in ("x_cos", "x_sin", "y_cos", "y_sin")), center=center)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    raise ConfigError(f"{where}.kind: expected circle, ellipse or trig, got {kind!r}")


def parse_seed(text: str) -> tuple[str, float | None]:
    """``"zero"`` or ``"radial:T"``."""
    if text == "zero":
        return "zero", None
    if isinstance(text, str) and text.startswith("radial:"):
        try:
            t = float(text.split(":", 1)[1])
        except ValueError:
            t = float("nan")
        if math.isfinite(t):
            return "radial", t
    raise ConfigError(f"seed must be 'zero' or 'radial:T', got {text!r}")


@dataclass
class ProblemConfig:
    mode: str
    dimension: int
    raw: dict
    outer: Curve | None = None
    inner: Curve | None = None
    outer_nodes: int = 128
    inner_nodes: int = 128
    f_outer: float | dict = 0.0
    F: ScalarBC | None = None
    G: ScalarBC | None = None
    bracket: float = 1e3
    lam: float | None = None
    Phi: ScalarBC | None = None
    eps_start: float = 0.0
    eps_end: float = 1.0
    step: float = 0.05
    checkpoints: tuple[float, ...] = ()
    eps: float | None = None
    theta: float = 0.5
    tol: float = 1e-9
    max_iter: int = 500
    seed: tuple[str, float | None] = ("zero", None)
    newton_tol: float = 1e-10
    newton_max_iter: int = 25
    radial: dict = field(default_factory=dict)
    grid: int = 41
    prefix: str = "solution"

    def boundaries(self) -> tuple[DiscreteBoundary, DiscreteBoundary]:
        if self.outer is None or self.inner is None:
            raise ConfigError("geometry.outer and geometry.inner are required")
        try:
            return discretize(self.outer, self.outer_nodes), discretize(self.inner, self.inner_nodes)
        except ValueError as exc:
            raise ConfigError(f"geometry: {exc}") from exc

    def outer_data(self, outer: DiscreteBoundary) -> np.ndarray:
        f = self.f_outer
        if isinstance(f, dict):
            out = np.full(outer.N, float(f.get("mean", 0.0)))
            for m, a in enumerate(f.get("cos", ()), start=1):
                out += a * np.cos(m * outer.s)
            for m, b in enumerate(f.get("sin", ()), start=1):
                out += b * np.sin(m * outer.s)
            return out
        return np.full(outer.N, float(f))

    def with_nodes(self, n: int) -> "ProblemConfig":
        if n < 8 or n % 2:
            raise ConfigError("--nodes must be an even integer >= 8")
        self.outer_nodes = self.inner_nodes = int(n)
        return self

    def radial_geometry(self) -> tuple[float, float, tuple[float, ...]]:
        """(R, r, centre) from the radial section, else from concentric circles."""
        rad = self.radial
        if "R" in rad and "r" in rad:
            R = float(_num(rad, "R", where="radial", positive=True))
            r = float(_num(rad, "r", where="radial", positive=True))
            return R, r, tuple([0.0] * self.dimension)
        o, i = self.outer, self.inner
        if o is None or i is None or o.kind != "circle" or i.kind != "circle" or o.center != i.center:
            raise ConfigError("radial mode needs radial.R and radial.r or concentric circles in [geometry]")
        return dict(o.params)["radius"], dict(i.params)["radius"], o.center

    def t_outer(self) -> float:
        if "t_outer" in self.radial:
            return float(_num(self.radial, "t_outer", where="radial"))
        f = self.f_outer
        if isinstance(f, dict):
            if any(f.get("cos", ())) or any(f.get("sin", ())):
                raise ConfigError("radial problems need constant outer data")
            return float(f.get("mean", 0.0))
        return float(f)


def parse_config(raw: dict) -> ProblemConfig:
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a table")
    unknown = set(raw) - set(_SECTIONS) - {"mode", "dimension"}
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    for sec, keys in _SECTIONS.items():
        extra = set(_table(raw, sec, "config")) - keys
        if extra:
            raise ConfigError(f"[{sec}]: unknown keys {sorted(extra)}")
    mode = raw.get("mode", "general")
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    dim = raw.get("dimension", 2)
    if dim not in (2, 3) or isinstance(dim, bool):
        raise ConfigError("dimension must be 2 or 3")
    if dim == 3 and mode != "radial":
        raise ConfigError("dimension 3 is only available in radial mode")
    cfg = ProblemConfig(mode=mode, dimension=dim, raw=raw)

    geo = _table(raw, "geometry", "config")
    if "outer" in geo:
        cfg.outer = _parse_curve(geo["outer"], "geometry.outer")
    if "inner" in geo:
        cfg.inner = _parse_curve(geo["inner"], "geometry.inner")
    n = int(_num(geo, "nodes", 128, where="geometry", positive=True, integer=True))
    cfg.outer_nodes = int(_num(geo, "outer_nodes", n, where="geometry", positive=True, integer=True))
    cfg.inner_nodes = int(_num(geo, "inner_nodes", n, where="geometry", positive=True, integer=True))
    if mode != "radial" and (cfg.outer is None or cfg.inner is None):
        raise ConfigError("geometry.outer and geometry.inner are required")

    data = _table(raw, "data", "config")
    f = data.get("f_outer", 0.0)
    if isinstance(f, dict):
        if set(f) - {"mean", "cos", "sin"}:
            raise ConfigError("data.f_outer: keys are mean, cos, sin")
        cfg.f_outer = {"mean": float(_num(f, "mean", 0.0, where="data.f_outer")), "cos": _floats(f.get("cos", []), "data.f_outer.cos"), "sin": _floats(f.get("sin", []), "data.f_outer.sin")}
    else:
        cfg.f_outer = float(_num(data, "f_outer", 0.0, where="data"))

    nl = _table(raw, "nonlinearity", "config")
    if "F" in nl:
        cfg.F = parse_scalar_bc(nl["F"], "nonlinearity.F")
    cfg.G = parse_scalar_bc(nl.get("G", 0.0), "nonlinearity.G")
    cfg.bracket = float(_num(nl, "bracket", 1e3, where="nonlinearity", positive=True))

    pert = _table(raw, "perturbed", "config")
    if pert:
        cfg.lam = float(_num(pert, "lam", where="perturbed", positive=True))
        cfg.Phi = parse_scalar_bc(pert.get("Phi", 0.0), "perturbed.Phi")
        cfg.eps_start = float(_num(pert, "eps_start", 0.0, where="perturbed"))
        cfg.eps_end = float(_num(pert, "eps_end", 1.0, where="perturbed"))
        cfg.step = float(_num(pert, "step", 0.05, where="perturbed", positive=True))
        cfg.checkpoints = _floats(pert.get("checkpoints", []), "perturbed.checkpoints")
        if "eps" in pert:
            cfg.eps = float(_num(pert, "eps", where="perturbed"))
    if mode == "perturbed" and cfg.lam is None:
        raise ConfigError("perturbed mode needs a [perturbed] section with lam")
    if mode == "general" and cfg.F is None:
        raise ConfigError("general mode needs nonlinearity.F")

    sol = _table(raw, "solver", "config")
    cfg.theta = float(_num(sol, "theta", 0.5, where="solver", positive=True))
    if cfg.theta > 1:
        raise ConfigError("solver.theta must lie in (0, 1]")
    cfg.tol = float(_num(sol, "tol", 1e-9, where="solver", positive=True))
    cfg.max_iter = int(_num(sol, "max_iter", 500, where="solver", positive=True, integer=True))
    cfg.seed = parse_seed(sol.get("seed", "zero"))
    cfg.newton_tol = float(_num(sol, "newton_tol", 1e-10, where="solver", positive=True))
    cfg.newton_max_iter = int(_num(sol, "newton_max_iter", 25, where="solver", positive=True, integer=True))

    rad = dict(_table(raw, "radial", "config"))
    if "interval" in rad:
        iv = _floats(rad["interval"], "radial.interval")
        if len(iv) != 2 or not iv[0] < iv[1]:
            raise ConfigError("radial.interval: needs [lo, hi] with lo < hi")
        rad["interval"] = iv
    if "radii" in rad:
        rad["radii"] = _floats(rad["radii"], "radial.radii")
    if "grid" in rad:
        rad["grid"] = int(_num(rad, "grid", where="radial", positive=True, integer=True))
    if "tangential" in rad and not isinstance(rad["tangential"], bool):
        raise ConfigError("radial.tangential must be true or false")
    cfg.radial = rad
    if mode == "radial" and cfg.F is None and cfg.lam is None:
        raise ConfigError("radial mode needs nonlinearity.F or a [perturbed] section")

    out = _table(raw, "output", "config")
    cfg.grid = int(_num(out, "grid", 41, where="output", positive=True, integer=True))
    cfg.prefix = str(out.get("prefix", "solution"))
    if not cfg.prefix or "/" in cfg.prefix:
        raise ConfigError("output.prefix must be a plain file stem")
    return cfg


def load_config(path) -> ProblemConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {p}: {exc}") from exc
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{p}: {exc}") from exc
    return parse_config(raw)

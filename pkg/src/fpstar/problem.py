"""Star-graph control problems: definition, validation, file I/O, normalization.

Each edge ``i`` is the interval ``(0, l_i)`` with ``x = 0`` at the shared
vertex.  The state obeys

    rho_t - D rho_xx - (u rho)_x = f

with continuity and the flux balance ``sum_i (D_i rho_x + u_i rho)(0, t) = 0``
at the vertex and ``rho(l_i, t) = 0`` at the outer ends.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import expr as ex
from .expr import Expr

VERTEX_TOL = 1e-12
MANUFACTURE_TOL = 1e-10
MANUFACTURE_SAMPLES = 50


class ProblemError(ValueError):
    """Base class for problem definition errors."""


class ProblemFileError(ProblemError):
    """The problem file could not be read or decoded."""


class ProblemValidationError(ProblemError):
    """One or more invariants failed; ``failures`` lists every one of them."""

    def __init__(self, failures: Sequence[str]):
        self.failures = list(failures)
        lines = "\n  ".join(self.failures)
        super().__init__(f"{len(self.failures)} problem check(s) failed:\n  {lines}")


class CompatibilityError(ProblemError):
    """A manufactured target violates a vertex or boundary condition."""


@dataclass(frozen=True)
class EdgeSpec:
    """Physical parameters of one edge."""

    l: float = 1.0
    D: float = 1.0
    alpha: float = 1.0
    u_min: float = -1.0
    u_max: float = 1.0

    def check(self, label: str) -> list[str]:
        bad = []
        for name in ("l", "D", "alpha"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val > 0):
                bad.append(f"{label}.{name} must be a positive finite number, got {val!r}")
        for name in ("u_min", "u_max"):
            if not np.isfinite(getattr(self, name)):
                bad.append(f"{label}.{name} must be finite, got {getattr(self, name)!r}")
        if self.u_min > self.u_max:
            bad.append(f"{label}: u_min={self.u_min!r} exceeds u_max={self.u_max!r}")
        return bad


def _exprs(items) -> tuple[Expr, ...]:
    return tuple(ex.as_expr(e) for e in items)


@dataclass(frozen=True)
class StarProblem:
    """Optimal control problem on a star graph with ``N >= 2`` edges.

    ``rho0`` and ``rho_T`` are functions of ``x`` only; ``rho_d`` and ``f``
    may depend on ``(x, t)``.  ``exact_rho``/``exact_u`` are optional
    references used for error reporting.  Construction validates all
    invariants and raises :class:`ProblemValidationError` listing each
    failure.
    """

    edges: tuple[EdgeSpec, ...]
    T: float
    rho0: tuple[Expr, ...]
    rho_d: tuple[Expr, ...]
    rho_T: tuple[Expr, ...]
    f: tuple[Expr, ...]
    exact_rho: Optional[tuple[Expr, ...]] = None
    exact_u: Optional[tuple[Expr, ...]] = None
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "edges", tuple(self.edges))
        for attr in ("rho0", "rho_d", "rho_T", "f", "exact_rho", "exact_u"):
            val = getattr(self, attr)
            if val is not None:
                object.__setattr__(self, attr, _exprs(val))
        failures = validate(self)
        if failures:
            raise ProblemValidationError(failures)

    @property
    def N(self) -> int:
        return len(self.edges)

    @property
    def has_exact(self) -> bool:
        return self.exact_rho is not None and self.exact_u is not None

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "T": self.T,
            "edges": [
                {"l": e.l, "D": e.D, "alpha": e.alpha, "u_min": e.u_min, "u_max": e.u_max}
                for e in self.edges
            ],
            "data": {
                key: [ex.to_string(e) for e in getattr(self, key)]
                for key in ("rho0", "rho_d", "rho_T", "f")
            },
        }
        if self.has_exact:
            out["exact"] = {
                "rho": [ex.to_string(e) for e in self.exact_rho],
                "u": [ex.to_string(e) for e in self.exact_u],
            }
        return out


def validate(p: StarProblem) -> list[str]:
    """Return a list of human-readable invariant failures (empty if valid)."""
    bad: list[str] = []
    if len(p.edges) < 2:
        bad.append(f"edges: need at least 2 edges, got {len(p.edges)}")
    for i, e in enumerate(p.edges):
        if not isinstance(e, EdgeSpec):
            bad.append(f"edges[{i}] is not an EdgeSpec")
            continue
        bad.extend(e.check(f"edges[{i}]"))
    if not (np.isfinite(p.T) and p.T > 0):
        bad.append(f"T must be a positive finite number, got {p.T!r}")
    n = len(p.edges)
    shape_bad: list[str] = []
    lists = [("data.rho0", p.rho0), ("data.rho_d", p.rho_d), ("data.rho_T", p.rho_T), ("data.f", p.f)]
    if p.exact_rho is not None or p.exact_u is not None:
        if p.exact_rho is None or p.exact_u is None:
            shape_bad.append("exact: both rho and u must be given")
        lists += [("exact.rho", p.exact_rho or ()), ("exact.u", p.exact_u or ())]
    for label, items in lists:
        if len(items) != n:
            shape_bad.append(f"{label}: expected {n} expressions, got {len(items)}")
    for label, items in (("data.rho0", p.rho0), ("data.rho_T", p.rho_T)):
        for i, e in enumerate(items):
            if "t" in ex.variables(e):
                shape_bad.append(f"{label}[{i}] must not depend on t")
    bad.extend(shape_bad)
    if shape_bad:
        return bad
    # vertex continuity and outer Dirichlet of the initial and terminal profiles
    for label, items in (("data.rho0", p.rho0), ("data.rho_T", p.rho_T)):
        at0 = [_scalar(e, 0.0, 0.0) for e in items]
        if not all(np.isfinite(at0)):
            bad.append(f"{label}: not finite at the vertex")
        elif max(at0) - min(at0) > VERTEX_TOL:
            bad.append(f"{label}: vertex values differ across edges {at0}")
        for i, (e, edge) in enumerate(zip(items, p.edges)):
            end = _scalar(e, edge.l, 0.0)
            if not (abs(end) <= VERTEX_TOL):
                bad.append(f"{label}[{i}]: value {end!r} at x=l={edge.l} must be 0")
    return bad


def _scalar(e: Expr, x: float, t: float) -> float:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ex.ExprDomainWarning)
        return float(ex.evaluate(e, x, t))


# --- file I/O ---------------------------------------------------------------

def _parse_list(raw, label: str, failures: list) -> list:
    if not isinstance(raw, list):
        failures.append(f"{label}: expected a list of expression strings")
        return []
    out = []
    for i, s in enumerate(raw):
        try:
            out.append(ex.as_expr(s))
        except (ex.ExprSyntaxError, TypeError) as err:
            failures.append(f"{label}[{i}]: {err}")
            out.append(ex.ZERO)
    return out


def problem_from_dict(d: dict) -> StarProblem:
    """Build a problem from the decoded JSON structure (see README for the schema)."""
    failures: list[str] = []
    if not isinstance(d, dict):
        raise ProblemValidationError(["top level must be a JSON object"])
    edges = []
    for i, e in enumerate(d.get("edges") or []):
        if not isinstance(e, dict):
            failures.append(f"edges[{i}]: expected an object")
            continue
        unknown = set(e) - {"l", "D", "alpha", "u_min", "u_max"}
        if unknown:
            failures.append(f"edges[{i}]: unknown keys {sorted(unknown)}")
        try:
            edges.append(EdgeSpec(**{k: float(v) for k, v in e.items() if k not in unknown}))
        except (TypeError, ValueError) as err:
            failures.append(f"edges[{i}]: {err}")
    if "edges" not in d:
        failures.append("edges: missing")
    try:
        T = float(d["T"])
    except KeyError:
        failures.append("T: missing")
        T = 1.0
    except (TypeError, ValueError):
        failures.append(f"T: not a number ({d['T']!r})")
        T = 1.0
    data = d.get("data")
    if not isinstance(data, dict):
        failures.append("data: missing or not an object")
        data = {}
    fields = {}
    for key in ("rho0", "rho_d", "rho_T", "f"):
        if key not in data:
            failures.append(f"data.{key}: missing")
        fields[key] = _parse_list(data.get(key, []), f"data.{key}", failures)
    exact_rho = exact_u = None
    if d.get("exact") is not None:
        exd = d["exact"]
        exact_rho = _parse_list(exd.get("rho", []), "exact.rho", failures)
        exact_u = _parse_list(exd.get("u", []), "exact.u", failures)
    if failures:
        raise ProblemValidationError(failures)
    return StarProblem(edges=tuple(edges), T=T, exact_rho=exact_rho, exact_u=exact_u,
                       name=str(d.get("name", "")), **fields)


def load_problem(path) -> StarProblem:
    """Read and validate a JSON problem file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ProblemFileError(f"cannot read {path}: {err}") from err
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as err:
        raise ProblemFileError(f"{path}: invalid JSON: {err}") from err
    return problem_from_dict(raw)


def save_problem(p: StarProblem, path) -> None:
    Path(path).write_text(json.dumps(p.to_dict(), indent=2) + "\n")


# --- manufactured solutions -------------------------------------------------

def manufacture_from(rho_target, u_target, edges: Sequence[EdgeSpec], T: float,
                     name: str = "") -> StarProblem:
    """Problem whose exact optimal pair is ``(rho_target, u_target)``.

    The forcing is ``f = rho_t - D rho_xx - (u rho)_x`` computed
    symbolically; ``rho_d = rho_target`` so the tracking term vanishes at the
    target.  The target must satisfy vertex continuity, the outer Dirichlet
    condition and the flux balance; these are checked at 50 sample times.
    """
    rho = _exprs(rho_target)
    u = _exprs(u_target)
    edges = tuple(edges)
    if not (len(rho) == len(u) == len(edges)):
        raise ProblemError("rho_target, u_target and edges must have equal length")
    ts = np.linspace(0.0, T, MANUFACTURE_SAMPLES)
    zeros = np.zeros_like(ts)
    at0 = np.array([ex.evaluate(r, zeros, ts) for r in rho])
    cont = np.abs(at0 - at0[0])
    flux = np.zeros_like(ts)
    for r, uu, e in zip(rho, u, edges):
        flux = flux + e.D * ex.evaluate(ex.differentiate(r, "x"), zeros, ts) \
            + ex.evaluate(uu, zeros, ts) * ex.evaluate(r, zeros, ts)
    checks = [("vertex continuity", cont.max(axis=0))]
    for i, (r, e) in enumerate(zip(rho, edges)):
        checks.append((f"outer Dirichlet on edge {i}", np.abs(ex.evaluate(r, np.full_like(ts, e.l), ts))))
    checks.append(("Kirchhoff flux balance", np.abs(flux)))
    for label, err in checks:
        k = int(np.argmax(err))
        if not err[k] <= MANUFACTURE_TOL:
            raise CompatibilityError(f"{label} violated: residual {err[k]:.3e} at t={ts[k]:.6g}")

    forcing = []
    for r, uu, e in zip(rho, u, edges):
        rt = ex.differentiate(r, "t")
        rxx = ex.differentiate(ex.differentiate(r, "x"), "x")
        drift = ex.differentiate(ex.mul(uu, r), "x")
        forcing.append(ex.sub(ex.sub(rt, ex.mul(ex.Const(e.D), rxx)), drift))
    t0 = ex.Const(0.0)
    tT = ex.Const(float(T))
    return StarProblem(
        edges=edges,
        T=float(T),
        rho0=tuple(ex.substitute(r, t=t0) for r in rho),
        rho_d=rho,
        rho_T=tuple(ex.substitute(r, t=tT) for r in rho),
        f=tuple(forcing),
        exact_rho=rho,
        exact_u=u,
        name=name,
    )


def builtin_example(id: int) -> StarProblem:
    """Three-edge benchmark problems with known optimum ``u* = 0``.

    ``id=1``: polynomial targets, unit coefficients.
    ``id=2``: ``exp(-t) sin^2(pi x)`` targets with ``D = 1/(4 pi^2)``.
    """
    if id == 1:
        targets = ["x^2*(1-x)*t", "x^2*(1-x)*t", "x^2*(1-x)^2*t"]
        D = 1.0
    elif id == 2:
        targets = ["exp(-t)*sin(pi*x)^2", "exp(-t)*sin(pi*x)^2", "2*exp(-t)*sin(pi*x)^2"]
        D = 1.0 / (4.0 * math.pi**2)
    else:
        raise ProblemError(f"unknown built-in example id {id!r} (expected 1 or 2)")
    edges = tuple(EdgeSpec(l=1.0, D=D, alpha=1.0, u_min=-1.0, u_max=1.0) for _ in range(3))
    return manufacture_from(targets, ["0"] * 3, edges, 1.0, name=f"example{id}")


def with_bounds(p: StarProblem, u_min: float, u_max: float) -> StarProblem:
    """Copy of ``p`` with every edge's control bounds replaced."""
    edges = tuple(EdgeSpec(e.l, e.D, e.alpha, u_min, u_max) for e in p.edges)
    return StarProblem(edges, p.T, p.rho0, p.rho_d, p.rho_T, p.f, p.exact_rho, p.exact_u, p.name)


# --- normalization ----------------------------------------------------------

def _scaled(e: Expr, l: float, T: float) -> Expr:
    """``e(l*xi, T*s)`` written in the variables ``x -> xi``, ``t -> s``."""
    repl = {}
    if l != 1.0:
        repl["x"] = ex.mul(ex.Const(l), ex.Var("x"))
    if T != 1.0:
        repl["t"] = ex.mul(ex.Const(T), ex.Var("t"))
    return ex.substitute(e, **repl) if repl else e


@dataclass(frozen=True)
class NormalizedEdge:
    """Coefficients and data of one edge on the unit square ``(xi, s)``."""

    a: float          # T D / l^2
    b: float          # T / l, multiplies the drift
    kappa: float      # D / l, vertex flux weight
    l: float
    alpha: float
    u_min: float
    u_max: float
    rho0: Expr
    rho0_x: Expr
    rho0_xx: Expr
    rho_T: Expr
    rho_T_x: Expr
    rho_T_xx: Expr
    rho_d: Expr
    f: Expr           # already multiplied by T
    exact_rho: Optional[Expr] = None
    exact_u: Optional[Expr] = None


@dataclass(frozen=True)
class NormalizedProblem:
    """A :class:`StarProblem` on unit edges and unit horizon.

    Use :meth:`to_physical` / :meth:`to_unit` for coordinate maps.
    """

    source: StarProblem
    edges: tuple[NormalizedEdge, ...] = field(default_factory=tuple)

    @property
    def N(self) -> int:
        return len(self.edges)

    @property
    def T(self) -> float:
        return self.source.T

    def to_physical(self, i: int, xi, s):
        return np.asarray(xi) * self.edges[i].l, np.asarray(s) * self.T

    def to_unit(self, i: int, x, t):
        return np.asarray(x) / self.edges[i].l, np.asarray(t) / self.T

    def array(self, name: str) -> np.ndarray:
        """Per-edge coefficient as an array, e.g. ``array('kappa')``."""
        return np.array([getattr(e, name) for e in self.edges], dtype=float)


def normalize(p: StarProblem) -> NormalizedProblem:
    T = p.T
    out = []
    for i, e in enumerate(p.edges):
        r0 = _scaled(p.rho0[i], e.l, T)
        rT = _scaled(p.rho_T[i], e.l, T)
        r0x = ex.differentiate(r0, "x")
        rTx = ex.differentiate(rT, "x")
        fn = _scaled(p.f[i], e.l, T)
        out.append(NormalizedEdge(
            a=T * e.D / e.l**2,
            b=T / e.l,
            kappa=e.D / e.l,
            l=e.l,
            alpha=e.alpha,
            u_min=e.u_min,
            u_max=e.u_max,
            rho0=r0,
            rho0_x=r0x,
            rho0_xx=ex.differentiate(r0x, "x"),
            rho_T=rT,
            rho_T_x=rTx,
            rho_T_xx=ex.differentiate(rTx, "x"),
            rho_d=_scaled(p.rho_d[i], e.l, T),
            f=fn if T == 1.0 else ex.mul(ex.Const(T), fn),
            exact_rho=_scaled(p.exact_rho[i], e.l, T) if p.has_exact else None,
            exact_u=_scaled(p.exact_u[i], e.l, T) if p.has_exact else None,
        ))
    return NormalizedProblem(source=p, edges=tuple(out))

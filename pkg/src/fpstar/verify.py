"""Property checks used by ``fpstar verify`` and the test-suite.

Each ``measure_*`` function returns raw numbers; the ``suite_*`` functions
compare them against fixed thresholds and return :class:`Check` records.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from . import basis as bs
from . import expr as ex
from . import fdgraph as fd
from .adjoint import adjoint_fields, adjoint_residual, adjoint_solve
from .kkt import (SolverConfig, discrete_cost_gradient, jacobian_blocks, newton_solve,
                  pair_with_direction, reduced_cost, reduced_gradient)
from .problem import builtin_example, normalize, with_bounds
from .state import (Discretization, Grid, control_values, forward_solve, state_fields,
                    state_residual)

SUITES = ("basis", "dsl", "scheme", "adjoint", "kkt", "oracle")


@dataclass
class Check:
    name: str
    ok: bool
    value: float
    limit: float
    detail: str = ""

    def line(self) -> str:
        tag = "PASS" if self.ok else "FAIL"
        extra = f"  {self.detail}" if self.detail else ""
        return f"[{tag}] {self.name}: {self.value:.3e} (limit {self.limit:.1e}){extra}"


def _at_most(name, value, limit, detail=""):
    return Check(name, bool(value <= limit), float(value), float(limit), detail)


def _at_least(name, value, limit, detail=""):
    return Check(name, bool(value >= limit), float(value), float(limit), detail)


def observed_orders(eps, errs) -> np.ndarray:
    """Slopes ``log(e_k / e_{k+1}) / log(eps_k / eps_{k+1})`` of successive pairs."""
    eps = np.asarray(eps, dtype=float)
    errs = np.asarray(errs, dtype=float)
    return np.log(errs[:-1] / errs[1:]) / np.log(eps[:-1] / eps[1:])


# --- basis ------------------------------------------------------------------

def measure_basis(J: int = 3, M: int = 4) -> dict:
    """Max deviations of the basis identities, using cellwise Gauss quadrature."""
    spec = bs.BasisSpec(J, M)
    gx, gw = np.polynomial.legendre.leggauss(M + 4)
    h = 1.0 / spec.cells
    pts = np.concatenate([(n + 0.5 * (gx + 1)) * h for n in range(spec.cells)])
    wts = np.tile(0.5 * h * gw, spec.cells)
    Phi = bs.eval_basis(spec, None, pts)
    gram = Phi.T @ (wts[:, None] * Phi)
    out = {"orthonormality": np.abs(gram - np.eye(spec.K)).max()}
    t = np.linspace(0.0, 1.0, 41)
    left = bs.left_integral(spec, None, t)
    right = bs.right_integral(spec, None, t)
    total = bs.left_integral(spec, None, 1.0)
    out["left_plus_right"] = np.abs(left + right - total[None, :]).max()
    # left integral and double integral against quadrature on [0, t]
    ref1 = np.empty_like(left)
    ref2 = np.empty_like(left)
    for p, tp in enumerate(t):
        if tp == 0.0:
            ref1[p] = ref2[p] = 0.0
            continue
        bps = np.unique(np.concatenate([[0.0], spec.breakpoints()[spec.breakpoints() < tp], [tp]]))
        s1 = np.zeros(spec.K)
        s2 = np.zeros(spec.K)
        for a, b in zip(bps[:-1], bps[1:]):
            xs = a + 0.5 * (gx + 1) * (b - a)
            ws = 0.5 * (b - a) * gw
            vals = bs.eval_basis(spec, None, np.minimum(xs, np.nextafter(1.0, 0.0)))
            s1 += ws @ vals
            s2 += (ws * (tp - xs)) @ vals
        ref1[p] = s1
        ref2[p] = s2
    out["left_integral"] = np.abs(left - ref1).max()
    out["double_integral"] = np.abs(bs.left_double_integral(spec, None, t) - ref2).max()
    # polynomial reproduction: project t^(M-1) and evaluate
    f = pts ** (M - 1)
    coef = Phi.T @ (wts * f)
    tt = np.linspace(0.0, 0.999, 57)
    rep = bs.eval_basis(spec, None, tt) @ coef
    out["poly_reproduction"] = np.abs(rep - tt ** (M - 1)).max() / max(1.0, np.abs(tt ** (M - 1)).max())
    return out


def suite_basis():
    checks = []
    for J, M in ((1, 4), (3, 4), (2, 6)):
        m = measure_basis(J, M)
        for key, lim in (("orthonormality", 1e-12), ("left_plus_right", 1e-12), ("left_integral", 1e-12),
                         ("double_integral", 1e-12), ("poly_reproduction", 1e-13)):
            checks.append(_at_most(f"basis J={J} M={M} {key}", m[key], lim))
    return checks


# --- expression DSL -----------------------------------------------------------

DSL_SAMPLES = ("x^2*(1-x)*t", "exp(-t)*sin(pi*x)^2", "-(x+1)/(2+t)", "sqrt(1+x^2)*cos(3*t)",
               "exp(2+x)-x^(3)", "-2^2*x/(1+t^2)")


def measure_dsl() -> dict:
    xs = np.linspace(0.1, 0.9, 9)[:, None]
    ts = np.linspace(0.1, 0.9, 7)[None, :]
    rt = 0.0
    dv = 0.0
    for s in DSL_SAMPLES:
        e = ex.parse(s)
        e2 = ex.parse(ex.to_string(e))
        rt = max(rt, np.abs(ex.evaluate(e, xs, ts) - ex.evaluate(e2, xs, ts)).max())
        for var in ("x", "t"):
            d = ex.evaluate(ex.differentiate(e, var), xs, ts)
            h = 1e-5
            if var == "x":
                fdv = (ex.evaluate(e, xs + h, ts) - ex.evaluate(e, xs - h, ts)) / (2 * h)
            else:
                fdv = (ex.evaluate(e, xs, ts + h) - ex.evaluate(e, xs, ts - h)) / (2 * h)
            dv = max(dv, (np.abs(d - fdv) / (1 + np.abs(d))).max())
    bad = 0
    for s in ("x^(-1)", "a", "x y", "(x", "sin()", "1.2.3", "x^2^3", "log(x)"):
        try:
            ex.parse(s)
        except ex.ExprSyntaxError:
            continue
        bad += 1
    return {"round_trip": rt, "derivative": dv, "accepted_invalid": bad}


def suite_dsl():
    m = measure_dsl()
    return [_at_most("dsl round trip", m["round_trip"], 0.0),
            _at_most("dsl derivative vs central difference", m["derivative"], 1e-7),
            _at_most("dsl invalid inputs accepted", m["accepted_invalid"], 0)]


# --- wavelet scheme -----------------------------------------------------------

def smooth_control(g: Grid, scale: float = 0.05, seed: int = 0):
    """Coefficient set of a random smooth control of amplitude ``~scale``."""
    rng = np.random.default_rng(seed)
    N = g.N
    K1, K2 = g.disc.shape
    U = np.zeros((N, K1, K2))
    # low modes only: constant and linear pieces on each cell
    U[:, :2, :2] = scale * rng.standard_normal((N, 2, 2))
    return U


def measure_scheme(example: int = 1, J: int = 2) -> dict:
    pn = normalize(builtin_example(example))
    disc = Discretization.make(J, J)
    g = Grid.collocation(pn, disc)
    U0 = np.zeros((pn.N,) + disc.shape)
    A = forward_solve(U0, g)
    rho = state_fields(A, U0, g, with_rate=False).rho
    out = {"exact_reproduction": np.abs(rho - g.exact[0]).max()}
    U = smooth_control(g)
    A = forward_solve(U, g)
    out["state_residual"] = np.abs(state_residual(A, U, g)).max()
    ge = Grid.at(pn, disc, [0.0], np.linspace(0.05, 0.95, 7))
    sf = state_fields(A, U, ge, with_rate=False)
    u0 = control_values(U, ge)[:, 0, :]
    flux = (g.kappa[:, None] * sf.rho_x[:, 0, :] + u0 * sf.rho[:, 0, :]).sum(axis=0)
    out["kirchhoff"] = np.abs(flux).max()
    out["superposition"] = superposition_error(pn, disc, U)
    return out


def superposition_error(pn, disc, U) -> float:
    """Relative defect of ``rho[f1 + f2] - rho[f1] - rho[f2]`` with shared data and control.

    The state is affine in the data, so the defect is measured on the map
    ``f -> rho[f] - rho[0]`` using the built-in data split into two pieces.
    """
    from dataclasses import replace

    def with_scaled_f(c):
        edges = tuple(replace(e, f=ex.mul(ex.Const(c), e.f)) for e in pn.edges)
        return replace(pn, edges=edges)

    def rho_of(p):
        g = Grid.collocation(p, disc)
        return state_fields(forward_solve(U, g), U, g, with_rate=False).rho

    r0 = rho_of(with_scaled_f(0.0))
    r1 = rho_of(with_scaled_f(0.3)) - r0
    r2 = rho_of(with_scaled_f(0.7)) - r0
    r12 = rho_of(with_scaled_f(1.0)) - r0
    return float(np.abs(r12 - r1 - r2).max() / max(np.abs(r12).max(), 1e-300))


def suite_scheme():
    m = measure_scheme()
    return [_at_most("state reproduces Example 1 at J=2", m["exact_reproduction"], 1e-10),
            _at_most("state residual after solve", m["state_residual"], 1e-10),
            _at_most("Kirchhoff balance off the grid", m["kirchhoff"], 1e-10),
            _at_most("forward superposition (relative)", m["superposition"], 1e-9),
            _at_least("wavelet tangent Taylor order", observed_orders(*measure_tangent_wavelet()).min(), 1.8)]


def measure_adjoint(example: int = 1, J: int = 2) -> dict:
    pn = normalize(builtin_example(example))
    disc = Discretization.make(J, J)
    g = Grid.collocation(pn, disc)
    U = smooth_control(g)
    A = forward_solve(U, g)
    B = adjoint_solve(A, U, g)
    ge = Grid.at(pn, disc, [0.0, 1.0], np.linspace(0.05, 0.95, 7))
    af = adjoint_fields(B, A, ge)
    return {
        "residual": np.abs(adjoint_residual(B, A, U, g)).max(),
        "outer_dirichlet": np.abs(af.q[:, 1, :]).max(),
        "continuity": np.abs(af.q[:, 0, :] - af.q[:1, 0, :]).max(),
        "kirchhoff": np.abs((g.kappa[:, None] * af.q_x[:, 0, :]).sum(axis=0)).max(),
    }


def suite_adjoint():
    m = measure_adjoint()
    return [_at_most("adjoint residual after solve", m["residual"], 1e-9),
            _at_most("adjoint outer Dirichlet", m["outer_dirichlet"], 1e-10),
            _at_most("adjoint vertex continuity", m["continuity"], 1e-12),
            _at_most("adjoint Kirchhoff balance", m["kirchhoff"], 1e-10)]


# --- gradient, tangent and VI ----------------------------------------------------

def wavelet_tangent(U, V, g: Grid):
    """Forward state coefficients and the nodal state tangent ``z_V`` at ``U``.

    ``z_V`` combines the coefficient tangent ``dA`` with the direct
    dependence of the vertex value on the control.
    """
    A = forward_solve(U, g)
    shape = A.shape
    J = jacobian_blocks(A, np.zeros(shape), U, g)
    dA = sla.solve(J["AA"], -J["AU"] @ V.ravel()).reshape(shape)
    sf = state_fields(A, U, g, with_rate=False)
    rho_A = state_fields(A + dA, U, g, with_rate=False).rho - sf.rho  # affine in A
    vs = sf.vertex
    Sv = g.expand_t((-vs.v / vs.den)[:, None] * g.Sm)
    omx = (1.0 - g.xi_nodes)[:, None]
    rho_U = ((omx * Sv) @ V.sum(axis=0).ravel()).reshape(g.shape)
    return A, rho_A + rho_U[None]


def measure_tangent_wavelet(example: int = 1, J: int = 2, eps=(1e-1, 1e-2, 1e-3), seed: int = 1):
    pn = normalize(builtin_example(example))
    g = Grid.collocation(pn, Discretization.make(J, J))
    U = smooth_control(g, seed=seed)
    V = smooth_control(g, scale=1.0, seed=seed + 1)
    A, z = wavelet_tangent(U, V, g)
    rho = state_fields(A, U, g, with_rate=False).rho
    errs = []
    for e in eps:
        Ue = U + e * V
        re = state_fields(forward_solve(Ue, g), Ue, g, with_rate=False).rho
        errs.append(np.abs(re - rho - e * z).max())
    return np.array(eps), np.array(errs)


def measure_tangent_fd(example: int = 2, grid=fd.FdGrid(40, 80), eps=(1e-1, 1e-2, 1e-3), seed: int = 1):
    p = builtin_example(example)
    sys = fd.FdSystem(p, grid)
    rng = np.random.default_rng(seed)
    shape = (p.N, grid.n_x + 1, grid.n_t + 1)
    u = 0.1 * rng.standard_normal(shape)
    v = rng.standard_normal(shape)
    rho = fd.fd_forward(p, u, grid, system=sys)
    z = fd.fd_tangent(p, u, v, rho, grid, system=sys)
    errs = [np.abs(fd.fd_forward(p, u + e * v, grid, system=sys).values - rho.values - e * z.values).max()
            for e in eps]
    return np.array(eps), np.array(errs)


def measure_gradient_wavelet(example: int = 1, J: int = 2, n_dirs: int = 5,
                             eps=(1e-2, 1e-3, 1e-4, 1e-5), seed: int = 2):
    """Discrete-adjoint directional derivatives against central differences.

    Returns ``eps``, the absolute errors (directions x eps), the adjoint
    derivatives and the relative mismatch of the continuous gradient
    ``alpha u - rho q_x`` paired with cell measures.
    """
    pn = normalize(builtin_example(example))
    g = Grid.collocation(pn, Discretization.make(J, J))
    U = smooth_control(g, seed=seed)
    G = discrete_cost_gradient(U, g)
    A = forward_solve(U, g)
    B = adjoint_solve(A, U, g)
    gc = reduced_gradient(A, B, U, g)
    rng = np.random.default_rng(seed + 100)
    errs = np.zeros((n_dirs, len(eps)))
    dirs = np.zeros(n_dirs)
    cont = np.zeros(n_dirs)
    for k in range(n_dirs):
        V = smooth_control(g, scale=1.0, seed=int(rng.integers(1 << 30)))
        dirs[k] = float((G * V).sum())
        cont[k] = pair_with_direction(gc, V, g)
        for j, e in enumerate(eps):
            cd = (reduced_cost(U + e * V, g) - reduced_cost(U - e * V, g)) / (2 * e)
            errs[k, j] = abs(cd - dirs[k])
    mismatch = np.abs(cont - dirs) / np.abs(dirs)
    return np.array(eps), errs, dirs, mismatch


def measure_gradient_fd(example: int = 2, grid=fd.FdGrid(30, 60), n_dirs: int = 5,
                        eps=(1e-1, 1e-2, 1e-3, 1e-4), seed: int = 3):
    p = builtin_example(example)
    sys = fd.FdSystem(p, grid)
    rng = np.random.default_rng(seed)
    shape = (p.N, grid.n_x + 1, grid.n_t + 1)
    u = 0.1 * rng.standard_normal(shape)
    rho = fd.fd_forward(p, u, grid, system=sys)
    lam = fd.fd_adjoint(p, u, rho, grid, system=sys)
    G = fd.fd_gradient(p, u, rho, lam, grid, system=sys)
    errs = np.zeros((n_dirs, len(eps)))
    dirs = np.zeros(n_dirs)
    for k in range(n_dirs):
        v = rng.standard_normal(shape)
        dirs[k] = float((G * v).sum())
        for j, e in enumerate(eps):
            cd = (fd.fd_reduced_cost(p, u + e * v, grid, system=sys)
                  - fd.fd_reduced_cost(p, u - e * v, grid, system=sys)) / (2 * e)
            errs[k, j] = abs(cd - dirs[k])
    return np.array(eps), errs, dirs


def gradient_summary(eps, errs, dirs):
    """Per-direction best relative error and the order over the pre-rounding range.

    The order is taken from the first two ``eps`` values, where the ``eps^2``
    truncation term dominates; at smaller ``eps`` the agreement is limited by
    rounding in the cost differences.
    """
    rel = errs / np.abs(dirs)[:, None]
    best = rel.min(axis=1)
    orders = np.array([observed_orders(eps[:2], e[:2])[0] if e[1] > 0 else np.inf for e in errs])
    return best, orders


def vi_sign_margin(sol) -> tuple[float, float]:
    """Minimum of ``(alpha u - rho q_x)(v - u)`` over nodes and ``v`` at both bounds.

    Also returns the fraction of nodes where ``u`` sits on a bound.
    """
    g = sol.grid
    grad = reduced_gradient(sol.A, sol.B, sol.U, g, tol=1.0)
    u = control_values(sol.U, g)
    lo = g.u_min[:, None, None]
    hi = g.u_max[:, None, None]
    margin = min(float((grad * (lo - u)).min()), float((grad * (hi - u)).min()))
    span = np.maximum(hi - lo, 1.0)
    clamped = (np.abs(u - lo) <= 1e-9 * span) | (np.abs(u - hi) <= 1e-9 * span)
    return margin, float(clamped.mean())


def bound_active_example(J: int = 2, bound: float = 1e-3):
    """Example 2 with tight control bounds, solved by Newton."""
    p = with_bounds(builtin_example(2), -bound, bound)
    return newton_solve(p, Discretization.make(J, J), SolverConfig())


def suite_kkt():
    checks = []
    sol, rep = newton_solve(builtin_example(1), Discretization.make(2, 2))
    checks.append(_at_most("Newton Example 1 residual", rep.final_residual, 1e-12))
    m, _ = vi_sign_margin(sol)
    checks.append(_at_least("VI sign margin Example 1", m, -1e-10))
    sol, rep = bound_active_example()
    m, frac = vi_sign_margin(sol)
    checks.append(_at_most("bound-active Example 2 residual", rep.final_residual, 1e-12))
    checks.append(_at_least("bound-active VI sign margin", m, -1e-10))
    checks.append(_at_least("bound-active clamped fraction", frac, 0.10))
    eps, errs, dirs, _ = measure_gradient_wavelet(n_dirs=2)
    best, orders = gradient_summary(eps, errs, dirs)
    checks.append(_at_most("wavelet gradient best relative error", best.max(), 1e-4))
    checks.append(_at_least("wavelet gradient order", orders.min(), 1.8))
    return checks


# --- oracle --------------------------------------------------------------------

def fd_exact_error(example: int = 1, grid=fd.FdGrid(200, 400)) -> float:
    p = builtin_example(example)
    rho = fd.fd_forward(p, None, grid)
    ref = np.array([np.broadcast_to(ex.evaluate(e, rho.x[i][:, None], rho.t[None, :]), rho.values.shape[1:])
                    for i, e in enumerate(p.exact_rho)])
    return float(np.abs(rho.values - ref).max())


def fd_self_convergence(example: int = 2, n_list=(25, 50, 100, 200), n_t: int = 400) -> np.ndarray:
    """Observed spatial orders from successive differences at the coarsest nodes, final time."""
    p = builtin_example(example)
    base = n_list[0]
    vals = []
    for n in n_list:
        r = fd.fd_forward(p, None, fd.FdGrid(n, n_t))
        vals.append(r.values[:, :: n // base, -1])
    diffs = [np.abs(a - b).max() for a, b in zip(vals[:-1], vals[1:])]
    return np.log2(np.array(diffs[:-1]) / np.array(diffs[1:]))


def wavelet_fd_agreement(example: int = 1, J: int = 2, n_x: int = 200, n_t: int = 400) -> float:
    """Max difference of the two forward solvers at ``u = 0`` on a common grid."""
    p = builtin_example(example)
    pn = normalize(p)
    disc = Discretization.make(J, J)
    A = forward_solve(np.zeros((p.N,) + disc.shape), Grid.collocation(pn, disc))
    rho = fd.fd_forward(p, None, fd.FdGrid(n_x, n_t))
    xi = np.linspace(0.0, 1.0, 11)
    ti = np.linspace(0.1, 1.0, 10)
    ge = Grid.at(pn, disc, xi, ti)
    wav = state_fields(A, np.zeros((p.N,) + disc.shape), ge, with_rate=False).rho
    ix = np.round(xi * n_x).astype(int)
    it = np.round(ti * n_t).astype(int)
    return float(np.abs(wav - rho.values[:, ix][:, :, it]).max())


def suite_oracle():
    checks = [_at_most("FD Example 1 error (200 x 400)", fd_exact_error(), 5e-5)]
    checks.append(_at_least("FD spatial order", fd_self_convergence().min(), 1.9))
    eps, errs = measure_tangent_fd()
    checks.append(_at_least("FD tangent Taylor order", observed_orders(eps, errs).min(), 1.8))
    eps, errs, dirs = measure_gradient_fd(n_dirs=2)
    best, orders = gradient_summary(eps, errs, dirs)
    checks.append(_at_most("FD gradient best relative error", best.max(), 1e-4))
    checks.append(_at_least("FD gradient order", orders.min(), 1.8))
    lhs, rhs = fd.duality_sides(builtin_example(2), ["0.1*x", "0.1", "0"],
                                ["sin(pi*x)*t", "x*(1-x)", "cos(x)*t^2"], fd.FdGrid(100, 200))
    checks.append(_at_most("FD tangent/adjoint duality (relative)", abs(lhs - rhs) / abs(lhs), 2e-3))
    bp = fd.bump_problem()
    m = fd.mass_balance(bp, None, fd.FdGrid(100, 200, outer="reflecting"))
    checks.append(_at_most("reflecting mass drift", m.drift / (1 + abs(m.mass[0])), 1e-8))
    m = fd.mass_balance(bp, ["0.3*x", "-0.2", "0.1*t"], fd.FdGrid(100, 200))
    checks.append(_at_most("Dirichlet mass-flux identity", m.identity_error, 1e-6))
    ok, low = fd.positivity_check(bp, None, fd.FdGrid(50, 100, theta=1.0))
    checks.append(_at_least("implicit Euler positivity (min value)", low, -1e-10))
    checks.append(_at_most("wavelet vs FD forward (u = 0)", wavelet_fd_agreement(), 1e-4))
    return checks


def run_suite(name: str):
    """Run one suite or ``all``; returns ``(checks, wall_time)``."""
    names = SUITES if name == "all" else (name,)
    if any(n not in SUITES for n in names):
        raise ValueError(f"unknown suite {name!r}; choose from {SUITES + ('all',)}")
    t0 = time.perf_counter()
    checks = []
    for n in names:
        checks.extend(globals()[f"suite_{n}"]())
    return checks, time.perf_counter() - t0

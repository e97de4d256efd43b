"""Finite-volume / finite-difference solvers on the star graph.

Each edge carries ``n_x + 1`` uniform nodes; node 0 of every edge is the
shared vertex unknown.  With the edge flux ``F = D rho_x + u rho`` the
semi-discrete balance on the dual cells reads

    M drho/dt = L(u) rho + M f,
    F_{j+1/2} = D (rho_{j+1} - rho_j) / h + (u_{j+1} rho_{j+1} + u_j rho_j) / 2,

where ``M`` holds the cell sizes (``h`` inside an edge, ``sum_i h_i / 2`` at
the vertex, ``h / 2`` at a reflecting end).  Away from the boundary this
is the usual centred scheme; at the vertex the half cells of all edges
add up to the flux balance.  Outer ends are either Dirichlet (``rho = 0``,
eliminated) or reflecting (zero flux).  Time stepping is the theta-scheme.

The tangent and adjoint solvers are the exact linearization and the exact
transpose of this time-stepping scheme, so the adjoint gradient is the true
derivative of the discrete cost :func:`fd_cost`.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import expr as ex
from .problem import StarProblem

OUTER_CONDITIONS = ("dirichlet", "reflecting")


class FdError(RuntimeError):
    """Failure of a finite-difference solve."""


@dataclass(frozen=True)
class FdGrid:
    """Uniform space-time grid shared by all edges (``n_x`` intervals per edge)."""

    n_x: int = 100
    n_t: int = 200
    theta: float = 0.5
    outer: str = "dirichlet"

    def __post_init__(self):
        if self.n_x < 4 or self.n_t < 2:
            raise ValueError(f"need n_x >= 4 and n_t >= 2, got n_x={self.n_x}, n_t={self.n_t}")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must lie in [0, 1], got {self.theta}")
        if self.outer not in OUTER_CONDITIONS:
            raise ValueError(f"outer must be one of {OUTER_CONDITIONS}")


@dataclass
class FdField:
    """Nodal values per edge, shape ``(N, n_x + 1, n_t + 1)``; ``x`` and ``t`` are physical."""

    values: np.ndarray
    x: np.ndarray  # (N, n_x + 1)
    t: np.ndarray  # (n_t + 1,)

    def at_time(self, n: int) -> np.ndarray:
        return self.values[:, :, n]


class FdSystem:
    """Sparse operators of the scheme for one problem and grid."""

    def __init__(self, problem: StarProblem, grid: FdGrid):
        self.problem = problem
        self.grid = grid
        N = problem.N
        nx = grid.n_x
        self.N = N
        self.h = np.array([e.l / nx for e in problem.edges])
        self.D = np.array([e.D for e in problem.edges])
        self.alpha = np.array([e.alpha for e in problem.edges])
        self.x = np.array([np.linspace(0.0, e.l, nx + 1) for e in problem.edges])
        self.t = np.linspace(0.0, problem.T, grid.n_t + 1)
        self.dt = problem.T / grid.n_t
        reflecting = grid.outer == "reflecting"
        per_edge = nx if reflecting else nx - 1  # unknowns besides the vertex
        self.n = 1 + N * per_edge
        # prolongation P: global unknowns -> extended per-edge nodes (N*(nx+1))
        rows, cols = [], []
        for i in range(N):
            base = i * (nx + 1)
            rows.append(base)
            cols.append(0)
            for j in range(1, nx + 1):
                if j == nx and not reflecting:
                    continue
                rows.append(base + j)
                cols.append(1 + i * per_edge + (j - 1))
        n_ext = N * (nx + 1)
        self.n_ext = n_ext
        self.P = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n_ext, self.n))
        # extended cell sizes (per-edge trapezoid weights)
        w = np.ones((N, nx + 1)) * self.h[:, None]
        w[:, 0] *= 0.5
        w[:, -1] *= 0.5
        self.w_ext = w.ravel()
        self.M = (self.P.T @ sp.diags(self.w_ext) @ self.P).tocsc()
        self.m_diag = self.M.diagonal()
        # face operators on extended nodes: node j receives +F_{j+1/2} - F_{j-1/2}
        Sd, Sa = [], []
        for i in range(N):
            nn = nx + 1
            face = sp.diags([-np.ones(nx), np.ones(nx)], [0, 1], shape=(nx, nn))  # rho_{j+1} - rho_j
            avg = sp.diags([0.5 * np.ones(nx), 0.5 * np.ones(nx)], [0, 1], shape=(nx, nn))
            div = sp.diags([np.ones(nx), -np.ones(nx)], [0, -1], shape=(nn, nx))  # +F_{j+1/2} - F_{j-1/2}
            Sd.append(div @ face * (self.D[i] / self.h[i]))
            Sa.append(div @ avg)
        self.S_diff = sp.block_diag(Sd, format="csr")
        self.S_drift = sp.block_diag(Sa, format="csr")
        self.L_diff = (self.P.T @ self.S_diff @ self.P).tocsr()
        self.PT = self.P.T.tocsr()

    # --- helpers -----------------------------------------------------------

    def L(self, u_ext: np.ndarray) -> sp.csr_matrix:
        """Spatial operator for extended nodal control values ``u_ext``."""
        return (self.L_diff + self.PT @ self.S_drift @ sp.diags(u_ext) @ self.P).tocsr()

    def drift_apply(self, v_ext: np.ndarray, rho: np.ndarray) -> np.ndarray:
        """``L_drift(v) rho``: derivative of ``L(u) rho`` in the direction ``v``."""
        return self.PT @ (self.S_drift @ (v_ext * (self.P @ rho)))

    def drift_adjoint(self, rho: np.ndarray, lam: np.ndarray) -> np.ndarray:
        """Gradient of ``lam . L_drift(v) rho`` with respect to ``v_ext``."""
        return (self.P @ rho) * (self.S_drift.T @ (self.P @ lam))

    def extend(self, field: np.ndarray) -> np.ndarray:
        """(N, n_x+1) nodal array -> extended vector."""
        return np.asarray(field, dtype=float).reshape(self.n_ext)

    def restrict(self, field_ext: np.ndarray) -> np.ndarray:
        """Extended vector -> global unknowns (vertex taken from edge 0)."""
        out = np.zeros(self.n)
        coo = self.P.tocoo()
        out[coo.col] = field_ext[coo.row]
        out[0] = field_ext[0]
        return out

    def to_field(self, rhos: Sequence[np.ndarray]) -> FdField:
        vals = np.stack([(self.P @ r).reshape(self.N, -1) for r in rhos], axis=-1)
        return FdField(vals, self.x, self.t)


def _sample(exprs, x: np.ndarray, t) -> np.ndarray:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ex.ExprDomainWarning)
        out = []
        for e, xi in zip(exprs, x):
            shape = np.broadcast_shapes(np.shape(xi), np.shape(t))
            out.append(np.broadcast_to(ex.evaluate(e, xi, t), shape))
        return np.array(out, dtype=float)


def control_samples(sys: FdSystem, u) -> np.ndarray:
    """Control values at every node and time level, shape (N, n_x+1, n_t+1).

    ``u`` may be ``None`` (zero), an array of that shape, a sequence of
    DSL expressions, or a callable ``u(i, x, t)``.
    """
    shape = (sys.N, sys.grid.n_x + 1, sys.grid.n_t + 1)
    if u is None:
        return np.zeros(shape)
    if isinstance(u, FdField):
        u = u.values
    if isinstance(u, np.ndarray):
        if u.shape != shape:
            raise ValueError(f"control array has shape {u.shape}, expected {shape}")
        return u.astype(float)
    X = sys.x[:, :, None]
    T = sys.t[None, None, :]
    if callable(u):
        return np.array([np.broadcast_to(u(i, X[i], T[0]), shape[1:]) for i in range(sys.N)], dtype=float)
    exprs = [ex.as_expr(e) for e in u]
    return np.array([np.broadcast_to(ex.evaluate(e, X[i], T[0]), shape[1:])
                     for i, e in enumerate(exprs)], dtype=float)


def _splu(A, what):
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", sp.linalg.MatrixRankWarning)
            return spla.splu(A.tocsc())
    except (RuntimeError, sp.linalg.MatrixRankWarning) as err:
        raise FdError(f"{what}: singular system ({err})") from None


def _march(sys: FdSystem, U: np.ndarray, rho0: np.ndarray, source: Callable[[int], np.ndarray]):
    """theta-scheme with per-level source ``source(n)`` already multiplied by ``M``."""
    th = sys.grid.theta
    dt = sys.dt
    rhos = [rho0]
    Ls = [sys.L(U[:, :, 0].ravel())]
    g_prev = source(0)
    for n in range(sys.grid.n_t):
        L_next = sys.L(U[:, :, n + 1].ravel())
        g_next = source(n + 1)
        lhs = sys.M - th * dt * L_next
        rhs = sys.M @ rhos[-1] + (1.0 - th) * dt * (Ls[-1] @ rhos[-1]) + dt * (th * g_next + (1.0 - th) * g_prev)
        rhos.append(_splu(lhs, f"time step {n + 1}").solve(rhs))
        Ls.append(L_next)
        g_prev = g_next
    return rhos, Ls


def _initial(sys: FdSystem) -> np.ndarray:
    r0 = _sample(sys.problem.rho0, sys.x, 0.0)
    if sys.grid.outer == "dirichlet":
        r0[:, -1] = 0.0
    return sys.restrict(r0.ravel())


def _forcing(sys: FdSystem):
    f = sys.problem.f
    cache = {}

    def source(n):
        if n not in cache:
            fe = _sample(f, sys.x, sys.t[n]).ravel()
            cache[n] = sys.PT @ (sys.w_ext * fe)
        return cache[n]

    return source


def fd_forward(problem: StarProblem, u=None, grid: FdGrid = FdGrid(), *, system: FdSystem | None = None,
               rho0: np.ndarray | None = None, forcing: bool = True) -> FdField:
    """Solve the state equation for the control ``u``."""
    sys = system or FdSystem(problem, grid)
    U = control_samples(sys, u)
    r0 = _initial(sys) if rho0 is None else rho0
    source = _forcing(sys) if forcing else (lambda n: np.zeros(sys.n))
    rhos, _ = _march(sys, U, r0, source)
    return sys.to_field(rhos)


def _global_levels(sys: FdSystem, field: FdField) -> list[np.ndarray]:
    return [sys.restrict(field.values[:, :, n].ravel()) for n in range(field.values.shape[2])]


def fd_tangent(problem: StarProblem, u, v, rho: FdField, grid: FdGrid = FdGrid(), *,
               system: FdSystem | None = None) -> FdField:
    """Derivative of the discrete control-to-state map at ``u`` in direction ``v``."""
    sys = system or FdSystem(problem, grid)
    U = control_samples(sys, u)
    V = control_samples(sys, v)
    levels = _global_levels(sys, rho)

    def source(n):
        # (M - th dt L) z' = ... + dt * L_drift(v) rho; dividing by dt matches _march's scaling
        return sys.drift_apply(V[:, :, n].ravel(), levels[n])

    zs, _ = _march(sys, U, np.zeros(sys.n), source)
    return sys.to_field(zs)


def time_weights(sys: FdSystem) -> np.ndarray:
    w = np.ones(sys.grid.n_t + 1)
    w[0] = w[-1] = 0.5
    return w


def fd_cost(problem: StarProblem, u, rho: FdField, grid: FdGrid = FdGrid(), *,
            system: FdSystem | None = None) -> float:
    """Trapezoid-rule tracking cost of the discrete state."""
    sys = system or FdSystem(problem, grid)
    U = control_samples(sys, u)
    wt = time_weights(sys) * sys.dt
    rd = _sample(problem.rho_d, sys.x[:, :, None], sys.t[None, :])
    rT = _sample(problem.rho_T, sys.x, 0.0)
    W = sys.w_ext.reshape(sys.N, -1)
    track = ((rho.values - rd) ** 2 * W[:, :, None]).sum(axis=(0, 1))
    ctrl = ((U**2) * (W * sys.alpha[:, None])[:, :, None]).sum(axis=(0, 1))
    term = ((rho.values[:, :, -1] - rT) ** 2 * W).sum()
    return float(0.5 * (np.dot(wt, track + ctrl) + term))


def fd_adjoint(problem: StarProblem, u, rho: FdField, grid: FdGrid = FdGrid(), *,
               system: FdSystem | None = None) -> FdField:
    """Discrete adjoint of the theta-scheme for :func:`fd_cost`.

    Level ``n`` of the result approximates ``q(., t_n)``; the terminal level
    equals ``rho(., T) - rho_T`` up to ``O(dt)``.
    """
    sys = system or FdSystem(problem, grid)
    U = control_samples(sys, u)
    th = sys.grid.theta
    dt = sys.dt
    wt = time_weights(sys)
    Nt = sys.grid.n_t
    rd = _sample(problem.rho_d, sys.x[:, :, None], sys.t[None, :])
    rT = _sample(problem.rho_T, sys.x, 0.0)

    def e(n):
        return sys.PT @ (sys.w_ext * (rho.values[:, :, n] - rd[:, :, n]).ravel())

    Ls = [sys.L(U[:, :, n].ravel()) for n in range(Nt + 1)]
    lam = [None] * (Nt + 1)
    rhs = sys.PT @ (sys.w_ext * (rho.values[:, :, Nt] - rT).ravel()) + dt * wt[Nt] * e(Nt)
    lam[Nt] = _splu((sys.M - th * dt * Ls[Nt]).T, "adjoint terminal step").solve(rhs)
    for n in range(Nt - 1, 0, -1):
        rhs = sys.M @ lam[n + 1] + (1.0 - th) * dt * (Ls[n].T @ lam[n + 1]) + dt * wt[n] * e(n)
        lam[n] = _splu((sys.M - th * dt * Ls[n]).T, f"adjoint step {n}").solve(rhs)
    # level 0 is not a free state; extend for output by the explicit part
    lam[0] = sys.M @ lam[1] + (1.0 - th) * dt * (Ls[0].T @ lam[1])
    lam[0] = lam[0] / sys.m_diag
    return sys.to_field(lam)


def fd_gradient(problem: StarProblem, u, rho: FdField, lam: FdField, grid: FdGrid = FdGrid(), *,
                system: FdSystem | None = None) -> np.ndarray:
    """Exact gradient of :func:`fd_cost` with respect to nodal control values.

    Shape (N, n_x+1, n_t+1).  Dividing by the space-time trapezoid weights
    gives the density ``alpha u - rho q_x``, see :func:`fd_gradient_density`.
    """
    sys = system or FdSystem(problem, grid)
    U = control_samples(sys, u)
    th = sys.grid.theta
    dt = sys.dt
    wt = time_weights(sys)
    Nt = sys.grid.n_t
    rl = _global_levels(sys, rho)
    ll = _global_levels(sys, lam)
    out = np.empty_like(U)
    for n in range(Nt + 1):
        mult = np.zeros(sys.n)
        if n >= 1:
            mult += th * ll[n]
        if n <= Nt - 1:
            mult += (1.0 - th) * ll[n + 1]
        g = dt * wt[n] * sys.alpha.repeat(sys.grid.n_x + 1) * sys.w_ext * U[:, :, n].ravel()
        g += dt * sys.drift_adjoint(rl[n], mult)
        out[:, :, n] = g.reshape(sys.N, -1)
    return out


def fd_gradient_density(sys: FdSystem, grad: np.ndarray) -> np.ndarray:
    wt = time_weights(sys) * sys.dt
    return grad / (sys.w_ext.reshape(sys.N, -1)[:, :, None] * wt[None, None, :])


def fd_reduced_cost(problem: StarProblem, u, grid: FdGrid = FdGrid(), *, system: FdSystem | None = None) -> float:
    sys = system or FdSystem(problem, grid)
    rho = fd_forward(problem, u, grid, system=sys)
    return fd_cost(problem, u, rho, grid, system=sys)


# --- mass and positivity ----------------------------------------------------

@dataclass
class MassReport:
    t: np.ndarray
    mass: np.ndarray
    outer_flux: np.ndarray      # outward flux through the outer ends at each level
    accumulated_flux: np.ndarray
    source: np.ndarray          # accumulated forcing
    drift: float                # max |m(t) - m(0)| (reflecting variant)
    identity_error: float       # max |m(t) - m(0) + accumulated outflow - source|


def mass_balance(problem: StarProblem, u=None, grid: FdGrid = FdGrid(), *,
                 system: FdSystem | None = None) -> MassReport:
    """Total mass ``m(t)`` (trapezoid rule) and the outer-boundary flux balance.

    The outflow is the scheme's own flux through the last dual-cell face,
    theta-averaged in time, so ``m(t) - m(0) = -outflow + source`` holds to
    rounding for the Dirichlet variant.  For the reflecting variant the
    outflow is zero and the mass is conserved when ``f = 0``.
    """
    sys = system or FdSystem(problem, grid)
    U = control_samples(sys, u)
    rho = fd_forward(problem, U, grid, system=sys)
    W = sys.w_ext.reshape(sys.N, -1)
    mass = (rho.values * W[:, :, None]).sum(axis=(0, 1))
    nx = grid.n_x
    if grid.outer == "dirichlet":
        r = rho.values
        # face n_x - 1/2 flux F = D (rho_n - rho_{n-1})/h + (u_n rho_n + u_{n-1} rho_{n-1})/2, rho_n = 0
        F = (sys.D[:, None] * (r[:, nx, :] - r[:, nx - 1, :]) / sys.h[:, None]
             + 0.5 * (U[:, nx, :] * r[:, nx, :] + U[:, nx - 1, :] * r[:, nx - 1, :]))
        outflow = -F.sum(axis=0)
    else:
        outflow = np.zeros(grid.n_t + 1)
    src_levels = np.array([_forcing(sys)(n).sum() for n in range(grid.n_t + 1)])
    th = grid.theta
    acc = np.concatenate([[0.0], np.cumsum(sys.dt * (th * outflow[1:] + (1 - th) * outflow[:-1]))])
    src = np.concatenate([[0.0], np.cumsum(sys.dt * (th * src_levels[1:] + (1 - th) * src_levels[:-1]))])
    drift = float(np.abs(mass - mass[0]).max())
    ident = float(np.abs(mass - mass[0] + acc - src).max())
    return MassReport(rho.t, mass, outflow, acc, src, drift, ident)


def positivity_check(problem: StarProblem, u=None, grid: FdGrid = FdGrid(theta=1.0), *,
                     tol: float = 1e-10) -> tuple[bool, float]:
    """Solve and report whether ``min rho >= -tol`` together with the minimum."""
    rho = fd_forward(problem, u, grid)
    low = float(rho.values.min())
    return low >= -tol, low


# --- verification fixtures ----------------------------------------------------

def bump_problem(N: int = 3, width: float = 0.1, D: float = 0.05, T: float = 1.0,
                 sign: float = 1.0) -> StarProblem:
    """Unforced problem with a Gaussian bump centred at the vertex on every edge."""
    from .problem import EdgeSpec

    bump = f"{sign!r}*exp(-x^2/{2.0 * width * width!r})"
    zero = ["0"] * N
    return StarProblem(tuple(EdgeSpec(l=1.0, D=D) for _ in range(N)), T,
                       [bump] * N, zero, zero, zero, name="bump")


def trapezoid_pairing(sys: FdSystem, a: np.ndarray, b: np.ndarray) -> float:
    """Space-time trapezoid integral of ``a * b`` summed over edges."""
    W = sys.w_ext.reshape(sys.N, -1)[:, :, None] * (time_weights(sys) * sys.dt)[None, None, :]
    return float((W * a * b).sum())


def duality_sides(problem: StarProblem, u, v, grid: FdGrid = FdGrid()) -> tuple[float, float]:
    """Both sides of the tangent/adjoint duality for the direction ``v``.

    Left: ``sum int z_v (rho - rho_d) + sum int z_v(T) (rho(T) - rho_T)`` from
    the tangent solve.  Right: ``-sum int rho v q_x`` with ``q_x`` from
    second-order differences of the adjoint.
    """
    sys = FdSystem(problem, grid)
    U = control_samples(sys, u)
    V = control_samples(sys, v)
    rho = fd_forward(problem, U, grid, system=sys)
    z = fd_tangent(problem, U, V, rho, grid, system=sys)
    q = fd_adjoint(problem, U, rho, grid, system=sys)
    rd = _sample(problem.rho_d, sys.x[:, :, None], sys.t[None, :])
    rT = _sample(problem.rho_T, sys.x, 0.0)
    W = sys.w_ext.reshape(sys.N, -1)
    lhs = trapezoid_pairing(sys, z.values, rho.values - rd)
    lhs += float((W * z.values[:, :, -1] * (rho.values[:, :, -1] - rT)).sum())
    qx = np.stack([np.gradient(q.values[i], sys.h[i], axis=0, edge_order=2) for i in range(sys.N)])
    rhs = -trapezoid_pairing(sys, rho.values * V, qx)
    return lhs, rhs
